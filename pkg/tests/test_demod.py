import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nsrd.brdf import BrdfLut
from nsrd.demod import (EPS_MATERIAL, demodulate, material_component, material_response, remodulate,
                        total_variation)
from nsrd.imagecore import ImagePlane
from nsrd.renderer import render_frame
from nsrd.scene import make_scene


def const_lut(a, b, res=4):
    grid = np.zeros((res, res, 2), np.float32)
    grid[..., 0], grid[..., 1] = a, b
    return BrdfLut(grid)


def planes(c, m, r=0.5, nov=0.5, hw=(2, 2)):
    albedo = np.broadcast_to(np.asarray(c, float)[:, None, None], (3,) + hw)
    return (albedo, np.full(hw, m, float), np.full(hw, r, float), np.full(hw, nov, float),
            np.ones(hw, bool))


def test_dielectric_and_metal_examples():
    lut = const_lut(0.7, 0.1)
    c = (0.5, 0.2, 0.8)
    f = material_response(*planes(c, 0.0), lut)
    assert np.allclose(f[:, 0, 0], np.array(c) + 0.04 * 0.7 + 0.1, atol=1e-6)
    f = material_response(*planes(c, 1.0), lut)
    assert np.allclose(f[:, 0, 0], np.array(c) * 0.7 + 0.1, atol=1e-6)


def test_clamp_and_miss():
    lut = const_lut(0.0, 0.0)
    albedo, m, r, nov, hit = planes((0.0, 0.0, 0.0), 1.0)
    hit[0, 0] = False
    f = material_response(albedo, m, r, nov, hit, lut)
    assert np.all(f[:, 0, 0] == 1.0)
    assert np.all(f[:, 1, 1] == np.float32(EPS_MATERIAL))


def test_lighting_bounded_by_radiance_over_eps():
    lut = const_lut(0.0, 0.0)
    f = material_response(*planes((0.0, 0.0, 0.0), 1.0), lut)
    light = demodulate(np.full((3, 2, 2), 0.5, np.float32), f)
    assert np.allclose(light.data, 0.5 / EPS_MATERIAL)


# subnormals carry too few mantissa bits for a relative bound
@given(arrays(np.float32, (3, 4, 4), elements=st.floats(0, 50, width=32, allow_subnormal=False)),
       arrays(np.float32, (3, 4, 4), elements=st.floats(float(np.float32(EPS_MATERIAL)), 2.0, width=32)))
def test_roundtrip_property(radiance, material):
    back = remodulate(demodulate(radiance, material), material).data.astype(np.float64)
    assert np.allclose(back, radiance, rtol=1e-6, atol=0)


def test_remodulate_clamps_negative_lighting():
    out = remodulate(np.full((3, 1, 1), -2.0, np.float32), np.ones((3, 1, 1), np.float32))
    assert np.all(out.data == 0)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        demodulate(np.zeros((3, 2, 2)), np.ones((3, 2, 3)))


@pytest.fixture(scope="module")
def frames(small_lut):
    out = []
    for k, t in enumerate(range(0, 50, 5)):
        f = render_frame(make_scene(f"demo{k % 4}"), t, (48, 48))
        out.append((f, material_component(f, small_lut)))
    return out


def test_roundtrip_on_rendered_frames(frames):
    assert len(frames) == 10
    for f, mat in frames:
        L = f.radiance.data.astype(np.float64)
        back = remodulate(demodulate(f.radiance, mat), mat).data
        free = mat.data > EPS_MATERIAL
        assert np.all(np.abs(back - L)[free] <= 1e-6 * np.abs(L)[free])


def test_lighting_is_smoother_than_radiance(frames):
    for f, mat in frames:
        assert total_variation(demodulate(f.radiance, mat)) < total_variation(f.radiance)


def test_material_from_bundle_requires_planes(small_lut):
    f = render_frame(make_scene("demo0"), 0, (8, 8))
    mat = material_component(f, small_lut)
    assert mat.f_beta.shape == (3, 8, 8)
    assert np.all(mat.data[:, ~f.hit] == 1.0)
    assert np.all(mat.data >= EPS_MATERIAL)


def test_total_variation_examples():
    assert total_variation(np.zeros((1, 3, 3))) == 0
    ramp = ImagePlane(np.tile(np.arange(4, dtype=np.float32), (1, 4, 1)))
    assert total_variation(ramp) == pytest.approx(1.0)
