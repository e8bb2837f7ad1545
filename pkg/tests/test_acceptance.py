"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Criteria 7-10 train on the cached procedural dataset under ``$NSRD_CACHE``; trained runs are
reused from ``$NSRD_CACHE/acceptance`` on later invocations (criterion 9 always retrains).
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from conftest import numeric_grad, record, rel_err
from nsrd.brdf import build_lut, sample_lut
from nsrd.demod import EPS_MATERIAL, demodulate, material_component, remodulate, total_variation
from nsrd.motionfield import DEFAULT_TAU, backward_warp, dual_mv, motion_mask, traditional_mv
from nsrd.neural import layers as L
from nsrd.neural.network import load_checkpoint
from nsrd.objective import psnr, smooth_l1, ssim, temporal_loss, total_loss
from nsrd.pipeline.ablation import VARIANTS, Experiment
from nsrd.pipeline.config import cache_dir, load_config
from nsrd.pipeline.data import ensure_lut, prepare_sequence
from nsrd.pipeline.infer import infer
from nsrd.pipeline.train import train
from nsrd.renderer import render_frame, surface_correspondence
from nsrd.scene import TEXTURES, make_scene, pan_scene, sliding_occluder_scene, static_scene
from test_brdf import oracle_split_sum

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk.json"
SEEDS = (0, 1)

pytestmark = pytest.mark.slow


# ---------------------------------------------------------------- LUT (1, 2)

@pytest.fixture(scope="module")
def built_lut():
    with threadpool_limits(1):
        t0 = time.perf_counter()
        lut = build_lut(512, 1024, seed=0)
        return lut, time.perf_counter() - t0


def test_c01_lut_matches_oracle(built_lut):
    lut, seconds = built_lut
    nov = np.linspace(0.05, 1.0, 9)
    alpha = np.linspace(0.05, 1.0, 9)
    worst = 0.0
    for n in nov:
        for a in alpha:
            got = np.array(sample_lut(lut, np.array(n), np.array(a)), float).ravel()
            worst = max(worst, float(np.abs(got - oracle_split_sum(n, a)).max()))
    mirror = np.array(sample_lut(lut, np.array(1.0), np.array(1e-3)), float).ravel()
    mirror_err = float(np.abs(mirror - [1.0, 0.0]).max())
    ok = worst <= 1.5e-2 and mirror_err <= 2e-2 and seconds <= 60.0
    assert record(1, ok, f"max |LUT - oracle| {worst:.2e} (<=1.5e-2), mirror {mirror_err:.2e} (<=2e-2), "
                         f"build {seconds:.1f}s (<=60s, 1 core)")


def test_c02_lut_energy(built_lut):
    a, b = built_lut[0].grid[..., 0], built_lut[0].grid[..., 1]
    ok = bool(np.all(a >= 0) and np.all(b >= 0) and np.all(a + b <= 1 + 1e-3))
    assert record(2, ok, f"min A {a.min():.2e}, min B {b.min():.2e}, max A+B {(a + b).max():.6f}")


# ---------------------------------------------------------------- demodulation (3)

def test_c03_demodulation_roundtrip_and_smoothness():
    lut = ensure_lut()
    r = np.random.default_rng(3)
    worst = 0.0
    for _ in range(10):
        f = render_frame(make_scene(f"demo{r.integers(6)}"), int(r.integers(60)), (48, 48))
        mat = material_component(f, lut)
        back = remodulate(demodulate(f.radiance, mat), mat).data
        L_ = f.radiance.data.astype(np.float64)
        free = (mat.data > EPS_MATERIAL) & (L_ > 0)
        worst = max(worst, float(np.max(np.abs(back - L_)[free] / L_[free])))
    scenes = [make_scene(f"demo{k}") for k in range(6)]
    scenes += [pan_scene(texture=t) for t in TEXTURES if t != "flat"] + [sliding_occluder_scene()]
    tv_fail = []
    for s in scenes:
        for t in (0, s.frames // 2):
            f = render_frame(s, t, (48, 48))
            if total_variation(demodulate(f.radiance, material_component(f, lut))) >= total_variation(f.radiance):
                tv_fail.append(f"{s.name}@{t}")
    ok = worst <= 1e-6 and not tv_fail
    assert record(3, ok, f"roundtrip max rel {worst:.1e} (<=1e-6); TV(I)<TV(L) on "
                         f"{2 * len(scenes) - len(tv_fail)}/{2 * len(scenes)} textured frames {tv_fail or ''}")


# ---------------------------------------------------------------- motion mask (4)

def test_c04_motion_mask():
    s = sliding_occluder_scene(pixels_per_frame=2.0)
    ious = []
    for t in range(1, s.frames):
        dm = dual_mv(s, t, (48, 48))
        corr = surface_correspondence(s, t, t - 1, (48, 48))
        oracle = corr.valid & ~corr.visible
        mask = motion_mask(dm.tmv, dm.dmv).data[0] == 1
        ious.append((mask & oracle).sum() / max((mask | oracle).sum(), 1))
    st = static_scene()
    zero = True
    for t in range(1, st.frames):
        d = dual_mv(st, t, (48, 48))
        zero &= bool(np.all(d.tmv.data == 0) and np.all(d.dmv.data == 0)
                     and np.all(motion_mask(d.tmv, d.dmv).data == 0)
                     and np.all(traditional_mv(st, t, (48, 48)).data == 0))
    ok = min(ious) >= 0.95 and zero and DEFAULT_TAU == 0.1
    assert record(4, ok, f"min IoU {min(ious):.3f} over {len(ious)} frames (>=0.95), static all-zero {zero}, "
                         f"tau {DEFAULT_TAU}")


# ---------------------------------------------------------------- gradients (5)

def _layer_error(rng, forward, backward, inputs):
    cache = {}
    out = forward(cache, *inputs)
    R = rng.standard_normal(out.shape)
    grads = backward(cache, R)
    return max(rel_err(g, numeric_grad(lambda: float(np.sum(R * forward({}, *inputs))), x))
               for x, g in zip(inputs, grads))


def _stateless_errors(rng):
    n = rng.standard_normal
    errs = {}

    def conv(c, x, w, b):
        out, c["c"] = L.conv2d_forward(x, w, b)
        return out
    errs["conv"] = _layer_error(rng, conv, lambda c, d: L.conv2d_backward(d, c["c"]),
                                [n((2, 3, 5, 4)), n((4, 3, 3, 3)), n(4)])

    def conv_act(c, x, w, b):
        out, c["c"] = L.conv_act_forward(x, w, b)
        return out
    errs["conv_act"] = _layer_error(rng, conv_act, lambda c, d: L.conv_act_backward(d, c["c"]),
                                    [n((1, 3, 5, 5)), n((2, 3, 3, 3)), n(2)])

    def gated(c, *a):
        out, c["c"] = L.gated_conv_forward(*a)
        return out
    errs["gated_conv"] = _layer_error(rng, gated, lambda c, d: L.gated_conv_backward(d, c["c"]),
                                      [n((2, 3, 4, 4)), n((2, 3, 3, 3)), n(2), n((2, 3, 3, 3)), n(2)])

    keys = list(L.RCAB_KEYS)
    p = {"w1": n((8, 8, 3, 3)) * 0.3, "b1": n(8) * 0.1, "w2": n((8, 8, 3, 3)) * 0.3, "b2": n(8) * 0.1,
         "ca_w1": n((2, 8, 1, 1)), "ca_b1": n(2) * 0.1, "ca_w2": n((8, 2, 1, 1)), "ca_b2": n(8) * 0.1}

    def rcab(c, x, *vals):
        out, c["c"] = L.rcab_forward(x, dict(zip(keys, vals)))
        return out

    def rcab_back(c, d):
        dx, g = L.rcab_backward(d, c["c"])
        return [dx] + [g[k] for k in keys]
    errs["rcab"] = _layer_error(rng, rcab, rcab_back, [n((2, 8, 4, 4))] + [p[k] for k in keys])

    def pool(c, x):
        out, c["c"] = L.maxpool2_forward(x)
        return out
    errs["maxpool"] = _layer_error(rng, pool, lambda c, d: [L.maxpool2_backward(d, c["c"])], [n((2, 3, 4, 6))])
    errs["up2"] = _layer_error(rng, lambda c, x: L.bilinear_up2(x), lambda c, d: [L.bilinear_up2_backward(d)],
                               [n((2, 2, 3, 4))])
    errs["pixel_shuffle"] = _layer_error(rng, lambda c, x: L.pixel_shuffle(x, 2),
                                         lambda c, d: [L.pixel_unshuffle(d, 2)], [n((1, 8, 3, 3))])

    a, b = n((3, 6, 6)) * 2, n((3, 6, 6))
    errs["smooth_l1"] = rel_err(smooth_l1(a, b)[1], numeric_grad(lambda: smooth_l1(a, b)[0], a))
    mask = (rng.random((1, 6, 6)) > 0.5).astype(float)
    errs["temporal"] = rel_err(temporal_loss(b, a, mask)[1], numeric_grad(lambda: temporal_loss(b, a, mask)[0], a))
    errs["step_convlstm"] = _convlstm_error(rng, 1)
    return errs


def _convlstm_error(rng, T):
    n = rng.standard_normal
    xs = [n((1, 3, 4, 4)) for _ in range(T)]
    h0, c0, w, b = n((1, 2, 4, 4)), n((1, 2, 4, 4)), n((8, 5, 3, 3)) * 0.5, n(8) * 0.5
    Rs = [n((1, 2, 4, 4)) for _ in range(T)]

    def run():
        h, c, caches, total = h0, c0, [], 0.0
        for x, R in zip(xs, Rs):
            h, c, cc = L.convlstm_forward(x, h, c, w, b)
            caches.append(cc)
            total += float(np.sum(R * h))
        return total, caches

    _, caches = run()
    dw, db, dh, dc = np.zeros_like(w), np.zeros_like(b), np.zeros_like(h0), np.zeros_like(c0)
    dxs = [None] * T
    for t in reversed(range(T)):
        dxs[t], dh, dc, gw, gb = L.convlstm_backward(Rs[t] + dh, dc, caches[t])
        dw += gw
        db += gb
    f = lambda: run()[0]
    return max(rel_err(g, numeric_grad(f, x)) for x, g in [(w, dw), (b, db), (h0, dh), (c0, dc), (xs[0], dxs[0])])


def _ssim_errors(rng):
    base = rng.random((14, 13))
    a = np.stack([base * (0.5 + 0.2 * c) + 0.1 * rng.random((14, 13)) for c in range(3)])
    b = rng.random((3, 14, 13))
    out = {}
    for lum in (True, False):
        out[f"ssim_{'lum' if lum else 'rgb'}"] = rel_err(ssim(a, b, luminance=lum)[2],
                                                        numeric_grad(lambda: ssim(a, b, luminance=lum)[0], a))
    m = (rng.random((1, 14, 13)) > 0.7).astype(float)
    out["total_loss"] = rel_err(total_loss(b, a, b * 0.9, m).grad,
                                numeric_grad(lambda: total_loss(b, a, b * 0.9, m).total, a))
    return out


def test_c05_gradient_suite():
    rng = np.random.default_rng(5)
    stateless = _stateless_errors(rng)
    stateful = {"unrolled_convlstm": _convlstm_error(rng, 4), **_ssim_errors(rng)}
    bad = [k for k, v in stateless.items() if v > 1e-5] + [k for k, v in stateful.items() if v > 1e-4]
    ok = not bad
    assert record(5, ok, f"worst stateless {max(stateless.values()):.1e} (<=1e-5), worst unrolled/SSIM "
                         f"{max(stateful.values()):.1e} (<=1e-4) over {len(stateless) + len(stateful)} checks {bad or ''}")


# ---------------------------------------------------------------- identities (6)

def test_c06_identities():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 3, 8, 12)).astype(np.float32)
    shuffle = all(L.pixel_shuffle(L.pixel_unshuffle(x, s), s).tobytes() == x.tobytes() for s in (1, 2, 4))
    img = rng.random((3, 16, 20)).astype(np.float32)
    warp = backward_warp(img, np.zeros((2, 16, 20), np.float32)).data.tobytes() == img.tobytes()
    a = rng.random((3, 16, 16))
    same_ssim = ssim(a, a)[0] == 1.0
    same_l1 = smooth_l1(a, a)[0] == 0.0
    p = psnr(np.zeros((3, 4, 4)), np.full((3, 4, 4), 0.1))
    ok = shuffle and warp and same_ssim and same_l1 and abs(p - 20.0) < 1e-9
    assert record(6, ok, f"shuffle {shuffle}, zero warp {warp}, ssim(a,a)=1 {same_ssim}, "
                         f"smooth_l1(a,a)=0 {same_l1}, psnr(mse 0.01) {p:.6f} dB")


# ---------------------------------------------------------------- desk training (7-10)

@pytest.fixture(scope="module")
def desk():
    cfg = load_config(DESK)
    cfg.workdir = str(cache_dir() / "acceptance")
    with threadpool_limits(1):
        yield Experiment(cfg, ensure_lut())


def _eval_seconds(exp, name, seed):
    tc = exp.cfg.train.variant(seed=seed, **VARIANTS[name])
    path = exp.run_dir(tc) / "eval_seconds.json"
    if not path.exists():
        model = load_checkpoint(exp.run_dir(tc) / "checkpoint")[0]
        t0 = time.perf_counter()
        exp.evaluate_model(model, tc)
        path.write_text(json.dumps(time.perf_counter() - t0))
    return json.loads(path.read_text())


def test_c07_desk_training_beats_bilinear(desk):
    m = desk.manifests
    rc = m["train"][0].render_config
    data_ok = len(m["train"]) >= 4 and min(len(x) for x in m["train"]) >= 60 and tuple(rc.lr_size) == (48, 48) \
        and rc.sr_factor == 4
    rep = desk.run_variant("full", 0)
    base = desk.baseline_report()
    gain = rep["psnr"] - base["psnr"]
    tc = desk.cfg.train.variant(seed=0)
    minutes = (json.loads((desk.run_dir(tc) / "timing.json").read_text())["train_seconds"]
               + _eval_seconds(desk, "full", 0)) / 60
    ok = data_ok and gain >= 1.0 and minutes <= 45
    assert record(7, ok, f"PSNR {rep['psnr']:.2f} vs bilinear {base['psnr']:.2f} dB: gain {gain:+.2f} (>=1.0); "
                         f"train+eval {minutes:.1f} min on 1 core (<=45); data ok {data_ok}")


def test_c08_ablation_directions(desk):
    rows, ok = [], True
    for seed in SEEDS:
        r = {v: desk.run_variant(v, seed) for v in ("full", "B", "demod_off", "mask_off")}
        a = r["demod_off"]["psnr"] < r["full"]["psnr"]
        b = r["full"]["warping_error"] < r["B"]["warping_error"]
        c = r["mask_off"]["band_mse"] > r["full"]["band_mse"]
        ok &= a and b and c
        rows.append(f"seed {seed}: (a) psnr {r['demod_off']['psnr']:.2f}<{r['full']['psnr']:.2f} {a}, "
                    f"(b) warp {r['full']['warping_error']:.4f}<{r['B']['warping_error']:.4f} {b}, "
                    f"(c) band {r['mask_off']['band_mse']:.3e}>{r['full']['band_mse']:.3e} {c}")
    assert record(8, ok, "; ".join(rows))


def test_c09_single_thread_determinism(desk, tmp_path):
    tc = desk.cfg.train.variant(seed=0)
    desk.run_variant("full", 0)
    ref_dir = desk.run_dir(tc) / "checkpoint"
    with threadpool_limits(1):
        model = train(desk.sequences("train"), desk.sequences("val"), desk.cfg.network, tc, tmp_path)
    files = sorted(p.name for p in ref_dir.iterdir())
    same_ckpt = files == sorted(p.name for p in (tmp_path / "checkpoint").iterdir()) and all(
        (ref_dir / f).read_bytes() == (tmp_path / "checkpoint" / f).read_bytes() for f in files)
    seq = desk.sequences("test")[0]
    ref_model = load_checkpoint(ref_dir)[0]
    same_sr = infer(ref_model, seq).radiance.tobytes() == infer(model, seq).radiance.tobytes()
    ok = same_ckpt and same_sr
    assert record(9, ok, f"checkpoint bit-identical {same_ckpt} ({len(files)} files), SR outputs bit-identical {same_sr}")


def test_c10_causality(desk):
    tc = desk.cfg.train.variant(seed=0)
    desk.run_variant("full", 0)
    model = load_checkpoint(desk.run_dir(tc) / "checkpoint")[0]
    m = desk.manifests["test"][0]
    full = infer(model, desk.sequences("test")[0]).radiance
    results = []
    for k in (0, 7, 31):
        short = infer(model, prepare_sequence(m.truncated(k + 1), desk.lut)).radiance
        results.append(short.tobytes() == full[:k + 1].tobytes())
    ok = all(results)
    assert record(10, ok, f"prefix outputs bit-identical for k in (0, 7, 31): {results}")
