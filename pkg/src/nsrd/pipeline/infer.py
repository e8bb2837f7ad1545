"""Causal frame-recurrent inference over a whole sequence."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..demod import remodulate
from ..imagecore import ImagePlane, tonemap_png, write_pfm
from ..motionfield import warp_array
from ..neural.network import FrameInputs, Model, RecurrentState, forward
from .data import Sequence
from .train import bootstrap_prev


@dataclass
class SrSequence:
    lighting: np.ndarray  # (N, 3, H, W)
    radiance: np.ndarray  # (N, 3, H, W), re-modulated

    def __len__(self):
        return self.lighting.shape[0]


def check_compatible(model: Model, seq: Sequence):
    if model.config.sr_factor != seq.sr_factor:
        raise ValueError(f"checkpoint upsamples x{model.config.sr_factor}, sequence is x{seq.sr_factor}")
    if model.config.demod_in != seq.lr_in.shape[1] or model.config.warp_in != seq.warp_in.shape[1]:
        raise ValueError("checkpoint input channels do not match the prepared sequence")


def infer(model: Model, seq: Sequence, recurrence=True) -> SrSequence:
    """Frame t sees only frames <= t: the state carried forward is all that links frames."""
    check_compatible(model, seq)
    s = seq.sr_factor
    _, _, h, w = seq.lr_in.shape
    state, prev_out = None, None
    lights = []
    for t in range(len(seq)):
        lr = seq.lr_in[t:t + 1]
        boot = bootstrap_prev(lr[:, :3], s)
        if t == 0 or not recurrence:
            state = RecurrentState.zeros(1, (h, w), model.config, lr.dtype, prev_sr=boot)
            prev_in = boot
        else:
            prev_in = warp_array(prev_out, seq.tmv_hr[t:t + 1])
        sr, state, _ = forward(model, FrameInputs(lr, seq.warp_in[t:t + 1], prev_in), state)
        lights.append(sr[0])
        prev_out = sr
    lighting = np.stack(lights)
    radiance = np.stack([remodulate(lighting[t], seq.hr_material[t]).data for t in range(len(seq))])
    return SrSequence(lighting, radiance)


def bilinear_baseline(seq: Sequence) -> SrSequence:
    """Bilinear upsampling of the LR lighting, re-modulated with the HR material."""
    lighting = bootstrap_prev(seq.lr_lighting, seq.sr_factor)
    radiance = np.stack([remodulate(lighting[t], seq.hr_material[t]).data for t in range(len(seq))])
    return SrSequence(lighting, radiance)


def write_outputs(sr: SrSequence, out_dir, previews=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for t in range(len(sr)):
        plane = ImagePlane(sr.radiance[t])
        write_pfm(plane, out / f"sr_{t:04d}.pfm")
        if previews:
            tonemap_png(plane, out / f"sr_{t:04d}.png")
    return out
