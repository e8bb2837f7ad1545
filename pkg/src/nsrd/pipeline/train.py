"""Sequence-unrolled training with truncated BPTT, Adam and the halving schedule."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..motionfield import warp_array
from ..neural.layers import bilinear_up
from ..neural.network import (FrameInputs, Model, RecurrentState, assemble_network, backward, forward,
                              save_checkpoint)
from ..neural.optim import Adam, halving_lr
from ..objective import SsimParams, total_loss
from .config import TrainConfig
from .data import Batch, sample_batch

log = logging.getLogger(__name__)


@dataclass
class WindowResult:
    loss: float
    l1: float
    ssim: float
    temporal: float
    outputs: list


def bootstrap_prev(lr_lighting, s):
    """Stand-in for the missing previous SR frame: bilinear upsampling of the LR lighting."""
    return bilinear_up(lr_lighting, s)


def dynamic_range(seqs) -> float:
    """Per-dataset maximum of the training targets; the SSIM loss treats it as full scale."""
    return float(max(s.target.max() for s in seqs))


def unroll(model: Model, batch: Batch, tc: TrainConfig, grads=None,
           ssim_params: SsimParams = SsimParams()) -> WindowResult:
    """Run one window; with ``grads`` also backpropagate through time into it.

    The loss is the mean over frames of total_loss; frame 0 of the window has no temporal term.
    """
    cfg = model.config
    s = cfg.sr_factor
    T, B, _, h, w = batch.lr_in.shape
    weights = tc.weights
    keep = grads is not None
    caches, dsrs, outputs = [], [], []
    state = None
    prev_out = None
    acc = np.zeros(4)
    for k in range(T):
        lr, wp = batch.lr_in[k], batch.warp_in[k]
        boot = bootstrap_prev(lr[:, :3], s)
        if k == 0 or not tc.recurrence:
            state = RecurrentState.zeros(B, (h, w), cfg, lr.dtype, prev_sr=boot)
            prev_in = boot
        else:
            prev_in = warp_array(prev_out, batch.tmv_hr[k])
        sr, state, cache = forward(model, FrameInputs(lr, wp, prev_in), state, keep_cache=keep)
        use_t = tc.temporal_loss and k > 0
        prev_warped = None
        if use_t:
            prev_warped = prev_in if tc.recurrence else warp_array(prev_out, batch.tmv_hr[k])
        parts = total_loss(prev_warped, sr, batch.target[k], batch.mask_hr[k], weights, ssim_params,
                           temporal=use_t)
        acc += (parts.total, parts.l1, parts.ssim, parts.temporal)
        caches.append(cache)
        dsrs.append(parts.grad)
        outputs.append(sr)
        prev_out = sr
    acc /= T
    if keep:
        dh = dc = None
        for k in reversed(range(T)):
            if not tc.recurrence:
                dh = dc = None
            dh, dc = backward(model, caches[k], (dsrs[k] / T).astype(model.params["out.w"].dtype), grads, dh, dc)
    return WindowResult(float(acc[0]), float(acc[1]), float(acc[2]), float(acc[3]), outputs)


def validation_batches(seqs, tc: TrainConfig, seed=12345):
    """Fixed validation windows (same crops every epoch)."""
    if not seqs:
        return []
    rng = np.random.default_rng(seed)
    return [sample_batch(seqs, rng, 1, tc.unroll, tc.crop) for _ in range(tc.val_windows)]


def validation_loss(model, batches, tc, ssim_params: SsimParams = SsimParams()) -> float:
    if not batches:
        return float("nan")
    return float(np.mean([unroll(model, b, tc, ssim_params=ssim_params).loss for b in batches]))


def _dump_nan(out_dir, batch: Batch, step):
    path = Path(out_dir) / f"nan_batch_step{step}.npz"
    np.savez_compressed(path, **batch.arrays())
    return path


def train(train_seqs, val_seqs, net_cfg, tc: TrainConfig, out_dir,
          model: Model | None = None) -> Model:
    """Train and write ``out_dir/checkpoint`` plus ``out_dir/train_log.jsonl``."""
    if not train_seqs:
        raise ValueError("no training sequences")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = model or assemble_network(net_cfg, tc.seed)
    opt = Adam()
    rng = np.random.default_rng(tc.seed)
    val = validation_batches(val_seqs or train_seqs, tc)
    sp = SsimParams(data_range=dynamic_range(train_seqs))
    log_path = out / "train_log.jsonl"
    step = 0
    with log_path.open("w") as logf:
        logf.write(json.dumps({"epoch": -1, "val_loss": validation_loss(model, val, tc, sp)}) + "\n")
        for epoch in range(tc.epochs):
            lr = halving_lr(tc.lr, epoch, tc.lr_period)
            t0 = time.perf_counter()
            losses = []
            for _ in range(tc.steps_per_epoch):
                batch = sample_batch(train_seqs, rng, tc.batch, tc.unroll, tc.crop)
                grads = model.zero_grads()
                res = unroll(model, batch, tc, grads, sp)
                if not np.isfinite(res.loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    dump = _dump_nan(out, batch, step)
                    raise FloatingPointError(f"non-finite loss at step {step}; batch saved to {dump}")
                opt.step(model.params, grads, lr)
                losses.append(res.loss)
                step += 1
            rec = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)),
                   "val_loss": validation_loss(model, val, tc, sp), "seconds": time.perf_counter() - t0}
            logf.write(json.dumps(rec) + "\n")
            logf.flush()
            log.info("epoch %d lr %.2e train %.4f val %.4f", epoch, lr, rec["train_loss"], rec["val_loss"])
    save_checkpoint(model, out / "checkpoint", opt.step_count, {"train": asdict(tc), "ssim_range": sp.data_range})
    return model


def read_log(path) -> list:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]

