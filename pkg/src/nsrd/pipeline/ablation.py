"""Flag-switched training variants evaluated on the held-out split."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict
from pathlib import Path

from ..neural.network import load_checkpoint
from .config import Config
from .data import _digest, disocclusion_oracle, ensure_dataset, prepare_sequence
from .evaluate import band_error, evaluate
from .infer import bilinear_baseline, infer
from .train import train

log = logging.getLogger(__name__)

VARIANTS = {
    "A": {"recurrence": False, "temporal_loss": False},
    "B": {"temporal_loss": False},
    "full": {},
    "demod_off": {"demodulation": False},
    "mask_off": {"motion_mask": False},
}
TABLE_VARIANTS = ("A", "B", "full")


class Experiment:
    """Shared dataset, LUT and prepared sequences for a family of runs."""

    def __init__(self, cfg: Config, lut, manifests=None):
        self.cfg = cfg
        self.lut = lut
        self.manifests = manifests or ensure_dataset(cfg, lut)
        self._prepared = {}

    def sequences(self, split, demodulation=True, motion_mask=True):
        key = (split, demodulation, motion_mask)
        if key not in self._prepared:
            self._prepared[key] = [prepare_sequence(m, self.lut, demodulation, motion_mask,
                                                    with_radiance=split == "test")
                                   for m in self.manifests[split]]
        return self._prepared[key]

    def run_dir(self, tc) -> Path:
        key = _digest({"train": asdict(tc), "network": asdict(self.cfg.network),
                       "render": asdict(self.cfg.render), "data": asdict(self.cfg.data)})
        return Path(self.cfg.workdir) / f"run_{key}"

    def train_variant(self, tc, force=False):
        out = self.run_dir(tc)
        ckpt = out / "checkpoint"
        if (ckpt / "index.json").exists() and not force:
            return load_checkpoint(ckpt)[0], out
        t0 = time.perf_counter()
        model = train(self.sequences("train", tc.demodulation, tc.motion_mask),
                      self.sequences("val", tc.demodulation, tc.motion_mask),
                      self.cfg.network, tc, out)
        (out / "timing.json").write_text(json.dumps({"train_seconds": time.perf_counter() - t0}))
        return model, out

    def evaluate_model(self, model, tc, index=0) -> dict:
        """Report on test sequence ``index``; motion data for the metric always uses the mask."""
        seq = self.sequences("test", tc.demodulation, tc.motion_mask)[index]
        ref = self.sequences("test")[index]
        sr = infer(model, seq, recurrence=tc.recurrence)
        report = evaluate(sr.radiance, ref.gt_radiance, ref.tmv_hr, ref.mask_hr)
        band = disocclusion_oracle(self.manifests["test"][index])
        report["band_mse"] = band_error(sr.radiance[1:], ref.gt_radiance[1:], band[1:])
        return report

    def baseline_report(self, index=0) -> dict:
        ref = self.sequences("test")[index]
        sr = bilinear_baseline(ref)
        report = evaluate(sr.radiance, ref.gt_radiance, ref.tmv_hr, ref.mask_hr)
        band = disocclusion_oracle(self.manifests["test"][index])
        report["band_mse"] = band_error(sr.radiance[1:], ref.gt_radiance[1:], band[1:])
        return report

    def run_variant(self, name, seed=0, force=False) -> dict:
        if name not in VARIANTS:
            raise KeyError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
        tc = self.cfg.train.variant(seed=seed, **VARIANTS[name])
        out = self.run_dir(tc)
        cached = out / "report.json"
        if cached.exists() and not force:
            return json.loads(cached.read_text())
        model, out = self.train_variant(tc, force)
        report = self.evaluate_model(model, tc)
        report["variant"] = name
        report["seed"] = seed
        cached.write_text(json.dumps(report, indent=1))
        return report


def run_ablation_suite(exp: Experiment, variants=TABLE_VARIANTS, seeds=(0,)) -> dict:
    """{variant: {seed: report}} for every requested combination."""
    return {v: {s: exp.run_variant(v, s) for s in seeds} for v in variants}


def format_table(results: dict) -> str:
    """Rows: metric; columns: variants (mean over seeds)."""
    names = list(results)
    head = f"{'':<16}" + "".join(f"{n:>12}" for n in names)
    lines = [head, f"{'recurrence':<16}" + "".join(
        f"{('no' if VARIANTS.get(n, {}).get('recurrence') is False else 'yes'):>12}" for n in names),
        f"{'temporal loss':<16}" + "".join(
        f"{('no' if VARIANTS.get(n, {}).get('temporal_loss') is False else 'yes'):>12}" for n in names)]
    for metric, fmt in (("warping_error", "{:>12.4f}"), ("psnr", "{:>12.2f}"), ("ssim", "{:>12.4f}")):
        row = f"{metric:<16}"
        for n in names:
            vals = [r[metric] for r in results[n].values()]
            row += fmt.format(sum(vals) / len(vals))
        lines.append(row)
    return "\n".join(lines)
