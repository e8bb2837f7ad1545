"""Sequence metrics, JSON reports and the bilinear comparison row."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from ..imagecore import tonemap_png
from ..objective import epi_extract, psnr, ssim_rgb, warping_error

REPORT_KEYS = ("frames", "psnr", "ssim", "warping_error", "warping_skipped", "per_frame")


def _finite(x):
    """JSON-safe float: infinities become the string sentinel "inf"."""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


def evaluate(sr, gt, tmv_hr, mask_hr, epi_row=None, skip_first=False) -> dict:
    """Metrics of an SR radiance sequence against ground truth.

    ``sr`` and ``gt`` are (N, 3, H, W); motion data is per frame at HR. PSNR/SSIM average over
    frames (optionally skipping the bootstrap frame); warping error uses frames t >= 1.
    """
    sr, gt = np.asarray(sr), np.asarray(gt)
    if sr.shape != gt.shape:
        raise ValueError(f"sequence shapes differ: {sr.shape} vs {gt.shape}")
    if len(sr) != len(tmv_hr) or len(sr) != len(mask_hr):
        raise ValueError("motion data length does not match the sequence")
    start = 1 if skip_first and len(sr) > 1 else 0
    ps = [psnr(sr[t], gt[t]) for t in range(len(sr))]
    ss = [ssim_rgb(sr[t], gt[t]) for t in range(len(sr))]
    we = warping_error(list(sr), list(tmv_hr), list(mask_hr))
    mean_psnr = float(np.mean(ps[start:])) if not any(map(math.isinf, ps[start:])) else float("inf")
    report = {
        "frames": int(len(sr)),
        "psnr": _finite(mean_psnr),
        "ssim": float(np.mean(ss[start:])),
        "warping_error": we.value,
        "warping_skipped": we.skipped,
        "per_frame": {"psnr": [_finite(p) for p in ps], "ssim": [float(v) for v in ss],
                      "warping_error": we.per_frame},
    }
    if epi_row is not None:
        report["epi_row"] = int(epi_row)
    return report


def validate_report(report: dict):
    missing = [k for k in REPORT_KEYS if k not in report]
    if missing:
        raise ValueError(f"report lacks keys {missing}")
    n = report["frames"]
    for k in ("psnr", "ssim"):
        if len(report["per_frame"][k]) != n:
            raise ValueError(f"per-frame {k} has the wrong length")
    return True


def band_error(sr, gt, band) -> float:
    """Mean squared error restricted to the pixels flagged in ``band`` (N, H, W)."""
    sr, gt, band = np.asarray(sr, np.float64), np.asarray(gt, np.float64), np.asarray(band, bool)
    if not band.any():
        raise ValueError("empty band")
    err = ((sr - gt) ** 2).mean(axis=1)
    return float(err[band].mean())


def write_report(report: dict, path):
    validate_report(report)
    Path(path).write_text(json.dumps(report, indent=1))


def dump_epi(sr, row, path):
    tonemap_png(epi_extract(list(sr), row), path)
