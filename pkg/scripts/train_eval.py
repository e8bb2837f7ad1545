"""Train one variant on the desk dataset and compare it with the bilinear baseline."""
import argparse
import json
import logging
import time

from threadpoolctl import threadpool_limits

from nsrd.pipeline.ablation import VARIANTS, Experiment
from nsrd.pipeline.config import load_config
from nsrd.pipeline.data import ensure_lut


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--variant", default="full", choices=sorted(VARIANTS))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workdir", help="override the config's run directory")
    ap.add_argument("--force", action="store_true", help="retrain even if a run exists")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_config(args.config)
    if args.workdir:
        cfg.workdir = args.workdir
    with threadpool_limits(1):
        t0 = time.perf_counter()
        exp = Experiment(cfg, ensure_lut())
        rep = exp.run_variant(args.variant, args.seed, force=args.force)
        base = exp.baseline_report()
    keys = ("psnr", "ssim", "warping_error", "band_mse")
    print(json.dumps({"variant": args.variant, "seed": args.seed,
                      "model": {k: rep[k] for k in keys}, "bilinear": {k: base[k] for k in keys},
                      "psnr_gain": rep["psnr"] - base["psnr"],
                      "wall_seconds": time.perf_counter() - t0}, indent=1))


if __name__ == "__main__":
    main()
