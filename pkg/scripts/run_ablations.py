"""Every ablation variant on several seeds: the table plus the three expected directions."""
import argparse
import logging

from threadpoolctl import threadpool_limits

from nsrd.pipeline.ablation import Experiment, format_table, run_ablation_suite
from nsrd.pipeline.config import load_config
from nsrd.pipeline.data import ensure_lut


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--seeds", default="0,1")
    ap.add_argument("--workdir")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_config(args.config)
    if args.workdir:
        cfg.workdir = args.workdir
    seeds = tuple(int(s) for s in args.seeds.split(","))
    with threadpool_limits(1):
        exp = Experiment(cfg, ensure_lut())
        res = run_ablation_suite(exp, ("A", "B", "full", "demod_off", "mask_off"), seeds)
    print(format_table({k: res[k] for k in ("A", "B", "full")}))
    for s in seeds:
        r = {k: v[s] for k, v in res.items()}
        print(f"seed {s}: demod_off psnr {r['demod_off']['psnr']:.2f} vs full {r['full']['psnr']:.2f}; "
              f"warping error full {r['full']['warping_error']:.4f} vs B {r['B']['warping_error']:.4f}; "
              f"band mse mask_off {r['mask_off']['band_mse']:.3e} vs full {r['full']['band_mse']:.3e}")


if __name__ == "__main__":
    main()
