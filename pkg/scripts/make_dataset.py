"""Build the LUT and render every configured split into the cache."""
import argparse
import logging
import time

from threadpoolctl import threadpool_limits

from nsrd.pipeline.config import load_config
from nsrd.pipeline.data import ensure_dataset, ensure_lut


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/desk.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_config(args.config)
    with threadpool_limits(1):
        t0 = time.perf_counter()
        lut = ensure_lut()
        manifests = ensure_dataset(cfg, lut)
    for split, ms in manifests.items():
        for m in ms:
            print(f"{split:<6}{m.scene_key['name']:<8}{len(m):>4} frames  {m.root}")
    print(f"done in {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
