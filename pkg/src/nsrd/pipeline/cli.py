"""Command-line entry point: ``nsrd <subcommand> [--config cfg.json]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import asdict
from pathlib import Path

from threadpoolctl import threadpool_limits

from ..brdf import BrdfLut, build_lut
from ..demod import demodulate, material_component
from ..imagecore import FrameBundle, read_pfm, read_tensor_blob, tonemap_png, write_pfm
from ..motionfield import hr_motion_fields, motion_mask
from ..neural.network import assemble_network, describe, load_checkpoint
from ..renderer import RenderConfig
from .ablation import TABLE_VARIANTS, VARIANTS, Experiment, format_table, run_ablation_suite
from .config import load_config
from .data import ensure_dataset, ensure_lut, load_manifest, prepare_sequence, render_sequence
from .evaluate import dump_epi, evaluate, write_report
from .infer import bilinear_baseline, infer, write_outputs


def _lut(args) -> BrdfLut:
    if getattr(args, "lut", None):
        return BrdfLut.load(args.lut)
    return ensure_lut()


def cmd_lut(args, cfg):
    if args.out:
        lut = build_lut(args.resolution, args.spp, args.seed)
        lut.save(args.out)
    else:
        lut = ensure_lut(args.resolution, args.spp, args.seed)
    a, b = lut.grid[..., 0], lut.grid[..., 1]
    print(json.dumps({"resolution": lut.resolution, "spp": lut.spp, "A_max": float(a.max()),
                      "B_max": float(b.max()), "sum_max": float((a + b).max())}))


def cmd_render(args, cfg):
    lut = _lut(args)
    if args.scene:
        render = RenderConfig(**{**asdict(cfg.render), "frames": args.frames or cfg.render.frames})
        m = render_sequence(args.scene, args.seed, args.split, render, args.out, lut)
        print(m.root / "manifest.json")
        return
    for split, ms in ensure_dataset(cfg, lut).items():
        for m in ms:
            print(split, m.root / "manifest.json")


def cmd_demod(args, cfg):
    m = load_manifest(args.manifest)
    lut = _lut(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t = args.frame
    radiance = read_pfm(m.path(t, "radiance"))
    planes = {n: read_pfm(m.path(t, n), "depth" if n == "depth" else "scalar")
              for n in ("albedo", "metallic", "roughness", "normal", "depth", "nov")}
    frame = FrameBundle(radiance=radiance, frame_index=t, **planes)
    mat = material_component(frame, lut)
    light = demodulate(radiance, mat)
    write_pfm(mat.f_beta, out / f"material_{t:04d}.pfm")
    write_pfm(light, out / f"lighting_{t:04d}.pfm")
    tonemap_png(light, out / f"lighting_{t:04d}.png")
    print(out)


def cmd_mask(args, cfg):
    m = load_manifest(args.manifest)
    t = args.frame
    tmv, dmv = read_tensor_blob(m.path(t, "tmv")), read_tensor_blob(m.path(t, "dmv"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lr = motion_mask(tmv, dmv, args.tau)
    write_pfm(lr.mask, out / f"mask_lr_{t:04d}.pfm")
    _, _, hr = hr_motion_fields(tmv, dmv, m.render_config.sr_factor, args.tau)
    write_pfm(hr.mask, out / f"mask_hr_{t:04d}.pfm")
    print(json.dumps({"frame": t, "lr_masked": int(lr.data.sum()), "hr_masked": int(hr.data.sum())}))


def cmd_train(args, cfg):
    exp = Experiment(cfg, _lut(args))
    tc = cfg.train.variant(**VARIANTS[args.variant]) if args.variant else cfg.train
    if args.seed is not None:
        tc = tc.variant(seed=args.seed)
    _, out = exp.train_variant(tc, force=args.force)
    print(out / "checkpoint")


def _sequence_for(args, cfg, lut, model_flags):
    m = load_manifest(args.manifest)
    return m, prepare_sequence(m, lut, model_flags.get("demodulation", True),
                               model_flags.get("motion_mask", True), with_radiance=True)


def _flags(index):
    return index.get("extra", {}).get("train", {})


def cmd_infer(args, cfg):
    lut = _lut(args)
    model, index = load_checkpoint(args.checkpoint)
    flags = _flags(index)
    _, seq = _sequence_for(args, cfg, lut, flags)
    sr = infer(model, seq, recurrence=flags.get("recurrence", True))
    print(write_outputs(sr, args.out, previews=not args.no_preview))


def cmd_eval(args, cfg):
    lut = _lut(args)
    m = load_manifest(args.manifest)
    ref = prepare_sequence(m, lut, with_radiance=True)
    if args.baseline:
        sr = bilinear_baseline(ref)
    else:
        model, index = load_checkpoint(args.checkpoint)
        flags = _flags(index)
        seq = prepare_sequence(m, lut, flags.get("demodulation", True), flags.get("motion_mask", True))
        sr = infer(model, seq, recurrence=flags.get("recurrence", True))
    report = evaluate(sr.radiance, ref.gt_radiance, ref.tmv_hr, ref.mask_hr, epi_row=args.epi_row)
    if args.report:
        write_report(report, args.report)
    if args.epi_row is not None and args.epi:
        dump_epi(sr.radiance, args.epi_row, args.epi)
    print(json.dumps({k: report[k] for k in ("frames", "psnr", "ssim", "warping_error")}))


def cmd_ablate(args, cfg):
    exp = Experiment(cfg, _lut(args))
    seeds = tuple(int(s) for s in args.seeds.split(","))
    variants = tuple(args.variants.split(",")) if args.variants else TABLE_VARIANTS
    results = run_ablation_suite(exp, variants, seeds)
    results["bilinear"] = {0: exp.baseline_report()}
    print(format_table(results))


def cmd_describe(args, cfg):
    model = load_checkpoint(args.checkpoint)[0] if args.checkpoint else assemble_network(cfg.network)
    print(describe(model, (args.height, args.width)))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsrd", description=__doc__)
    p.add_argument("--config", help="JSON config with render/network/train/data sections")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (1 = bit-reproducible)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("lut", help="build the split-sum BRDF table")
    s.add_argument("--resolution", type=int, default=512)
    s.add_argument("--spp", type=int, default=1024)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="write here instead of the cache")
    s.set_defaults(func=cmd_lut)

    s = sub.add_parser("render", help="render one scene, or every configured split")
    s.add_argument("--scene", help="demo<k>, static, flat, sliding or pan")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--out", default="render_out")
    s.add_argument("--lut")
    s.set_defaults(func=cmd_render)

    for name, fn, helptext in (("demod", cmd_demod, "write material and lighting of one frame"),
                               ("mask", cmd_mask, "write LR and HR motion masks of one frame")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("manifest")
        s.add_argument("--frame", type=int, default=1)
        s.add_argument("--out", default=f"{name}_out")
        s.add_argument("--lut")
        s.add_argument("--tau", type=float, default=0.1)
        s.set_defaults(func=fn)

    s = sub.add_parser("train", help="train on the configured splits")
    s.add_argument("--variant", choices=sorted(VARIANTS))
    s.add_argument("--seed", type=int)
    s.add_argument("--force", action="store_true")
    s.add_argument("--lut")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="super-resolve a sequence with a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("manifest")
    s.add_argument("--out", default="infer_out")
    s.add_argument("--no-preview", action="store_true")
    s.add_argument("--lut")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="metrics report for a checkpoint or the bilinear baseline")
    s.add_argument("manifest")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--baseline", action="store_true")
    s.add_argument("--report")
    s.add_argument("--epi-row", type=int)
    s.add_argument("--epi", help="PNG path for the EPI image")
    s.add_argument("--lut")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="train/evaluate flag variants and print the table")
    s.add_argument("--seeds", default="0")
    s.add_argument("--variants", help=f"comma list from {sorted(VARIANTS)}")
    s.add_argument("--lut")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("describe", help="per-block parameter and FLOP counts")
    s.add_argument("--checkpoint")
    s.add_argument("--height", type=int, default=270)
    s.add_argument("--width", type=int, default=480)
    s.set_defaults(func=cmd_describe)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args.config)
    limit = threadpool_limits(args.threads) if args.threads else nullcontext()
    with limit:
        args.func(args, cfg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
