"""The frame-recurrent lighting super-resolution network and its hand-written backward pass.

Data flow per frame (LR spatial size h x w, SR factor s):

    lr features   [lighting, normal, depth]                 -> conv, conv  -> 32
    warp features [warped histories, masks, warped G-bufs]  -> gated, conv -> 32
    recurrent     unshuffle(warped previous SR lighting, s) -> conv, conv  -> 32
    concat(96) -> conv 64 -> ConvLSTM(64) -> U-net of RCABs -> conv 3*s*s -> shuffle(s)

With ``global_residual`` the bilinear upsample of the LR lighting is added to the output.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..imagecore import read_tensor_blob, write_tensor_blob
from . import layers as L


@dataclass
class NetworkConfig:
    sr_factor: int = 4
    demod_in: int = 7
    warp_in: int = 16
    demod_ch: int = 32
    warp_ch: int = 32
    recur_ch: int = 32
    recon_ch: int = 64
    kernel: int = 3
    rcab_per_level: int = 2
    levels: int = 2
    ca_reduction: int = 16
    global_residual: bool = True

    @property
    def final_ch(self) -> int:
        return 3 * self.sr_factor * self.sr_factor

    def validate(self):
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.recon_ch // self.ca_reduction < 1:
            raise ValueError("channel-attention reduction leaves no channels")
        if self.sr_factor < 1 or self.levels < 0 or self.rcab_per_level < 0:
            raise ValueError(f"inconsistent network config {self}")


@dataclass
class RecurrentState:
    h: np.ndarray
    c: np.ndarray
    prev_sr: np.ndarray  # HR lighting of the previous frame, (B, 3, H, W)

    @classmethod
    def zeros(cls, batch, lr_hw, cfg: NetworkConfig, dtype=np.float32, prev_sr=None):
        h, w = lr_hw
        s = cfg.sr_factor
        hid = np.zeros((batch, cfg.recon_ch, h, w), dtype)
        if prev_sr is None:
            prev_sr = np.zeros((batch, 3, h * s, w * s), dtype)
        return cls(hid, hid.copy(), prev_sr)


@dataclass
class FrameInputs:
    lr: np.ndarray        # (B, demod_in, h, w); first 3 channels are the LR lighting
    warp: np.ndarray      # (B, warp_in, h, w)
    prev_sr: np.ndarray   # (B, 3, H, W) previous SR lighting already warped to this frame


@dataclass
class Model:
    config: NetworkConfig
    params: dict = field(default_factory=dict)

    def astype(self, dtype) -> "Model":
        return Model(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def num_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def _conv_param(rng, params, name, cin, cout, k, gain=np.sqrt(2.0), scale=1.0):
    std = gain / np.sqrt(cin * k * k) * scale
    params[f"{name}.w"] = (rng.standard_normal((cout, cin, k, k)) * std).astype(np.float32)
    params[f"{name}.b"] = np.zeros(cout, np.float32)


def _rcab_names(level, j):
    return f"unet.enc{level}.rcab{j}"


def assemble_network(config: NetworkConfig, seed=0) -> Model:
    config.validate()
    rng = np.random.default_rng(seed)
    c, k = config, config.kernel
    p = {}
    _conv_param(rng, p, "demod.conv1", c.demod_in, c.demod_ch, k)
    _conv_param(rng, p, "demod.conv2", c.demod_ch, c.demod_ch, k)
    _conv_param(rng, p, "warp.gate", c.warp_in, c.warp_ch, k, gain=1.0)
    _conv_param(rng, p, "warp.feat", c.warp_in, c.warp_ch, k)
    _conv_param(rng, p, "warp.conv2", c.warp_ch, c.warp_ch, k)
    unshuffled = 3 * c.sr_factor * c.sr_factor
    _conv_param(rng, p, "recur.conv1", unshuffled, c.recur_ch, k)
    _conv_param(rng, p, "recur.conv2", c.recur_ch, c.recur_ch, k)
    fused = c.demod_ch + c.warp_ch + c.recur_ch
    _conv_param(rng, p, "lstm.fuse", fused, c.recon_ch, k)
    _conv_param(rng, p, "lstm.gates", 2 * c.recon_ch, 4 * c.recon_ch, k, gain=1.0)
    p["lstm.gates.b"][c.recon_ch:2 * c.recon_ch] = 1.0  # forget-gate bias
    red = c.recon_ch // c.ca_reduction
    for lvl in range(c.levels + 1):
        for j in range(c.rcab_per_level):
            n = _rcab_names(lvl, j)
            _conv_param(rng, p, f"{n}.1", c.recon_ch, c.recon_ch, k)
            _conv_param(rng, p, f"{n}.2", c.recon_ch, c.recon_ch, k, scale=0.1)
            _conv_param(rng, p, f"{n}.ca1", c.recon_ch, red, 1)
            _conv_param(rng, p, f"{n}.ca2", red, c.recon_ch, 1, gain=1.0)
    for lvl in range(c.levels):
        _conv_param(rng, p, f"unet.dec{lvl}", 2 * c.recon_ch, c.recon_ch, k)
    _conv_param(rng, p, "out", c.recon_ch, c.final_ch, k, scale=0.0 if c.global_residual else 0.1)
    return Model(config, p)


def _rcab_params(params, name):
    return {"w1": params[f"{name}.1.w"], "b1": params[f"{name}.1.b"],
            "w2": params[f"{name}.2.w"], "b2": params[f"{name}.2.b"],
            "ca_w1": params[f"{name}.ca1.w"], "ca_b1": params[f"{name}.ca1.b"],
            "ca_w2": params[f"{name}.ca2.w"], "ca_b2": params[f"{name}.ca2.b"]}


_RCAB_GRAD_NAMES = {"w1": "1.w", "b1": "1.b", "w2": "2.w", "b2": "2.b",
                    "ca_w1": "ca1.w", "ca_b1": "ca1.b", "ca_w2": "ca2.w", "ca_b2": "ca2.b"}


def forward(model: Model, inputs: FrameInputs, state: RecurrentState, keep_cache=False):
    """One frame. Returns ``(sr_lighting, new_state, cache)``; ``cache`` is None unless requested.

    The new state's ``prev_sr`` is this frame's (unwarped) output.
    """
    c, p = model.config, model.params
    s = c.sr_factor
    lr, wp = inputs.lr, inputs.warp
    if lr.shape[1] != c.demod_in or wp.shape[1] != c.warp_in:
        raise ValueError(f"inputs carry {lr.shape[1]}/{wp.shape[1]} channels, "
                         f"config expects {c.demod_in}/{c.warp_in}")
    hh, ww = lr.shape[2:]
    if inputs.prev_sr.shape[2:] != (hh * s, ww * s):
        raise ValueError("previous SR lighting does not match LR size times sr_factor")
    if hh % (1 << c.levels) or ww % (1 << c.levels):
        raise ValueError(f"LR size {hh}x{ww} must be divisible by {1 << c.levels}")
    cache = {}
    d1, cache["d1"] = L.conv_act_forward(lr, p["demod.conv1.w"], p["demod.conv1.b"])
    d2, cache["d2"] = L.conv_act_forward(d1, p["demod.conv2.w"], p["demod.conv2.b"])
    g, cache["g"] = L.gated_conv_forward(wp, p["warp.gate.w"], p["warp.gate.b"], p["warp.feat.w"], p["warp.feat.b"])
    w2, cache["w2"] = L.conv_act_forward(g, p["warp.conv2.w"], p["warp.conv2.b"])
    u = L.pixel_unshuffle(inputs.prev_sr.astype(lr.dtype, copy=False), s)
    r1, cache["r1"] = L.conv_act_forward(u, p["recur.conv1.w"], p["recur.conv1.b"])
    r2, cache["r2"] = L.conv_act_forward(r1, p["recur.conv2.w"], p["recur.conv2.b"])
    cat = np.concatenate([d2, w2, r2], axis=1)
    f, cache["fuse"] = L.conv_act_forward(cat, p["lstm.fuse.w"], p["lstm.fuse.b"])
    h2, c2, cache["lstm"] = L.convlstm_forward(f, state.h.astype(lr.dtype, copy=False),
                                               state.c.astype(lr.dtype, copy=False),
                                               p["lstm.gates.w"], p["lstm.gates.b"])
    x = h2
    enc = []
    for lvl in range(c.levels + 1):
        if lvl:
            x, cache[f"pool{lvl}"] = L.maxpool2_forward(x)
        for j in range(c.rcab_per_level):
            x, cache[f"enc{lvl}.{j}"] = L.rcab_forward(x, _rcab_params(p, _rcab_names(lvl, j)))
        enc.append(x)
    y = enc[-1]
    for lvl in reversed(range(c.levels)):
        up = L.bilinear_up2(y)
        y, cache[f"dec{lvl}"] = L.conv_act_forward(np.concatenate([up, enc[lvl]], axis=1),
                                                   p[f"unet.dec{lvl}.w"], p[f"unet.dec{lvl}.b"])
    o, cache["out"] = L.conv2d_forward(y, p["out.w"], p["out.b"])
    sr = L.pixel_shuffle(o, s)
    if c.global_residual:
        sr = sr + L.bilinear_up(lr[:, :3], s)
    new_state = RecurrentState(h2, c2, sr)
    return sr, new_state, (cache if keep_cache else None)


def backward(model: Model, cache, dsr, grads, dh_next=None, dc_next=None):
    """Accumulate parameter gradients of one frame into ``grads``.

    ``dh_next``/``dc_next`` are the gradients flowing back from the following frame's
    ConvLSTM; returns the pair for the preceding frame. The recurrent SR-image input and the
    network inputs are treated as constants.
    """
    c = model.config
    s = c.sr_factor

    def acc(name, dw, db):
        grads[f"{name}.w"] += dw
        grads[f"{name}.b"] += db

    do = L.pixel_unshuffle(dsr, s)
    dy, dw, db = L.conv2d_backward(do, cache["out"])
    acc("out", dw, db)
    ch = c.recon_ch
    denc = [None] * (c.levels + 1)
    for lvl in range(c.levels):
        dcat, dw, db = L.conv_act_backward(dy, cache[f"dec{lvl}"])
        acc(f"unet.dec{lvl}", dw, db)
        denc[lvl] = dcat[:, ch:]
        dy = L.bilinear_up2_backward(dcat[:, :ch])
    denc[c.levels] = dy
    dx = None
    for lvl in reversed(range(c.levels + 1)):
        dx = denc[lvl] if dx is None else dx + denc[lvl]
        for j in reversed(range(c.rcab_per_level)):
            dx, rg = L.rcab_backward(dx, cache[f"enc{lvl}.{j}"])
            name = _rcab_names(lvl, j)
            for key, g in rg.items():
                grads[f"{name}.{_RCAB_GRAD_NAMES[key]}"] += g
        if lvl:
            dx = L.maxpool2_backward(dx, cache[f"pool{lvl}"])
    dh2 = dx if dh_next is None else dx + dh_next
    dc2 = np.zeros_like(dh2) if dc_next is None else dc_next
    df, dh, dc, dw, db = L.convlstm_backward(dh2, dc2, cache["lstm"])
    acc("lstm.gates", dw, db)
    dcat, dw, db = L.conv_act_backward(df, cache["fuse"])
    acc("lstm.fuse", dw, db)
    a, b = c.demod_ch, c.demod_ch + c.warp_ch
    dd2, dw2, dr2 = dcat[:, :a], dcat[:, a:b], dcat[:, b:]
    dr1, dw, db = L.conv_act_backward(dr2, cache["r2"])
    acc("recur.conv2", dw, db)
    _, dw, db = L.conv_act_backward(dr1, cache["r1"])
    acc("recur.conv1", dw, db)
    dg, dw, db = L.conv_act_backward(dw2, cache["w2"])
    acc("warp.conv2", dw, db)
    _, dwg, dbg, dwf, dbf = L.gated_conv_backward(dg, cache["g"])
    acc("warp.gate", dwg, dbg)
    acc("warp.feat", dwf, dbf)
    dd1, dw, db = L.conv_act_backward(dd2, cache["d2"])
    acc("demod.conv2", dw, db)
    _, dw, db = L.conv_act_backward(dd1, cache["d1"])
    acc("demod.conv1", dw, db)
    return dh, dc


# ---------------------------------------------------------------------------
# bookkeeping

BLOCKS = (
    ("Radiance Demodulation", ("demod.",)),
    ("Reliable Warping", ("warp.",)),
    ("First conv", ("recur.",)),
    ("ConvLSTM", ("lstm.",)),
    ("Ushaped-Net", ("unet.", "out.")),
)


def block_parameter_counts(model: Model) -> dict:
    counts = {}
    for label, prefixes in BLOCKS:
        counts[label] = int(sum(v.size for k, v in model.params.items() if k.startswith(prefixes)))
    counts["Total"] = int(sum(counts.values()))
    return counts


def block_macs(model: Model, lr_hw) -> dict:
    """Multiply-accumulates per block for one frame at LR size ``lr_hw``."""
    h, w = lr_hw
    out = {}
    for label, prefixes in BLOCKS:
        total = 0
        for k, v in model.params.items():
            if not k.startswith(prefixes) or not k.endswith(".w"):
                continue
            level = 0
            if ".enc" in k:
                level = int(k.split(".enc")[1][0])
            elif ".dec" in k:
                level = int(k.split(".dec")[1][0])
            px = (h >> level) * (w >> level)
            if ".ca" in k:
                px = 1
            total += v.size * px
        out[label] = int(total)
    out["Total"] = int(sum(out.values()))
    return out


def describe(model: Model, lr_hw=(270, 480)) -> str:
    """Per-block parameter table (K) and GFLOPs (counted as multiply-accumulates)."""
    counts = block_parameter_counts(model)
    macs = block_macs(model, lr_hw)
    lines = [f"{'Block':<24}{'Params (K)':>12}{'GFLOPs':>10}"]
    for label in counts:
        lines.append(f"{label:<24}{counts[label] / 1e3:>12.2f}{macs[label] / 1e9:>10.2f}")
    return "\n".join(lines)


def save_checkpoint(model: Model, path, adam_step=0, extra=None):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    index = {"config": asdict(model.config), "adam_step": int(adam_step), "params": {}}
    for name, arr in model.params.items():
        fname = name.replace("/", "_") + ".nsrd"
        write_tensor_blob(np.ascontiguousarray(arr, dtype=np.float32), out / fname)
        index["params"][name] = {"file": fname, "dims": list(arr.shape)}
    if extra:
        index["extra"] = extra
    (out / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True))
    return out


def load_checkpoint(path):
    root = Path(path)
    index = json.loads((root / "index.json").read_text())
    cfg = NetworkConfig(**index["config"])
    params = {}
    for name, meta in index["params"].items():
        arr = read_tensor_blob(root / meta["file"])
        if list(arr.shape) != meta["dims"]:
            raise ValueError(f"checkpoint tensor {name} has dims {arr.shape}, index says {meta['dims']}")
        params[name] = arr
    return Model(cfg, params), index
