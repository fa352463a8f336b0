"""The implicit scene function: positional encoding, coarse and fine MLPs
emitting density, radiance and semantic logits, with hand-derived reverse-mode
gradients for the fixed architecture.

Both networks share the same topology: a fully-connected ReLU trunk over the
encoded position with one skip re-injection, a density head and a semantic
head branching off before the viewing direction is injected, and a colour
head after it. Density and semantic logits therefore never see the viewing
direction, which makes them view-invariant by construction.

All parameters of both networks live in one flat vector so that gradients can
be checked index-by-index against finite differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from semfield.errors import ConfigError, DataError, DomainError

_MAGIC = b"SFCKPT1\n"


def _expit(z):
    # numerically stable logistic sigmoid
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class EncodingConfig:
    l_pos: int = 10
    l_dir: int = 4
    include_raw_input: bool = True

    def __post_init__(self):
        if self.l_pos < 0 or self.l_dir < 0:
            raise ConfigError("encoding lengths must be >= 0")


def positional_encode(v, num_freqs: int, include_raw: bool = True) -> np.ndarray:
    """[v] ++ [sin(2^k pi v), cos(2^k pi v)] for k = 0..num_freqs-1."""
    v = np.asarray(v)
    parts = [v] if include_raw else []
    for k in range(num_freqs):
        w = (2.0 ** k) * np.pi * v
        parts.append(np.sin(w))
        parts.append(np.cos(w))
    if not parts:
        return v[..., :0]
    return np.concatenate(parts, axis=-1)


@dataclass(frozen=True)
class FieldConfig:
    num_classes: int
    encoding: EncodingConfig = EncodingConfig()
    trunk_width: int = 64
    trunk_depth: int = 4
    skip_at: int = 2
    head_width: int = 32
    density_activation: str = "softplus"  # or "relu"
    dtype: str = "float32"

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.density_activation not in ("softplus", "relu"):
            raise ConfigError("density_activation must be softplus or relu")
        if not (0 < self.skip_at < self.trunk_depth or self.skip_at >= self.trunk_depth):
            raise ConfigError("skip_at must be positive")

    @property
    def in_pos(self) -> int:
        e = self.encoding
        return 3 * ((1 if e.include_raw_input else 0) + 2 * e.l_pos)

    @property
    def in_dir(self) -> int:
        e = self.encoding
        return 3 * ((1 if e.include_raw_input else 0) + 2 * e.l_dir)

    @staticmethod
    def paper_scale(num_classes: int, **kw) -> "FieldConfig":
        return FieldConfig(num_classes=num_classes, trunk_width=256,
                           trunk_depth=8, skip_at=4, head_width=128, **kw)


@dataclass
class FieldSample:
    sigma: float
    rgb: np.ndarray
    logits: np.ndarray


def _layer_shapes(cfg: FieldConfig):
    shapes = []
    for i in range(cfg.trunk_depth):
        if i == 0:
            din = cfg.in_pos
        elif i == cfg.skip_at:
            din = cfg.trunk_width + cfg.in_pos
        else:
            din = cfg.trunk_width
        shapes.append((f"trunk{i}", din, cfg.trunk_width))
    w = cfg.trunk_width
    shapes += [
        ("sigma", w, 1),
        ("sem_hidden", w, cfg.head_width),
        ("sem_out", cfg.head_width, cfg.num_classes),
        ("bottleneck", w, w),
        ("color_hidden", w + cfg.in_dir, cfg.head_width),
        ("color_out", cfg.head_width, 3),
    ]
    return shapes


class FieldParams:
    """Flat parameter vector + shape table for the coarse and fine networks."""

    def __init__(self, config: FieldConfig, flat: np.ndarray | None = None):
        self.config = config
        self.layout: dict[str, tuple[slice, slice, tuple[int, int]]] = {}
        offset = 0
        for net in ("coarse", "fine"):
            for name, din, dout in _layer_shapes(config):
                w_sl = slice(offset, offset + din * dout)
                offset += din * dout
                b_sl = slice(offset, offset + dout)
                offset += dout
                self.layout[f"{net}/{name}"] = (w_sl, b_sl, (din, dout))
        self.size = offset
        dtype = np.dtype(config.dtype)
        if flat is None:
            self.flat = np.zeros(self.size, dtype=dtype)
        else:
            flat = np.asarray(flat, dtype=dtype)
            if flat.shape != (self.size,):
                raise ConfigError(
                    f"parameter vector has {flat.shape}, layout needs ({self.size},)")
            self.flat = flat

    def weight(self, key: str) -> np.ndarray:
        w_sl, _, (din, dout) = self.layout[key]
        return self.flat[w_sl].reshape(din, dout)

    def bias(self, key: str) -> np.ndarray:
        _, b_sl, _ = self.layout[key]
        return self.flat[b_sl]

    def copy(self) -> "FieldParams":
        return FieldParams(self.config, self.flat.copy())

    @staticmethod
    def init(config: FieldConfig, seed: int = 0) -> "FieldParams":
        """He-initialised weights, zero biases."""
        params = FieldParams(config)
        rng = np.random.default_rng(seed)
        for key, (w_sl, _, (din, dout)) in params.layout.items():
            std = np.sqrt(2.0 / din)
            params.flat[w_sl] = rng.normal(0.0, std, din * dout).astype(params.flat.dtype)
        return params


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def forward(params: FieldParams, which: str, x: np.ndarray, d: np.ndarray,
            want_cache: bool = False):
    """Batched field evaluation.

    x: (N, 3) positions, d: (N, 3) unit directions. Returns
    (sigma (N,), rgb (N, 3), logits (N, C)[, cache]).
    """
    if which not in ("coarse", "fine"):
        raise ConfigError("which must be coarse or fine")
    cfg = params.config
    x = np.asarray(x, dtype=params.flat.dtype).reshape(-1, 3)
    d = np.asarray(d, dtype=params.flat.dtype).reshape(-1, 3)
    if not (np.isfinite(x).all() and np.isfinite(d).all()):
        raise DomainError("non-finite field input")
    e = cfg.encoding
    enc_x = positional_encode(x, e.l_pos, e.include_raw_input)
    enc_d = positional_encode(d, e.l_dir, e.include_raw_input)

    cache = {"enc_x": enc_x, "enc_d": enc_d, "inputs": [], "zs": []}
    h = enc_x
    for i in range(cfg.trunk_depth):
        if i == cfg.skip_at and i > 0:
            h = np.concatenate([h, enc_x], axis=-1)
        cache["inputs"].append(h)
        z = h @ params.weight(f"{which}/trunk{i}") + params.bias(f"{which}/trunk{i}")
        cache["zs"].append(z)
        h = np.maximum(z, 0.0)
    trunk_out = h

    sigma_z = (trunk_out @ params.weight(f"{which}/sigma")
               + params.bias(f"{which}/sigma"))[:, 0]
    if cfg.density_activation == "softplus":
        sigma = np.logaddexp(0.0, sigma_z)
    else:
        sigma = np.maximum(sigma_z, 0.0)

    sem_z = trunk_out @ params.weight(f"{which}/sem_hidden") \
        + params.bias(f"{which}/sem_hidden")
    sem_h = np.maximum(sem_z, 0.0)
    logits = sem_h @ params.weight(f"{which}/sem_out") + params.bias(f"{which}/sem_out")

    feat = trunk_out @ params.weight(f"{which}/bottleneck") \
        + params.bias(f"{which}/bottleneck")
    col_in = np.concatenate([feat, enc_d], axis=-1)
    col_z = col_in @ params.weight(f"{which}/color_hidden") \
        + params.bias(f"{which}/color_hidden")
    col_h = np.maximum(col_z, 0.0)
    col_out_z = col_h @ params.weight(f"{which}/color_out") \
        + params.bias(f"{which}/color_out")
    rgb = _expit(col_out_z)

    if not want_cache:
        return sigma, rgb, logits
    cache.update(trunk_out=trunk_out, sigma_z=sigma_z, sem_z=sem_z, sem_h=sem_h,
                 col_in=col_in, col_z=col_z, col_h=col_h, rgb=rgb)
    return sigma, rgb, logits, cache


def backward(params: FieldParams, which: str, cache: dict, d_sigma, d_rgb,
             d_logits, grad: np.ndarray) -> None:
    """Accumulate d(loss)/d(params) into ``grad`` given output gradients."""
    cfg = params.config

    def accum(key, inp, dz):
        w_sl, b_sl, (din, dout) = params.layout[f"{which}/{key}"]
        grad[w_sl] += (inp.T @ dz).reshape(-1)
        grad[b_sl] += dz.sum(axis=0)
        return dz @ params.weight(f"{which}/{key}").T

    # colour head
    rgb = cache["rgb"]
    dz = np.asarray(d_rgb) * rgb * (1.0 - rgb)
    d_col_h = accum("color_out", cache["col_h"], dz)
    d_col_z = d_col_h * (cache["col_z"] > 0)
    d_col_in = accum("color_hidden", cache["col_in"], d_col_z)
    d_feat = d_col_in[:, :cfg.trunk_width]
    d_trunk = accum("bottleneck", cache["trunk_out"], d_feat)

    # semantic head
    d_sem_h = accum("sem_out", cache["sem_h"], np.asarray(d_logits))
    d_sem_z = d_sem_h * (cache["sem_z"] > 0)
    d_trunk = d_trunk + accum("sem_hidden", cache["trunk_out"], d_sem_z)

    # density head
    if cfg.density_activation == "softplus":
        d_sigma_z = np.asarray(d_sigma) * _expit(cache["sigma_z"])
    else:
        d_sigma_z = np.asarray(d_sigma) * (cache["sigma_z"] > 0)
    d_trunk = d_trunk + accum("sigma", cache["trunk_out"], d_sigma_z[:, None])

    # trunk, reversed
    dh = d_trunk
    for i in range(cfg.trunk_depth - 1, -1, -1):
        dz = dh * (cache["zs"][i] > 0)
        dh = accum(f"trunk{i}", cache["inputs"][i], dz)
        if i == cfg.skip_at and i > 0:
            dh = dh[:, :cfg.trunk_width]  # encoded-position part has no params upstream


def field_forward(params: FieldParams, which: str, x, d) -> FieldSample:
    """Single-point convenience wrapper."""
    sigma, rgb, logits = forward(params, which, np.atleast_2d(x), np.atleast_2d(d))
    return FieldSample(sigma=float(sigma[0]), rgb=rgb[0], logits=logits[0])


# ---------------------------------------------------------------------------
# checkpoints: JSON header + raw little-endian float32 blob
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: FieldParams, step: int = 0,
                    extra: dict | None = None) -> None:
    cfg = asdict(params.config)
    header = json.dumps({"config": cfg, "step": step, "extra": extra or {},
                         "num_params": params.size}).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(params.flat.astype("<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise DataError(f"{path}: not a field checkpoint")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen))
        blob = f.read(header["num_params"] * 4)
    if len(blob) != header["num_params"] * 4:
        raise DataError(f"{path}: truncated parameter blob")
    cfg_d = dict(header["config"])
    cfg_d["encoding"] = EncodingConfig(**cfg_d["encoding"])
    config = FieldConfig(**cfg_d)
    flat = np.frombuffer(blob, dtype="<f4").astype(config.dtype)
    params = FieldParams(config, flat)
    return params, header["step"], header["extra"]
