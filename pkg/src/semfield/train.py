"""Joint photometric/semantic optimisation of the coarse and fine fields.

Losses are summed (not averaged) over the ray batch: squared L2 colour error
for both hierarchies, plus a lambda-weighted multi-class cross-entropy on the
composited semantic logits. Rays whose semantic target is void contribute
nothing to the semantic term, in value or gradient. Gradients are exact
reverse-mode derivatives through the compositing quadrature and both MLPs;
the fine-pass sample positions are treated as constants (no gradient flows
through the importance sampling).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from semfield import kernels
from semfield.dataset import VOID, Dataset, SupervisionMask
from semfield.errors import ConfigError, TrainingDiverged
from semfield.field import FieldConfig, FieldParams, backward, forward, save_checkpoint
from semfield.geometry import pixel_directions
from semfield.render import (RenderConfig, composite, deltas_from_samples,
                             importance_samples, softmax, stratified_samples)


@dataclass
class TrainConfig:
    iterations: int = 20000
    batch: int = 256
    lambda_sem: float = 0.04
    lr: float = 5e-4
    t_near: float = 0.1
    t_far: float = 10.0
    k_coarse: int = 32
    m_fine: int = 32
    seed: int = 0
    lr_decay: bool = True
    jitter: bool = True
    checkpoint_every: int = 0
    log_every: int = 10

    def __post_init__(self):
        if self.lambda_sem < 0:
            raise ConfigError("lambda_sem must be >= 0")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if not (0 < self.t_near < self.t_far):
            raise ConfigError("need 0 < t_near < t_far")

    @staticmethod
    def paper_scale(**kw) -> "TrainConfig":
        return TrainConfig(iterations=200000, batch=1024, k_coarse=64,
                           m_fine=128, **kw)

    def render_config(self, jitter: bool | None = None) -> RenderConfig:
        return RenderConfig(k_coarse=self.k_coarse, m_fine=self.m_fine,
                            t_near=self.t_near, t_far=self.t_far,
                            jitter=self.jitter if jitter is None else jitter)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def photometric_loss(rgb_coarse, rgb_fine, target) -> float:
    """Sum over rays of the coarse plus fine squared colour error."""
    dc = rgb_coarse - target
    df = rgb_fine - target
    return float((dc * dc).sum() + (df * df).sum())


def semantic_loss(logits_coarse, logits_fine, target_labels,
                  target_probs=None) -> float:
    """Sum over non-void rays of coarse + fine cross-entropy.

    ``target_labels`` are hard class ids with 255 = void; ``target_probs``
    optionally supplies soft per-ray distributions (rows where the label is
    void are still skipped)."""
    mask = np.asarray(target_labels) != VOID
    if not mask.any():
        return 0.0
    total = 0.0
    for logits in (logits_coarse, logits_fine):
        logp = _log_softmax(np.asarray(logits)[mask])
        if target_probs is not None:
            total += -(np.asarray(target_probs)[mask] * logp).sum()
        else:
            rows = np.arange(logp.shape[0])
            total += -logp[rows, np.asarray(target_labels)[mask]].sum()
    return float(total)


def total_loss(loss_photo: float, loss_sem: float, lambda_sem: float) -> float:
    return loss_photo + lambda_sem * loss_sem


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def init(n: int, dtype=np.float32) -> "AdamState":
        return AdamState(m=np.zeros(n, dtype=dtype), v=np.zeros(n, dtype=dtype))


def adam_step(params_flat: np.ndarray, grads: np.ndarray, state: AdamState,
              lr: float) -> None:
    """Standard bias-corrected Adam update, in place."""
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    params_flat -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# loss + exact gradients through renderer and fields
# ---------------------------------------------------------------------------

def loss_gradients(params: FieldParams, batch: dict, cfg: TrainConfig,
                   rng=None, frozen_samples=None):
    """Total loss of one ray batch and its gradient w.r.t. the flat
    parameter vector.

    ``batch`` holds origins (B,3), dirs (B,3), rgb (B,3), labels (B,) and
    optionally probs (B,C). Returns (grad, loss_photo, loss_sem).

    The fine sample positions are a function of the coarse weights through
    the importance CDF, but no gradient flows through that dependence.
    ``frozen_samples`` = (t_coarse, t_fine) pins both sample sets, which
    makes the loss a plain function of the parameters (used by the
    finite-difference gradient check)."""
    origins = np.asarray(batch["origins"], dtype=np.float64)
    dirs = np.asarray(batch["dirs"], dtype=np.float64)
    dtype = params.flat.dtype
    target_rgb = np.asarray(batch["rgb"], dtype=dtype)
    labels = np.asarray(batch["labels"])
    target_probs = batch.get("probs")
    n = origins.shape[0]
    c = params.config.num_classes
    grad = np.zeros(params.size, dtype=dtype)

    mask = (labels != VOID).astype(dtype)[:, None]
    if target_probs is not None:
        p_true = np.asarray(target_probs, dtype=dtype)
    else:
        p_true = np.zeros((n, c), dtype=dtype)
        valid = labels != VOID
        p_true[np.arange(n)[valid], labels[valid].astype(int)] = 1.0

    jitter = cfg.jitter and rng is not None
    if frozen_samples is not None:
        t_c = np.asarray(frozen_samples[0])
    else:
        t_c = stratified_samples(cfg.t_near, cfg.t_far, cfg.k_coarse, n, rng,
                                 jitter)

    loss_p = 0.0
    loss_s = 0.0
    w_coarse = None
    for which, ts in (("coarse", t_c), (None, None)):
        if which is None:
            if frozen_samples is not None:
                ts = np.asarray(frozen_samples[1])
            else:
                ts = importance_samples(t_c, w_coarse, cfg.m_fine, rng,
                                        cfg.t_near, cfg.t_far)
            which = "fine"
        k = ts.shape[1]
        x = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
        d_rep = np.broadcast_to(dirs[:, None, :], x.shape)
        sig, rgb, logits, cache = forward(params, which, x.reshape(-1, 3),
                                          d_rep.reshape(-1, 3), want_cache=True)
        sig = sig.reshape(n, k)
        deltas = deltas_from_samples(ts, cfg.t_far).astype(dtype)
        values = np.concatenate([rgb.reshape(n, k, 3),
                                 logits.reshape(n, k, c)], axis=-1)
        out, weights, trans = composite(sig, deltas, values)
        if which == "coarse":
            w_coarse = weights.astype(np.float64)

        rgb_hat = out[:, :3]
        s_hat = out[:, 3:]
        diff = rgb_hat - target_rgb
        loss_p += float((diff * diff).sum())
        p_hat = softmax(s_hat)
        logp = _log_softmax(s_hat)
        loss_s += float(-(mask * p_true * logp).sum())

        d_out = np.concatenate(
            [2.0 * diff, cfg.lambda_sem * mask * (p_hat - p_true)], axis=-1)
        grad_w = np.einsum("nkc,nc->nk", values, d_out)
        d_sigma = kernels.composite_backward_sigma(
            np.ascontiguousarray(deltas), trans, weights,
            np.ascontiguousarray(grad_w))
        d_values = weights[..., None] * d_out[:, None, :]
        backward(params, which, cache,
                 d_sigma.reshape(-1), d_values[..., :3].reshape(-1, 3),
                 d_values[..., 3:].reshape(-1, c), grad)

    return grad, loss_p, loss_s


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: FieldParams
    trace: list = dc_field(default_factory=list)  # (iteration, L_p, L_s, L)


def build_ray_bank(dataset: Dataset, mask: SupervisionMask,
                   soft_labels: dict | None = None) -> dict:
    """Flatten all training pixels into ray arrays.

    Photometric targets come from every training frame; semantic targets are
    void for frames outside the supervision mask. ``soft_labels`` optionally
    maps frame index -> (H, W, C) distribution for CNN-style supervision."""
    cam = dataset.camera
    origins, dirs, rgbs, labels, probs = [], [], [], [], []
    have_probs = soft_labels is not None and len(soft_labels) > 0
    c = dataset.num_classes
    for idx in mask.train_indices:
        fr = dataset.frames[idx]
        d = pixel_directions(cam, fr.pose).reshape(-1, 3)
        dirs.append(d)
        origins.append(np.broadcast_to(fr.pose.translation, d.shape))
        rgbs.append(fr.rgb.reshape(-1, 3))
        if mask.is_labelled(idx):
            labels.append(fr.label.reshape(-1))
            if have_probs:
                pm = soft_labels.get(idx)
                if pm is None:
                    raise ConfigError(f"missing soft labels for frame {idx}")
                probs.append(pm.reshape(-1, c))
        else:
            labels.append(np.full(d.shape[0], VOID, dtype=np.uint8))
            if have_probs:
                probs.append(np.zeros((d.shape[0], c), dtype=np.float32))
    bank = {
        "origins": np.concatenate(origins),
        "dirs": np.concatenate(dirs),
        "rgb": np.concatenate(rgbs),
        "labels": np.concatenate(labels),
    }
    if have_probs:
        bank["probs"] = np.concatenate(probs).astype(np.float32)
    return bank


def learning_rate(cfg: TrainConfig, iteration: int) -> float:
    """Exponential decay to 10% of the initial rate over the run."""
    if not cfg.lr_decay or cfg.iterations <= 1:
        return cfg.lr
    frac = iteration / (cfg.iterations - 1)
    return cfg.lr * (0.1 ** frac)


def train(dataset: Dataset, mask: SupervisionMask, cfg: TrainConfig,
          field_config: FieldConfig | None = None, out_dir=None,
          soft_labels: dict | None = None, params: FieldParams | None = None,
          progress=None) -> TrainResult:
    """Optimise a field on the supervised rays of ``dataset``.

    Each iteration draws ``cfg.batch`` rays uniformly over all training
    pixels. Deterministic for a fixed seed. Raises TrainingDiverged on a
    non-finite loss."""
    if field_config is None:
        field_config = FieldConfig(num_classes=dataset.num_classes)
    if field_config.num_classes != dataset.num_classes:
        raise ConfigError("field num_classes does not match dataset")
    bank = build_ray_bank(dataset, mask, soft_labels)
    if cfg.lambda_sem > 0 and not (bank["labels"] != VOID).any():
        raise ConfigError("no labelled pixels but lambda_sem > 0")

    if params is None:
        params = FieldParams.init(field_config, seed=cfg.seed)
    state = AdamState.init(params.size, dtype=params.flat.dtype)
    rng = np.random.default_rng(cfg.seed)
    n_rays = bank["origins"].shape[0]
    trace = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    for it in range(cfg.iterations):
        idx = rng.integers(0, n_rays, cfg.batch)
        batch = {k: v[idx] for k, v in bank.items()}
        grad, lp, ls = loss_gradients(params, batch, cfg, rng)
        loss = total_loss(lp, ls, cfg.lambda_sem)
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss at iteration {it}: L_p={lp}, L_s={ls}")
        adam_step(params.flat, grad, state, learning_rate(cfg, it))
        if it % cfg.log_every == 0 or it == cfg.iterations - 1:
            trace.append((it, lp, ls, loss))
        if progress is not None and it % 500 == 0:
            progress(it, loss)
        if (out_dir is not None and cfg.checkpoint_every > 0
                and (it + 1) % cfg.checkpoint_every == 0):
            save_checkpoint(out_dir / f"ckpt_{it + 1:06d}.ckpt", params, it + 1)

    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint.ckpt", params, cfg.iterations)
        write_trace(out_dir / "trace.csv", trace)
    return TrainResult(params=params, trace=trace)


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "loss_photo", "loss_sem", "loss_total"])
        for row in trace:
            writer.writerow([row[0], f"{row[1]:.8g}", f"{row[2]:.8g}", f"{row[3]:.8g}"])
