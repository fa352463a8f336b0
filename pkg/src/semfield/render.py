"""Ray sampling and quadrature compositing.

One compositing routine serves colour and semantic logits: per-sample weights
w_k = T_k * (1 - exp(-sigma_k * delta_k)) with T_k the accumulated
transmittance, and the rendered value is the weight-sum of the per-sample
payload. The hierarchical scheme runs a coarse stratified pass, turns its
weights into an importance distribution and re-renders with the merged sample
set on the fine network.

Expected depth is the unnormalised weight-sum of sample distances by default;
``normalize_depth`` divides by the accumulated weight (guarded) instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from semfield import kernels
from semfield.errors import DomainError
from semfield.field import FieldParams, forward
from semfield.geometry import Camera, Pose, Ray, pixel_directions

DELTA_FLOOR = 1e-9  # keeps terminal/duplicate deltas strictly positive


@dataclass(frozen=True)
class RenderConfig:
    k_coarse: int = 32
    m_fine: int = 32
    t_near: float = 0.1
    t_far: float = 10.0
    jitter: bool = True
    normalize_depth: bool = False
    eps_w: float = 1e-5  # importance-pdf floor
    chunk: int = 4096

    @staticmethod
    def paper_scale(**kw) -> "RenderConfig":
        return RenderConfig(k_coarse=64, m_fine=128, **kw)


@dataclass
class RenderOutput:
    rgb_coarse: np.ndarray
    rgb_fine: np.ndarray
    logits_coarse: np.ndarray
    logits_fine: np.ndarray
    depth: float
    weights: np.ndarray
    transmittance: np.ndarray
    probs: np.ndarray
    entropy: float


def softmax(logits, axis=-1):
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def entropy_nats(probs, axis=-1):
    p = np.clip(probs, 1e-12, 1.0)
    return -(p * np.log(p)).sum(axis=axis)


def stratified_samples(t_near: float, t_far: float, k: int, n_rays: int = 1,
                       rng=None, jitter: bool = True) -> np.ndarray:
    """One sample per equal bin of [t_near, t_far]; bin midpoints when jitter
    is off, uniform within each bin when on. Shape (n_rays, k)."""
    if not (0 < t_near < t_far):
        raise DomainError("need 0 < t_near < t_far")
    if k < 1:
        raise DomainError("need k >= 1")
    edges = np.linspace(t_near, t_far, k + 1)
    width = (t_far - t_near) / k
    if jitter and rng is not None:
        u = rng.random((n_rays, k))
    else:
        u = np.full((n_rays, k), 0.5)
    return edges[:-1] + u * width


def deltas_from_samples(ts: np.ndarray, t_far: float) -> np.ndarray:
    """delta_k = t_{k+1} - t_k with the terminal delta_K = t_far - t_K."""
    d = np.empty_like(ts)
    d[..., :-1] = ts[..., 1:] - ts[..., :-1]
    d[..., -1] = t_far - ts[..., -1]
    return np.maximum(d, DELTA_FLOOR)


def composite(sigmas, deltas, values):
    """Quadrature compositing of an arbitrary per-sample payload.

    sigmas, deltas: (N, K); values: (N, K, C). Returns the expected payload
    (N, C), weights (N, K) and transmittances (N, K+1).
    """
    sigmas = np.ascontiguousarray(sigmas)
    deltas = np.ascontiguousarray(deltas, dtype=sigmas.dtype)
    if sigmas.size and sigmas.min() < 0:
        raise DomainError("negative density")
    if deltas.size and deltas.min() <= 0:
        raise DomainError("non-positive delta")
    weights, trans = kernels.composite_weights(sigmas, deltas)
    out = np.einsum("nk,nkc->nc", weights, np.asarray(values))
    return out, weights, trans


def importance_samples(t_coarse: np.ndarray, weights: np.ndarray, m: int,
                       rng=None, t_near: float = None, t_far: float = None,
                       eps_w: float = 1e-5) -> np.ndarray:
    """Inverse-CDF draw of m extra samples from the piecewise-constant
    distribution proportional to (coarse weights + eps_w) over the coarse
    bins, merged and sorted with the coarse samples."""
    n, k = weights.shape
    if t_near is None:
        t_near = float(t_coarse.min())
    if t_far is None:
        t_far = float(t_coarse.max())
    edges = np.linspace(t_near, t_far, k + 1)
    pdf = np.ascontiguousarray(weights + eps_w, dtype=np.float64)
    if rng is not None:
        u = rng.random((n, m))
    else:
        u = np.broadcast_to((np.arange(m) + 0.5) / m, (n, m)).copy()
    extra = kernels.sample_pdf(edges, pdf, u)
    return np.sort(np.concatenate([t_coarse, extra], axis=-1), axis=-1)


def render_rays(params: FieldParams, origins, dirs, config: RenderConfig,
                rng=None) -> dict:
    """Batched coarse+fine rendering. origins/dirs: (N, 3), dirs unit."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = origins.shape[0]
    jitter = config.jitter and rng is not None

    t_c = stratified_samples(config.t_near, config.t_far, config.k_coarse, n,
                             rng, jitter)
    x_c = origins[:, None, :] + t_c[..., None] * dirs[:, None, :]
    d_rep = np.broadcast_to(dirs[:, None, :], x_c.shape)
    sig_c, rgb_c, log_c = forward(params, "coarse", x_c.reshape(-1, 3),
                                  d_rep.reshape(-1, 3))
    sig_c = sig_c.reshape(n, -1)
    del_c = deltas_from_samples(t_c, config.t_far).astype(sig_c.dtype)
    payload_c = np.concatenate([rgb_c.reshape(n, -1, 3),
                                log_c.reshape(n, -1, log_c.shape[-1])], axis=-1)
    out_c, w_c, _ = composite(sig_c, del_c, payload_c)

    t_f = importance_samples(t_c, w_c.astype(np.float64), config.m_fine, rng,
                             config.t_near, config.t_far, config.eps_w)
    x_f = origins[:, None, :] + t_f[..., None] * dirs[:, None, :]
    d_rep = np.broadcast_to(dirs[:, None, :], x_f.shape)
    sig_f, rgb_f, log_f = forward(params, "fine", x_f.reshape(-1, 3),
                                  d_rep.reshape(-1, 3))
    sig_f = sig_f.reshape(n, -1)
    del_f = deltas_from_samples(t_f, config.t_far).astype(sig_f.dtype)
    kf = t_f.shape[1]
    payload_f = np.concatenate([rgb_f.reshape(n, kf, 3),
                                log_f.reshape(n, kf, -1),
                                t_f[..., None].astype(sig_f.dtype)], axis=-1)
    out_f, w_f, trans_f = composite(sig_f, del_f, payload_f)

    c = log_c.shape[-1]
    depth = out_f[:, 3 + c]
    if config.normalize_depth:
        acc = w_f.sum(axis=-1)
        depth = np.where(acc > 1e-6, depth / np.maximum(acc, 1e-6), 0.0)
    probs = softmax(out_f[:, 3:3 + c])
    return {
        "rgb_coarse": out_c[:, :3], "logits_coarse": out_c[:, 3:3 + c],
        "rgb_fine": out_f[:, :3], "logits_fine": out_f[:, 3:3 + c],
        "depth": depth, "weights": w_f, "transmittance": trans_f,
        "probs": probs, "entropy": entropy_nats(probs),
        "t_fine": t_f,
    }


def render_ray(params: FieldParams, ray: Ray, config: RenderConfig,
               rng=None) -> RenderOutput:
    cfg = RenderConfig(**{**config.__dict__, "t_near": ray.t_near,
                          "t_far": ray.t_far})
    out = render_rays(params, ray.origin[None], ray.direction[None], cfg, rng)
    return RenderOutput(
        rgb_coarse=out["rgb_coarse"][0], rgb_fine=out["rgb_fine"][0],
        logits_coarse=out["logits_coarse"][0], logits_fine=out["logits_fine"][0],
        depth=float(out["depth"][0]), weights=out["weights"][0],
        transmittance=out["transmittance"][0], probs=out["probs"][0],
        entropy=float(out["entropy"][0]))


def render_image(params: FieldParams, camera: Camera, pose: Pose,
                 config: RenderConfig, rng=None) -> dict:
    """Per-pixel rendering; emits rgb, label (argmax of fine probabilities,
    ties to the lowest class id), depth, entropy and probability images."""
    dirs = pixel_directions(camera, pose).reshape(-1, 3)
    origins = np.broadcast_to(pose.translation, dirs.shape)
    h, w = camera.height, camera.width
    c = params.config.num_classes
    rgb = np.empty((h * w, 3), dtype=np.float32)
    depth = np.empty(h * w, dtype=np.float32)
    ent = np.empty(h * w, dtype=np.float32)
    probs = np.empty((h * w, c), dtype=np.float32)
    for s in range(0, h * w, config.chunk):
        sl = slice(s, min(s + config.chunk, h * w))
        out = render_rays(params, origins[sl], dirs[sl], config, rng)
        rgb[sl] = out["rgb_fine"]
        depth[sl] = out["depth"]
        ent[sl] = out["entropy"]
        probs[sl] = out["probs"]
    label = probs.argmax(axis=-1).astype(np.uint8)  # argmax takes lowest on ties
    return {
        "rgb": np.clip(rgb.reshape(h, w, 3), 0.0, 1.0),
        "label": label.reshape(h, w),
        "depth": depth.reshape(h, w),
        "entropy": ent.reshape(h, w),
        "probs": probs.reshape(h, w, c),
    }
