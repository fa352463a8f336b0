"""Multi-view semantic label fusion baselines and the training-as-fusion path.

Bayesian fusion multiplies per-view class distributions and renormalises;
average fusion takes their mean. Both need depth for data association: each
target pixel is lifted to 3D, projected into every window frame, and a view
only contributes when its observed depth agrees with the reprojected depth
within ``tau_d``. The competing approach trains a field on the same noisy
inputs and re-renders labels at the training poses.

"CNN-like" multi-view predictions are simulated from clean labels by region
and pixel corruption followed by label softening, so the comparison runs
without any external segmentation network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from semfield import labelops
from semfield.dataset import VOID, Dataset
from semfield.errors import ConfigError, DomainError
from semfield.geometry import lift_pixels, project_batch
from semfield.render import RenderConfig, render_image, softmax

PROB_FLOOR = 1e-12
TAU_DEPTH = 0.05  # metres, depth-consistency gate


def bayesian_fuse(probs) -> np.ndarray:
    """Componentwise product of distributions, renormalised. Probabilities
    are floored at 1e-12 before the product so a zero never annihilates."""
    probs = _as_prob_array(probs)
    logp = np.log(np.maximum(probs, PROB_FLOOR)).sum(axis=0)
    logp -= logp.max()
    p = np.exp(logp)
    return p / p.sum()


def average_fuse(probs) -> np.ndarray:
    """Arithmetic mean of the distributions."""
    probs = _as_prob_array(probs)
    p = probs.mean(axis=0)
    return p / p.sum()


def _as_prob_array(probs) -> np.ndarray:
    arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DomainError("need a nonempty list of distributions")
    if np.any(arr < 0) or not np.allclose(arr.sum(axis=1), 1.0, atol=1e-6):
        raise DomainError("inputs must be normalised distributions")
    return arr


# ---------------------------------------------------------------------------
# simulated monocular CNN predictions
# ---------------------------------------------------------------------------

@dataclass
class SimulatedCnnSpec:
    pixel_noise: float = 0.15
    region_noise: float = 0.3
    region_criterion: str = "even"
    soften_eta: float = 0.1


def simulate_cnn_probs(dataset: Dataset, frame_indices, spec: SimulatedCnnSpec,
                       rng) -> dict:
    """Imperfect-but-correlated per-frame probability maps from clean labels:
    region corruption on the class with the most instances, pixel corruption,
    then softening (1 - eta on the observed label, eta/(C-1) elsewhere;
    uniform where the observation is void)."""
    c = dataset.num_classes
    labels = np.stack([dataset.frames[i].label for i in frame_indices])
    instances = [dataset.frames[i].instance for i in frame_indices]
    if any(m is None for m in instances):
        raise ConfigError("simulated CNN protocol needs instance maps")
    instances = np.stack(instances)
    corrupted = labels
    if spec.region_noise > 0:
        target = _class_with_most_instances(labels, instances)
        if target is not None:
            corrupted = labelops.corrupt_regions(
                corrupted, instances, target, spec.region_noise,
                spec.region_criterion, rng, c)
    if spec.pixel_noise > 0:
        corrupted = labelops.corrupt_pixels(corrupted, spec.pixel_noise, c, rng)
    eta = spec.soften_eta
    out = {}
    for k, idx in enumerate(frame_indices):
        lab = corrupted[k]
        probs = np.full(lab.shape + (c,), eta / max(c - 1, 1), dtype=np.float32)
        obs = lab != VOID
        probs[obs, lab[obs]] = 1.0 - eta
        probs[~obs] = 1.0 / c
        out[idx] = probs
    return out


def _class_with_most_instances(labels, instances):
    counts = {}
    for f in range(labels.shape[0]):
        for inst in np.unique(instances[f]):
            if inst == 0:
                continue
            cls = np.bincount(labels[f][instances[f] == inst],
                              minlength=256).argmax()
            if cls != VOID:
                counts.setdefault(int(cls), set()).add(int(inst))
    best = [(len(v), k) for k, v in counts.items() if len(v) >= 2]
    return max(best)[1] if best else None


# ---------------------------------------------------------------------------
# depth-associated fusion to a target frame
# ---------------------------------------------------------------------------

def fuse_to_frame(dataset: Dataset, prob_maps: dict, target_idx: int,
                  method: str, depth_maps: dict, window,
                  tau_d: float = TAU_DEPTH):
    """Fuse multi-view distributions into the target frame.

    ``prob_maps`` and ``depth_maps`` map frame index -> (H, W, C) / (H, W);
    the depth maps come either from the dataset ground truth or from a
    trained field, decided by the caller. The target's own prediction is
    always part of the fused set. Returns (label map, fused probability
    map)."""
    if method not in ("bayesian", "average"):
        raise ConfigError("method must be bayesian or average")
    for idx in window:
        if idx not in depth_maps or depth_maps[idx] is None:
            raise ConfigError(f"no depth for frame {idx}")
        if idx not in prob_maps:
            raise ConfigError(f"no probabilities for frame {idx}")
    cam = dataset.camera
    h, w = cam.height, cam.width
    c = dataset.num_classes
    target_pose = dataset.frames[target_idx].pose
    points = lift_pixels(cam, target_pose, np.asarray(depth_maps[target_idx]))
    points = points.reshape(-1, 3)

    if method == "bayesian":
        acc = np.log(np.maximum(
            prob_maps[target_idx].reshape(-1, c).astype(np.float64), PROB_FLOOR))
    else:
        acc = prob_maps[target_idx].reshape(-1, c).astype(np.float64)
        count = np.ones(h * w)

    for idx in window:
        if idx == target_idx:
            continue
        pose = dataset.frames[idx].pose
        uv, depth_reproj, valid = project_batch(points, pose, cam)
        px = np.clip(np.round(uv[:, 0]).astype(int), 0, w - 1)
        py = np.clip(np.round(uv[:, 1]).astype(int), 0, h - 1)
        observed = np.asarray(depth_maps[idx])[py, px]
        match = valid & (np.abs(depth_reproj - observed) < tau_d)
        if not match.any():
            continue
        gathered = prob_maps[idx][py[match], px[match]].astype(np.float64)
        if method == "bayesian":
            acc[match] += np.log(np.maximum(gathered, PROB_FLOOR))
        else:
            acc[match] += gathered
            count[match] += 1.0

    if method == "bayesian":
        acc -= acc.max(axis=1, keepdims=True)
        fused = np.exp(acc)
    else:
        fused = acc / count[:, None]
    fused /= fused.sum(axis=1, keepdims=True)
    label = fused.argmax(axis=1).astype(np.uint8)
    return label.reshape(h, w), fused.reshape(h, w, c).astype(np.float32)


def nerf_fusion_render(params, dataset: Dataset, train_indices,
                       config: RenderConfig, rng=None) -> dict:
    """Re-render semantic labels (and depth) at the training poses from a
    trained field; the labels are the training-as-fusion result."""
    out = {}
    for idx in train_indices:
        img = render_image(params, dataset.camera, dataset.frames[idx].pose,
                           config, rng)
        out[idx] = img
    return out


def fusion_comparison(dataset: Dataset, train_indices, prob_maps: dict,
                      nerf_renders: dict, tau_d: float = TAU_DEPTH) -> dict:
    """Table 5-style comparison at the training poses against clean labels.

    Rows: monocular input, bayesian/average fusion with ground-truth and
    learned depth, and the training-as-fusion renders."""
    gt = np.stack([dataset.frames[i].label for i in train_indices])
    c = dataset.num_classes
    gt_depth = {i: dataset.frames[i].depth for i in train_indices}
    if any(d is None for d in gt_depth.values()):
        raise ConfigError("fusion comparison needs ground-truth depth maps")
    learned_depth = {i: nerf_renders[i]["depth"] for i in train_indices}

    mono = np.stack([prob_maps[i].argmax(axis=-1).astype(np.uint8)
                     for i in train_indices])
    rows = {"monocular": labelops.segmentation_metrics(mono, gt, c)}
    for method in ("bayesian", "average"):
        for tag, depths in (("gt", gt_depth), ("learned", learned_depth)):
            fused = np.stack([
                fuse_to_frame(dataset, prob_maps, i, method, depths,
                              train_indices, tau_d)[0]
                for i in train_indices])
            rows[f"{method}_{tag}_depth"] = labelops.segmentation_metrics(
                fused, gt, c)
    nerf_labels = np.stack([nerf_renders[i]["label"] for i in train_indices])
    rows["nerf_training"] = labelops.segmentation_metrics(nerf_labels, gt, c)
    return rows
