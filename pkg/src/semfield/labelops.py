"""Supervision-degradation generators and evaluation metrics.

Degradations operate on stacks of label maps (uint8, 255 = void) and are
deterministic per rng. Metrics: segmentation (mIoU / average per-class
accuracy / total accuracy), PSNR, and the standard seven depth metrics.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from semfield.dataset import VOID
from semfield.errors import ConfigError, DomainError


# ---------------------------------------------------------------------------
# corruption generators
# ---------------------------------------------------------------------------

def corrupt_pixels(labels: np.ndarray, noise_ratio: float, num_classes: int,
                   rng) -> np.ndarray:
    """Flip exactly round(ratio * pixels) labels per frame to a uniformly
    random different value from {0..C-1, void}."""
    if not (0 <= noise_ratio <= 1):
        raise DomainError("noise_ratio must be in [0, 1]")
    labels = np.asarray(labels)
    single = labels.ndim == 2
    stack = labels[None] if single else labels
    out = stack.copy()
    n_pix = stack.shape[1] * stack.shape[2]
    n_flip = int(round(noise_ratio * n_pix))
    choices = np.append(np.arange(num_classes, dtype=np.uint8), np.uint8(VOID))
    for f in range(stack.shape[0]):
        flat = out[f].reshape(-1)
        pos = rng.choice(n_pix, size=n_flip, replace=False)
        # draw from the C alternatives excluding the original value
        draw = rng.integers(0, num_classes, size=n_flip)
        orig = flat[pos]
        orig_idx = np.where(orig == VOID, num_classes, orig).astype(np.int64)
        new_idx = draw + (draw >= orig_idx)
        flat[pos] = choices[new_idx]
    return out[0] if single else out


def occupied_area_ratio(instance_maps: np.ndarray, instance_id: int) -> np.ndarray:
    """Fraction of each frame's pixels covered by the given instance."""
    maps = np.asarray(instance_maps)
    return (maps == instance_id).mean(axis=(1, 2))


def corrupt_regions(labels: np.ndarray, instance_maps: np.ndarray,
                    target_class: int, noise_ratio: float, criterion: str,
                    rng, num_classes: int) -> np.ndarray:
    """For each instance of ``target_class``: rank the frames where it is
    visible by occupied area ratio and flip all of its pixels to a random
    different class in the selected fraction of frames.

    criterion "sort" picks the frames with the least occupied area,
    "even" picks evenly from the sorted sequence."""
    if criterion not in ("sort", "even"):
        raise ConfigError("criterion must be 'sort' or 'even'")
    if not (0 <= noise_ratio <= 1):
        raise DomainError("noise_ratio must be in [0, 1]")
    labels = np.asarray(labels)
    instance_maps = np.asarray(instance_maps)
    out = labels.copy()
    class_per_instance = {}
    for f in range(labels.shape[0]):
        ids = np.unique(instance_maps[f][labels[f] == target_class])
        for i in ids:
            class_per_instance.setdefault(int(i), target_class)
    instances = sorted(class_per_instance)
    if len(instances) < 2:
        raise ConfigError(
            f"class {target_class} has {len(instances)} instances, need >= 2")
    others = [c for c in range(num_classes) if c != target_class]
    for inst in instances:
        area = occupied_area_ratio(instance_maps, inst)
        visible = np.nonzero(area > 0)[0]
        order = visible[np.argsort(area[visible], kind="stable")]
        n_sel = int(round(noise_ratio * len(order)))
        if n_sel == 0:
            continue
        if criterion == "sort":
            selected = order[:n_sel]
        else:
            pos = np.round(np.linspace(0, len(order) - 1, n_sel)).astype(int)
            selected = order[np.unique(pos)]
        for f in selected:
            wrong = others[rng.integers(0, len(others))]
            region = (instance_maps[f] == inst) & (labels[f] == target_class)
            out[f][region] = wrong
    return out


def downscale_labels(labels: np.ndarray, s: int, mode: str) -> np.ndarray:
    """Low-resolution supervision.

    "dense_interp": nearest-neighbour down-scale by S then back up.
    "sparse_void": keep pixels whose row and column are divisible by S, void
    everywhere else."""
    if s < 1:
        raise DomainError("scale must be >= 1")
    if mode not in ("dense_interp", "sparse_void"):
        raise ConfigError("mode must be dense_interp or sparse_void")
    labels = np.asarray(labels)
    single = labels.ndim == 2
    stack = labels[None] if single else labels
    if mode == "dense_interp":
        # nearest neighbour: sample the top-left of every SxS block, repeat back
        low = stack[:, ::s, ::s]
        up = np.repeat(np.repeat(low, s, axis=1), s, axis=2)
        out = up[:, :stack.shape[1], :stack.shape[2]].copy()
    else:
        out = np.full_like(stack, VOID)
        out[:, ::s, ::s] = stack[:, ::s, ::s]
    return out[0] if single else out


def partial_labels(labels: np.ndarray, budget, rng) -> np.ndarray:
    """Per frame and class, keep one random 4-connected region of the class
    mask grown to the pixel budget; everything else becomes void.

    budget "single_click" keeps one pixel; a float in (0, 1] keeps that
    fraction of the class's pixels."""
    labels = np.asarray(labels)
    single = labels.ndim == 2
    stack = labels[None] if single else labels
    out = np.full_like(stack, VOID)
    for f in range(stack.shape[0]):
        frame = stack[f]
        for cls in np.unique(frame):
            if cls == VOID:
                continue
            mask = frame == cls
            count = int(mask.sum())
            if budget == "single_click":
                n_keep = 1
            else:
                frac = float(budget)
                if not (0 < frac <= 1):
                    raise ConfigError("fraction budget must be in (0, 1]")
                n_keep = max(1, int(round(frac * count)))
            ys, xs = np.nonzero(mask)
            seed_i = rng.integers(0, len(ys))
            region = _grow_region(mask, (int(ys[seed_i]), int(xs[seed_i])), n_keep)
            out[f][region] = cls
    return out[0] if single else out


def _grow_region(mask: np.ndarray, seed_px, budget: int) -> np.ndarray:
    """Breadth-first 4-connected growth within ``mask`` up to ``budget``."""
    h, w = mask.shape
    region = np.zeros_like(mask)
    queue = deque([seed_px])
    region[seed_px] = True
    taken = 1
    while queue and taken < budget:
        y, x = queue.popleft()
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not region[ny, nx]:
                region[ny, nx] = True
                taken += 1
                queue.append((ny, nx))
                if taken >= budget:
                    break
    return region


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    miou: float
    avg_acc: float
    total_acc: float
    psnr: float | None = None
    depth: dict | None = None

    def as_dict(self) -> dict:
        d = {"miou": self.miou, "avg_acc": self.avg_acc, "total_acc": self.total_acc}
        if self.psnr is not None:
            d["psnr"] = self.psnr
        if self.depth is not None:
            d.update({f"depth_{k}": v for k, v in self.depth.items()})
        return d


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """C x C counts, GT rows x prediction columns; void GT pixels excluded."""
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    gt = np.asarray(gt).reshape(-1).astype(np.int64)
    valid = (gt != VOID) & (pred != VOID)
    idx = gt[valid] * num_classes + pred[valid]
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes)


def segmentation_metrics(pred: np.ndarray, gt: np.ndarray,
                         num_classes: int) -> MetricsReport:
    """total_acc = trace/total; avg_acc = mean per-class recall over classes
    present in GT; mIoU = mean IoU over classes present in GT or prediction."""
    cm = confusion_matrix(pred, gt, num_classes)
    total = cm.sum()
    if total == 0:
        raise DomainError("no valid pixels to evaluate")
    tp = np.diag(cm)
    gt_count = cm.sum(axis=1)
    pred_count = cm.sum(axis=0)
    total_acc = tp.sum() / total
    present_gt = gt_count > 0
    avg_acc = float(np.mean(tp[present_gt] / gt_count[present_gt]))
    present = present_gt | (pred_count > 0)
    union = gt_count + pred_count - tp
    miou = float(np.mean(tp[present] / union[present]))
    return MetricsReport(miou=miou, avg_acc=avg_acc, total_acc=float(total_acc))


PSNR_CAP = 99.0


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """10 log10(1/MSE) over [0,1] images, capped at 99 dB for exact matches."""
    mse = float(np.mean((np.asarray(pred, dtype=np.float64)
                         - np.asarray(gt, dtype=np.float64)) ** 2))
    if mse <= 0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def depth_metrics(pred: np.ndarray, gt: np.ndarray,
                  valid_mask: np.ndarray | None = None) -> dict:
    """AbsRel, AbsDiff, SqRel, RMSE and the three strict delta < 1.25^i
    ratios over pixels with positive ground-truth depth."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1)
    valid = gt > 0
    if valid_mask is not None:
        valid &= np.asarray(valid_mask).reshape(-1)
    if not valid.any():
        raise DomainError("no valid depth pixels")
    d, dg = pred[valid], gt[valid]
    err = np.abs(d - dg)
    ratio = np.maximum(d / dg, np.where(d > 0, dg / d, np.inf))
    return {
        "abs_rel": float(np.mean(err / dg)),
        "abs_diff": float(np.mean(err)),
        "sq_rel": float(np.mean(err ** 2 / dg)),
        "rmse": float(np.sqrt(np.mean(err ** 2))),
        "delta_1": float(np.mean(ratio < 1.25)),
        "delta_2": float(np.mean(ratio < 1.25 ** 2)),
        "delta_3": float(np.mean(ratio < 1.25 ** 3)),
    }
