"""Hot numeric kernels with numba-compiled and pure-numpy implementations.

Every kernel exists twice: a vectorised numpy version and a numba ``@njit``
loop version. The active path is chosen once at import time: set the
environment variable ``SEMFIELD_NO_NUMBA=1`` to force the numpy fallback
(also used automatically when numba is unavailable). Both paths compute the
same values; ``benchmarks/bench_kernels.py`` compares their speed.
"""

from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("SEMFIELD_NO_NUMBA", "0").strip().lower()
USE_NUMBA = _flag not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

_EPS_T = 1e-6  # minimum hit distance, rejects self-intersections


# ---------------------------------------------------------------------------
# quadrature compositing
# ---------------------------------------------------------------------------

def _composite_weights_np(sigmas, deltas):
    tau = sigmas * deltas
    acc = np.cumsum(tau, axis=-1)
    trans = np.ones(sigmas.shape[:-1] + (sigmas.shape[-1] + 1,), dtype=sigmas.dtype)
    trans[..., 1:] = np.exp(-acc)
    alpha = -np.expm1(-tau)
    weights = trans[..., :-1] * alpha
    return weights, trans


def _composite_weights_loop(sigmas, deltas):
    n, k = sigmas.shape
    weights = np.empty((n, k), dtype=sigmas.dtype)
    trans = np.empty((n, k + 1), dtype=sigmas.dtype)
    for i in range(n):
        t = 1.0
        for j in range(k):
            trans[i, j] = t
            a = 1.0 - np.exp(-sigmas[i, j] * deltas[i, j])
            weights[i, j] = t * a
            t *= 1.0 - a
        trans[i, k] = t
    return weights, trans


def _composite_backward_sigma_np(deltas, trans, weights, grad_w):
    # dL/dsigma_k = delta_k * (T_{k+1} g_k - sum_{j>k} w_j g_j)
    wg = weights * grad_w
    tail = np.cumsum(wg[..., ::-1], axis=-1)[..., ::-1] - wg
    return deltas * (trans[..., 1:] * grad_w - tail)


def _composite_backward_sigma_loop(deltas, trans, weights, grad_w):
    n, k = weights.shape
    out = np.empty((n, k), dtype=weights.dtype)
    for i in range(n):
        tail = 0.0
        for j in range(k - 1, -1, -1):
            out[i, j] = deltas[i, j] * (trans[i, j + 1] * grad_w[i, j] - tail)
            tail += weights[i, j] * grad_w[i, j]
    return out


# ---------------------------------------------------------------------------
# inverse-CDF sampling over a piecewise-constant pdf on uniform bins
# ---------------------------------------------------------------------------

def _sample_pdf_np(edges, pdf, u):
    cdf = np.cumsum(pdf, axis=-1)
    total = cdf[..., -1:]
    cdf = cdf / total
    idx = np.minimum((u[..., None] >= cdf[..., None, :]).sum(-1), pdf.shape[-1] - 1)
    rows = np.arange(pdf.shape[0])[:, None]
    cdf_lo = np.where(idx > 0, cdf[rows, np.maximum(idx - 1, 0)], 0.0)
    seg = cdf[rows, idx] - cdf_lo
    seg = np.where(seg > 0, seg, 1.0)
    frac = (u - cdf_lo) / seg
    width = edges[1:] - edges[:-1]
    return edges[idx] + frac * width[idx]


def _sample_pdf_loop(edges, pdf, u):
    n, m = u.shape
    k = pdf.shape[1]
    out = np.empty((n, m), dtype=u.dtype)
    for i in range(n):
        total = 0.0
        for j in range(k):
            total += pdf[i, j]
        for s in range(m):
            target = u[i, s] * total
            acc = 0.0
            j = 0
            while j < k - 1 and acc + pdf[i, j] < target:
                acc += pdf[i, j]
                j += 1
            seg = pdf[i, j]
            frac = (target - acc) / seg if seg > 0 else 0.0
            out[i, s] = edges[j] + frac * (edges[j + 1] - edges[j])
    return out


# ---------------------------------------------------------------------------
# analytic scene ray casting (spheres, axis-aligned boxes, axis-aligned
# planes, plus the enclosing room shell)
# ---------------------------------------------------------------------------
# Hit ids: >= 0 index into the primitive order spheres|boxes|planes,
# -1 room shell, -2 total miss.

def _raycast_np(origins, dirs, spheres, boxes, plane_axes, plane_offs,
                lo, hi, t_far):
    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    best_id = np.full(n, -2, dtype=np.int64)
    normals = np.zeros((n, 3))

    pid = 0
    for s in range(spheres.shape[0]):
        c, r = spheres[s, :3], spheres[s, 3]
        oc = origins - c
        b = np.einsum("ij,ij->i", oc, dirs)
        q = np.einsum("ij,ij->i", oc, oc) - r * r
        disc = b * b - q
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 > _EPS_T, t0, t1)
        hit = ok & (t > _EPS_T) & (t < best_t) & (t <= t_far)
        best_t = np.where(hit, t, best_t)
        best_id = np.where(hit, pid, best_id)
        p = origins + t[:, None] * dirs
        nrm = (p - c) / r
        normals = np.where(hit[:, None], nrm, normals)
        pid += 1

    safe = np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    for bix in range(boxes.shape[0]):
        blo, bhi = boxes[bix, :3], boxes[bix, 3:]
        t_a = (blo - origins) / safe
        t_b = (bhi - origins) / safe
        tmin = np.minimum(t_a, t_b)
        tmax = np.maximum(t_a, t_b)
        t_enter = tmin.max(axis=1)
        t_exit = tmax.min(axis=1)
        t = np.where(t_enter > _EPS_T, t_enter, t_exit)
        hit = (t_exit >= np.maximum(t_enter, _EPS_T)) & (t > _EPS_T) \
            & (t < best_t) & (t <= t_far)
        p = origins + t[:, None] * dirs
        centre = 0.5 * (blo + bhi)
        half = np.maximum(0.5 * (bhi - blo), 1e-12)
        rel = (p - centre) / half
        axis = np.argmax(np.abs(rel), axis=1)
        nrm = np.zeros((n, 3))
        nrm[np.arange(n), axis] = np.sign(rel[np.arange(n), axis])
        # entering from inside: flip normal against the ray
        flip = np.einsum("ij,ij->i", nrm, dirs) > 0
        nrm[flip] *= -1
        best_t = np.where(hit, t, best_t)
        best_id = np.where(hit, pid, best_id)
        normals = np.where(hit[:, None], nrm, normals)
        pid += 1

    for pix in range(plane_axes.shape[0]):
        ax = int(plane_axes[pix])
        off = plane_offs[pix]
        denom = safe[:, ax]
        t = (off - origins[:, ax]) / denom
        p = origins + t[:, None] * dirs
        inside = np.ones(n, dtype=bool)
        for other in range(3):
            if other != ax:
                inside &= (p[:, other] >= lo[other]) & (p[:, other] <= hi[other])
        hit = (np.abs(dirs[:, ax]) > 1e-12) & (t > _EPS_T) & inside \
            & (t < best_t) & (t <= t_far)
        nrm = np.zeros((n, 3))
        nrm[:, ax] = np.where(dirs[:, ax] > 0, -1.0, 1.0)
        best_t = np.where(hit, t, best_t)
        best_id = np.where(hit, pid, best_id)
        normals = np.where(hit[:, None], nrm, normals)
        pid += 1

    # room shell: exit point of the world AABB, seen from inside
    t_a = (lo - origins) / safe
    t_b = (hi - origins) / safe
    tmax = np.maximum(t_a, t_b)
    t_exit = tmax.min(axis=1)
    exit_axis = np.argmin(tmax, axis=1)
    hit = (t_exit > _EPS_T) & (t_exit < best_t) & (t_exit <= t_far)
    nrm = np.zeros((n, 3))
    nrm[np.arange(n), exit_axis] = -np.sign(dirs[np.arange(n), exit_axis])
    best_t = np.where(hit, t_exit, best_t)
    best_id = np.where(hit, -1, best_id)
    normals = np.where(hit[:, None], nrm, normals)

    miss = best_id == -2
    best_t = np.where(miss, t_far, best_t)
    return best_t, best_id, normals


def _raycast_loop(origins, dirs, spheres, boxes, plane_axes, plane_offs,
                  lo, hi, t_far):
    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    best_id = np.full(n, -2, dtype=np.int64)
    normals = np.zeros((n, 3))
    for i in range(n):
        o = origins[i]
        d = dirs[i]
        bt = np.inf
        bid = -2
        nx = ny = nz = 0.0
        pid = 0
        for s in range(spheres.shape[0]):
            cx, cy, cz, r = spheres[s, 0], spheres[s, 1], spheres[s, 2], spheres[s, 3]
            ocx, ocy, ocz = o[0] - cx, o[1] - cy, o[2] - cz
            b = ocx * d[0] + ocy * d[1] + ocz * d[2]
            q = ocx * ocx + ocy * ocy + ocz * ocz - r * r
            disc = b * b - q
            if disc >= 0.0:
                sq = np.sqrt(disc)
                t = -b - sq
                if t <= _EPS_T:
                    t = -b + sq
                if _EPS_T < t < bt and t <= t_far:
                    bt = t
                    bid = pid
                    px, py, pz = o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]
                    nx, ny, nz = (px - cx) / r, (py - cy) / r, (pz - cz) / r
            pid += 1
        for bix in range(boxes.shape[0]):
            t_enter = -np.inf
            t_exit = np.inf
            for ax in range(3):
                dd = d[ax]
                if abs(dd) < 1e-12:
                    dd = 1e-12
                ta = (boxes[bix, ax] - o[ax]) / dd
                tb = (boxes[bix, 3 + ax] - o[ax]) / dd
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t_enter:
                    t_enter = ta
                if tb < t_exit:
                    t_exit = tb
            t = t_enter if t_enter > _EPS_T else t_exit
            if t_exit >= max(t_enter, _EPS_T) and _EPS_T < t < bt and t <= t_far:
                bt = t
                bid = pid
                cx = 0.5 * (boxes[bix, 0] + boxes[bix, 3])
                cy = 0.5 * (boxes[bix, 1] + boxes[bix, 4])
                cz = 0.5 * (boxes[bix, 2] + boxes[bix, 5])
                hx = max(0.5 * (boxes[bix, 3] - boxes[bix, 0]), 1e-12)
                hy = max(0.5 * (boxes[bix, 4] - boxes[bix, 1]), 1e-12)
                hz = max(0.5 * (boxes[bix, 5] - boxes[bix, 2]), 1e-12)
                rx = (o[0] + t * d[0] - cx) / hx
                ry = (o[1] + t * d[1] - cy) / hy
                rz = (o[2] + t * d[2] - cz) / hz
                nx = ny = nz = 0.0
                if abs(rx) >= abs(ry) and abs(rx) >= abs(rz):
                    nx = 1.0 if rx > 0 else -1.0
                elif abs(ry) >= abs(rz):
                    ny = 1.0 if ry > 0 else -1.0
                else:
                    nz = 1.0 if rz > 0 else -1.0
                if nx * d[0] + ny * d[1] + nz * d[2] > 0:
                    nx, ny, nz = -nx, -ny, -nz
            pid += 1
        for pix in range(plane_axes.shape[0]):
            ax = plane_axes[pix]
            if abs(d[ax]) > 1e-12:
                t = (plane_offs[pix] - o[ax]) / d[ax]
                if _EPS_T < t < bt and t <= t_far:
                    inside = True
                    for other in range(3):
                        if other != ax:
                            pc = o[other] + t * d[other]
                            if pc < lo[other] or pc > hi[other]:
                                inside = False
                    if inside:
                        bt = t
                        bid = pid
                        nx = ny = nz = 0.0
                        sign = -1.0 if d[ax] > 0 else 1.0
                        if ax == 0:
                            nx = sign
                        elif ax == 1:
                            ny = sign
                        else:
                            nz = sign
            pid += 1
        # room shell
        t_exit = np.inf
        exit_axis = 0
        for ax in range(3):
            dd = d[ax]
            if abs(dd) < 1e-12:
                dd = 1e-12
            ta = (lo[ax] - o[ax]) / dd
            tb = (hi[ax] - o[ax]) / dd
            tm = ta if ta > tb else tb
            if tm < t_exit:
                t_exit = tm
                exit_axis = ax
        if _EPS_T < t_exit < bt and t_exit <= t_far:
            bt = t_exit
            bid = -1
            nx = ny = nz = 0.0
            sign = -1.0 if d[exit_axis] > 0 else 1.0
            if exit_axis == 0:
                nx = sign
            elif exit_axis == 1:
                ny = sign
            else:
                nz = sign
        if bid == -2:
            bt = t_far
        best_t[i] = bt
        best_id[i] = bid
        normals[i, 0] = nx
        normals[i, 1] = ny
        normals[i, 2] = nz
    return best_t, best_id, normals


if USE_NUMBA:
    _composite_weights_jit = njit(cache=True)(_composite_weights_loop)
    _composite_backward_sigma_jit = njit(cache=True)(_composite_backward_sigma_loop)
    _sample_pdf_jit = njit(cache=True)(_sample_pdf_loop)
    _raycast_jit = njit(cache=True)(_raycast_loop)

    composite_weights = _composite_weights_jit
    composite_backward_sigma = _composite_backward_sigma_jit
    sample_pdf = _sample_pdf_jit
    raycast = _raycast_jit
else:
    composite_weights = _composite_weights_np
    composite_backward_sigma = _composite_backward_sigma_np
    sample_pdf = _sample_pdf_np
    raycast = _raycast_np

# both paths, for tests and the benchmark
numpy_impls = {
    "composite_weights": _composite_weights_np,
    "composite_backward_sigma": _composite_backward_sigma_np,
    "sample_pdf": _sample_pdf_np,
    "raycast": _raycast_np,
}
loop_impls = {
    "composite_weights": _composite_weights_loop,
    "composite_backward_sigma": _composite_backward_sigma_loop,
    "sample_pdf": _sample_pdf_loop,
    "raycast": _raycast_loop,
}
