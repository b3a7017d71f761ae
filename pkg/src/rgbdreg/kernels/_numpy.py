"""Pure-numpy kernels: voxel subsampling, radius / KNN search, soft splatting.

These mirror the compiled extension exactly: identical index ordering
(ties broken by ascending candidate index) and identical float64
accumulation order, so either backend can serve the same tests.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import InvalidInputError

_MAX_CELLS = 1 << 20  # per-axis cell budget for packed voxel keys


def _pack_keys(cells: np.ndarray, cmin: np.ndarray, m: int) -> np.ndarray:
    rel = cells - cmin
    return (rel[:, 0] * m + rel[:, 1]) * m + rel[:, 2]


def voxel_subsample(points: np.ndarray, voxel: float):
    """Bucket points by floor(p/voxel); one barycenter per occupied voxel.

    Returns (reps (M,3), parent (N,)) with reps ordered by ascending voxel
    key (lexicographic cell order).
    """
    points = np.asarray(points, dtype=np.float64)
    if voxel <= 0:
        raise InvalidInputError("voxel size must be positive")
    n = points.shape[0]
    if n == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    cells = np.floor(points / voxel).astype(np.int64)
    cmin = cells.min(axis=0)
    m = int((cells - cmin).max()) + 1
    if m > _MAX_CELLS:
        raise InvalidInputError("point extent too large for voxel grid")
    key = _pack_keys(cells, cmin, m)
    uniq, parent, counts = np.unique(key, return_inverse=True, return_counts=True)
    reps = np.zeros((uniq.shape[0], 3))
    np.add.at(reps, parent, points)
    reps /= counts[:, None]
    return reps, parent.astype(np.int64)


def _candidate_pairs(queries: np.ndarray, cands: np.ndarray, radius: float):
    """All (query, candidate) pairs within `radius`, via a uniform cell grid.

    Returns (qi, ci, d2) unsorted (cell-major order).
    """
    nq, nc = queries.shape[0], cands.shape[0]
    if nq == 0 or nc == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e.copy(), np.zeros(0)
    qc = np.floor(queries / radius).astype(np.int64)
    cc = np.floor(cands / radius).astype(np.int64)
    cmin = np.minimum(qc.min(axis=0), cc.min(axis=0))
    m = int(max((qc - cmin).max(), (cc - cmin).max())) + 2
    if m > _MAX_CELLS:
        raise InvalidInputError("point extent too large for search grid")
    ckey = _pack_keys(cc, cmin, m)
    order_c = np.argsort(ckey, kind="stable")
    skey = ckey[order_c]
    ukey, ustart = np.unique(skey, return_index=True)
    ucount = np.diff(np.append(ustart, nc))

    qkey0 = _pack_keys(qc, cmin, m)
    qidx = np.arange(nq, dtype=np.int64)
    qi_parts, ci_parts = [], []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                off = (dx * m + dy) * m + dz
                pos = np.searchsorted(ukey, qkey0 + off)
                ok = (pos < ukey.shape[0])
                ok[ok] &= ukey[pos[ok]] == (qkey0 + off)[ok]
                if not ok.any():
                    continue
                lens = ucount[pos[ok]]
                starts = ustart[pos[ok]]
                total = int(lens.sum())
                within = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
                qi_parts.append(np.repeat(qidx[ok], lens))
                ci_parts.append(order_c[np.repeat(starts, lens) + within])
    if not qi_parts:
        e = np.zeros(0, dtype=np.int64)
        return e, e.copy(), np.zeros(0)
    qi = np.concatenate(qi_parts)
    ci = np.concatenate(ci_parts)
    d = queries[qi] - cands[ci]
    d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
    keep = d2 <= radius * radius
    return qi[keep], ci[keep], d2[keep]


def radius_all(queries: np.ndarray, cands: np.ndarray, radius: float):
    """CSR neighbor lists: every candidate within radius of each query.

    Returns (indptr (Nq+1,), indices) with indices ascending per query.
    """
    queries = np.asarray(queries, dtype=np.float64)
    cands = np.asarray(cands, dtype=np.float64)
    if radius <= 0:
        raise InvalidInputError("radius must be positive")
    qi, ci, _ = _candidate_pairs(queries, cands, radius)
    order = np.lexsort((ci, qi))
    qi, ci = qi[order], ci[order]
    indptr = np.zeros(queries.shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, qi + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, ci


def radius_knn(queries: np.ndarray, cands: np.ndarray, radius: float, k: int):
    """K nearest candidates within radius per query.

    Returns (idx (Nq,k) with -1 padding, count (Nq,)). Slots are ordered by
    ascending distance, ties by ascending candidate index, pads last.
    """
    queries = np.asarray(queries, dtype=np.float64)
    cands = np.asarray(cands, dtype=np.float64)
    if radius <= 0 or k < 1:
        raise InvalidInputError("radius must be positive and k >= 1")
    nq = queries.shape[0]
    idx = np.full((nq, k), -1, dtype=np.int64)
    qi, ci, d2 = _candidate_pairs(queries, cands, radius)
    if qi.shape[0] == 0:
        return idx, np.zeros(nq, dtype=np.int64)
    order = np.lexsort((ci, d2, qi))
    qs, cs = qi[order], ci[order]
    group_start = np.r_[True, qs[1:] != qs[:-1]]
    starts = np.nonzero(group_start)[0]
    rank = np.arange(qs.shape[0]) - np.repeat(starts, np.diff(np.append(starts, qs.shape[0])))
    keep = rank < k
    idx[qs[keep], rank[keep]] = cs[keep]
    count = np.minimum(np.bincount(qi, minlength=nq), k).astype(np.int64)
    return idx, count


def _splat_window(sigma: float) -> int:
    return int(np.floor(3.0 * sigma + 0.5))


def _splat_weights(points, fx, fy, cx, cy, height, width, sigma, tau):
    """Per-point window pixel coords and weights; shared by fwd/bwd.

    Returns (pu, pv, wgt, du, dv, live) each (N, K) with K the window area;
    dead slots have wgt 0.
    """
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    u = fx * x / zs + cx
    v = fy * y / zs + cy
    win = _splat_window(sigma)
    offs = np.arange(-win, win + 1)
    ou, ov = np.meshgrid(offs, offs, indexing="xy")  # row-major over (dv, du)
    pu = np.round(u).astype(np.int64)[:, None] + ou.ravel()[None, :]
    pv = np.round(v).astype(np.int64)[:, None] + ov.ravel()[None, :]
    du = pu - u[:, None]
    dv = pv - v[:, None]
    d2 = du * du + dv * dv
    live = (
        front[:, None]
        & (pu >= 0) & (pu < width) & (pv >= 0) & (pv < height)
        & (d2 <= (3.0 * sigma) ** 2)
    )
    wgt = np.where(live, np.exp(-d2 / (2.0 * sigma * sigma)) * np.exp(-z / tau)[:, None], 0.0)
    return pu, pv, wgt, du, dv, live


def splat_forward(points, colors, fx, fy, cx, cy, height, width, sigma, tau):
    """Accumulate gaussian splats; returns raw sums (wc (H,W,3), wz, w)."""
    points = np.asarray(points, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    sum_wc = np.zeros((height, width, 3))
    sum_wz = np.zeros((height, width))
    sum_w = np.zeros((height, width))
    if points.shape[0] == 0:
        return sum_wc, sum_wz, sum_w
    pu, pv, wgt, _, _, live = _splat_weights(points, fx, fy, cx, cy, height, width, sigma, tau)
    pu_f, pv_f = pu[live], pv[live]
    w_f = wgt[live]
    pt_of = np.broadcast_to(np.arange(points.shape[0])[:, None], live.shape)[live]
    np.add.at(sum_w, (pv_f, pu_f), w_f)
    np.add.at(sum_wz, (pv_f, pu_f), w_f * points[pt_of, 2])
    np.add.at(sum_wc, (pv_f, pu_f), w_f[:, None] * colors[pt_of])
    return sum_wc, sum_wz, sum_w


def splat_backward(points, colors, g_wc, g_wz, g_w, fx, fy, cx, cy,
                   height, width, sigma, tau):
    """Gradients of the raw splat sums w.r.t. points and colors."""
    points = np.asarray(points, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    n = points.shape[0]
    grad_pts = np.zeros((n, 3))
    grad_cols = np.zeros((n, 3))
    if n == 0:
        return grad_pts, grad_cols
    pu, pv, wgt, du, dv, live = _splat_weights(points, fx, fy, cx, cy, height, width, sigma, tau)
    puc = np.clip(pu, 0, width - 1)
    pvc = np.clip(pv, 0, height - 1)
    gc = np.where(live[:, :, None], g_wc[pvc, puc], 0.0)   # (N,K,3)
    gz = np.where(live, g_wz[pvc, puc], 0.0)
    gw = np.where(live, g_w[pvc, puc], 0.0)

    z = points[:, 2]
    zs = np.where(z > 0, z, 1.0)
    # d(sum)/d(pair weight), fixing point attributes
    g_pairw = (gc * colors[:, None, :]).sum(axis=2) + gz * z[:, None] + gw
    # weight = exp(-d2/(2s^2)) * exp(-z/tau); du = pixel_u - u
    s2 = sigma * sigma
    dw_du = wgt * du / s2          # d(weight)/d(proj u): d(d2)/du_proj = -2*du
    dw_dv = wgt * dv / s2
    gu = (g_pairw * dw_du).sum(axis=1)
    gv = (g_pairw * dw_dv).sum(axis=1)
    gw_sum = (g_pairw * wgt).sum(axis=1)
    # direct z path through sum_wz, plus occlusion term dz of weight
    gz_direct = (gz * wgt).sum(axis=1)
    grad_cols = (gc * wgt[:, :, None]).sum(axis=1)
    grad_pts[:, 0] = gu * fx / zs
    grad_pts[:, 1] = gv * fy / zs
    grad_pts[:, 2] = (
        -gu * fx * points[:, 0] / (zs * zs)
        - gv * fy * points[:, 1] / (zs * zs)
        + gz_direct
        - gw_sum / tau
    )
    dead = ~(z > 0)
    grad_pts[dead] = 0.0
    return grad_pts, grad_cols
