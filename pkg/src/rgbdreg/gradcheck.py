"""Central finite-difference verification of every tape op.

Each op has a seeded instance generator producing float64 inputs kept away
from subgradient kinks (relu/abs at 0, splat truncation boundary), a tape
builder ending in a scalar, and the check compares the analytic gradient
against (f(x+eps) - f(x-eps)) / 2eps elementwise.
"""

from __future__ import annotations

import numpy as np

from .tape import Tape

EPS = 1e-4
TOL = 1e-4


def _eval(build, arrays) -> float:
    t = Tape()
    nodes = [t.input(a.copy()) for a in arrays]
    return float(t.val(build(t, nodes)))


def fd_max_rel_error(build, arrays, eps: float = EPS) -> float:
    """Max relative error between analytic and central-FD gradients."""
    t = Tape()
    nodes = [t.input(a.copy()) for a in arrays]
    loss = build(t, nodes)
    t.backward(loss)
    worst = 0.0
    for node, arr in zip(nodes, arrays):
        g = t.grad(node)
        g = np.zeros_like(arr) if g is None else np.asarray(g, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = _eval(build, arrays)
            flat[j] = orig - eps
            fm = _eval(build, arrays)
            flat[j] = orig
            fd = (fp - fm) / (2.0 * eps)
            rel = abs(gflat[j] - fd) / max(abs(gflat[j]), abs(fd), 1e-6)
            worst = max(worst, rel)
    return worst


def _away_from(rng, shape, lo=0.3, hi=1.5):
    """Values with |x| in [lo, hi]: safe for abs/relu/sqrt/div kinks."""
    mag = rng.uniform(lo, hi, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _probe(rng, shape):
    return rng.normal(size=shape)


def _probe_loss(t, out, p):
    return t.sum(t.mul_const(out, p))


# ---- per-op instances ----------------------------------------------------

def _chk_add(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4,))
    p = _probe(rng, (3, 4))
    return (lambda t, n: _probe_loss(t, t.add(n[0], n[1]), p)), [a, b]


def _chk_sub(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    p = _probe(rng, (3, 4))
    return (lambda t, n: _probe_loss(t, t.sub(n[0], n[1]), p)), [a, b]


def _chk_mul(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    p = _probe(rng, (3, 4))
    return (lambda t, n: _probe_loss(t, t.mul(n[0], n[1]), p)), [a, b]


def _chk_div(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 4)), _away_from(rng, (3, 4), lo=0.5, hi=2.0)
    p = _probe(rng, (3, 4))
    return (lambda t, n: _probe_loss(t, t.div(n[0], n[1]), p)), [a, b]


def _chk_neg(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(5,))
    p = _probe(rng, (5,))
    return (lambda t, n: _probe_loss(t, t.neg(n[0]), p)), [a]


def _chk_mul_const(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4))
    c = rng.normal(size=(3, 1))
    p = _probe(rng, (3, 4))
    return (lambda t, n: _probe_loss(t, t.mul_const(n[0], c), p)), [a]


def _chk_add_const(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4))
    c = rng.normal(size=(4,))
    p = _probe(rng, (3, 4))
    return (lambda t, n: _probe_loss(t, t.add_const(n[0], c), p)), [a]


def _chk_leaky_relu(seed):
    rng = np.random.default_rng(seed)
    a = _away_from(rng, (4, 5))
    p = _probe(rng, (4, 5))
    return (lambda t, n: _probe_loss(t, t.leaky_relu(n[0], 0.1), p)), [a]


def _chk_abs(seed):
    rng = np.random.default_rng(seed)
    a = _away_from(rng, (4, 5))
    p = _probe(rng, (4, 5))
    return (lambda t, n: _probe_loss(t, t.abs(n[0]), p)), [a]


def _chk_exp(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.5, 1.5, size=(4, 3))
    p = _probe(rng, (4, 3))
    return (lambda t, n: _probe_loss(t, t.exp(n[0]), p)), [a]


def _chk_sqrt(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.3, 3.0, size=(4, 3))
    p = _probe(rng, (4, 3))
    return (lambda t, n: _probe_loss(t, t.sqrt(n[0]), p)), [a]


def _chk_cast(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 3))
    p = _probe(rng, (4, 3))
    return (lambda t, n: _probe_loss(t, t.cast(n[0], np.float64), p)), [a]


def _chk_matmul(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 5))
    p = _probe(rng, (4, 5))
    return (lambda t, n: _probe_loss(t, t.matmul(n[0], n[1]), p)), [a, b]


def _chk_concat(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 2)), rng.normal(size=(3, 4))
    p = _probe(rng, (3, 6))
    return (lambda t, n: _probe_loss(t, t.concat([n[0], n[1]], axis=1), p)), [a, b]


def _chk_reshape(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4))
    p = _probe(rng, (12,))
    return (lambda t, n: _probe_loss(t, t.reshape(n[0], (12,)), p)), [a]


def _chk_slice_last(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 6))
    p = _probe(rng, (3, 3))
    return (lambda t, n: _probe_loss(t, t.slice_last(n[0], 1, 4), p)), [a]


def _chk_sum(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 3))
    return (lambda t, n: t.sum(n[0])), [a]


def _chk_sum_axis(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 3))
    p = _probe(rng, (4, 1))
    return (lambda t, n: _probe_loss(t, t.sum_axis(n[0], 1, keepdims=True), p)), [a]


def _chk_gather(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(5, 3))
    idx = rng.integers(0, 5, size=(7,))  # repeats exercise accumulation
    p = _probe(rng, (7, 3))
    return (lambda t, n: _probe_loss(t, t.gather(n[0], idx), p)), [a]


def _chk_gather_pad(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(5, 3))
    idx = rng.integers(-1, 5, size=(4, 3))
    p = _probe(rng, (4, 3, 3))
    return (lambda t, n: _probe_loss(t, t.gather_pad(n[0], idx), p)), [a]


def _chk_segment_sum(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(8, 3))
    seg = np.sort(rng.integers(0, 4, size=8))
    p = _probe(rng, (4, 3))
    return (lambda t, n: _probe_loss(t, t.segment_sum(n[0], seg, 4), p)), [a]


def _chk_segment_max(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(8, 3))
    seg = np.sort(rng.integers(0, 4, size=8))
    p = _probe(rng, (4, 3))
    return (lambda t, n: _probe_loss(t, t.segment_max(n[0], seg, 4), p)), [a]


def _chk_max_axis1(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 5, 3))
    p = _probe(rng, (4, 3))
    return (lambda t, n: _probe_loss(t, t.max_axis1(n[0]), p)), [a]


def _chk_upsample2x(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4, 2))
    p = _probe(rng, (6, 8, 2))
    return (lambda t, n: _probe_loss(t, t.upsample2x(n[0]), p)), [a]


def _chk_conv2d(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 4, 2))
    w = rng.normal(size=(3, 3, 2, 3))
    p = _probe(rng, (4, 4, 3))
    return (lambda t, n: _probe_loss(t, t.conv2d(n[0], n[1], stride=1), p)), [x, w]


def _chk_conv2d_s2(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(6, 6, 2))
    w = rng.normal(size=(3, 3, 2, 3))
    p = _probe(rng, (3, 3, 3))
    return (lambda t, n: _probe_loss(t, t.conv2d(n[0], n[1], stride=2), p)), [x, w]


def _splat_scene(seed, n=5, h=9, w=9, sigma=1.0):
    """Points whose footprints stay away from the 3-sigma truncation edge."""
    rng = np.random.default_rng(seed)
    fx = fy = 8.0
    cx = cy = (w - 1) / 2.0
    trunc = 3.0 * sigma
    pts = np.zeros((n, 3))
    for i in range(n):
        for _ in range(200):
            z = rng.uniform(0.5, 2.0)
            u = rng.uniform(1.5, w - 2.5)
            v = rng.uniform(1.5, h - 2.5)
            win = int(np.floor(trunc + 0.5))
            pu = np.round(u) + np.arange(-win, win + 1)
            pv = np.round(v) + np.arange(-win, win + 1)
            dd = np.hypot(pu[None, :] - u, pv[:, None] - v)
            if np.abs(dd - trunc).min() > 5e-3:
                break
        pts[i] = [(u - cx) * z / fx, (v - cy) * z / fy, z]
    cols = rng.uniform(0.05, 0.95, size=(n, 3))
    return pts, cols, (fx, fy, cx, cy, h, w)


def _chk_splat(seed):
    pts, cols, (fx, fy, cx, cy, h, w) = _splat_scene(seed)
    rng = np.random.default_rng(seed + 77)
    p = _probe(rng, (h, w, 5))

    def build(t, n):
        out = t.splat(n[0], n[1], fx, fy, cx, cy, h, w, 1.0, 0.5,
                      position_grads=True)
        return _probe_loss(t, out, p)

    return build, [pts, cols]


# ---- composed graphs -------------------------------------------------------

def _chk_fusion_block(seed):
    """Aggregation MLP + max + residual fusion, as wired in the pipeline."""
    rng = np.random.default_rng(seed)
    nq, k, d = 3, 4, 3
    gathered = rng.normal(size=(nq, k, d))
    query = rng.normal(size=(nq, d))
    w1, b1 = rng.normal(size=(d, d)) * 0.7, rng.normal(size=(d,)) * 0.1
    w2, b2 = rng.normal(size=(d, d)) * 0.7, rng.normal(size=(d,)) * 0.1
    wmap = rng.normal(size=(2 * d, d)) * 0.7
    p = _probe(rng, (nq, d))

    def build(t, n):
        g, q, n1, c1, n2, c2, nm = n
        h = t.reshape(g, (nq * k, d))
        h = t.leaky_relu(t.add(t.matmul(h, n1), c1), 0.1)
        h = t.add(t.matmul(h, n2), c2)
        agg = t.max_axis1(t.reshape(h, (nq, k, d)))
        res = t.matmul(t.concat([agg, q], axis=1), nm)
        return _probe_loss(t, t.add(q, res), p)

    return build, [gathered, query, w1, b1, w2, b2, wmap]


def _chk_render_loss(seed):
    """Splat + masked photometric/geometric losses against a fixed target."""
    pts, cols, (fx, fy, cx, cy, h, w) = _splat_scene(seed, n=4)
    rng = np.random.default_rng(seed + 31)
    target_c = rng.uniform(0, 1, size=(h, w, 3))
    target_z = rng.uniform(0.5, 2.0, size=(h, w))

    def build(t, n):
        out = t.splat(n[0], n[1], fx, fy, cx, cy, h, w, 1.0, 0.5,
                      position_grads=True)
        acc = t.val(out)[..., 4]
        mask = (acc > 1e-6).astype(np.float64)
        cnt = max(mask.sum(), 1.0)
        color = t.slice_last(out, 0, 3)
        depth = t.slice_last(out, 3, 4)
        l_vis = t.mul_const(
            t.sum(t.mul_const(t.abs(t.add_const(color, -target_c)), mask[:, :, None])),
            1.0 / (3.0 * cnt))
        dz = t.add_const(depth, -target_z[:, :, None])
        l_geo = t.mul_const(t.sum(t.mul_const(t.mul(dz, dz), mask[:, :, None])),
                            1.0 / cnt)
        return t.add(l_vis, l_geo)

    return build, [pts, cols]


OP_CHECKS = {
    "add": _chk_add, "sub": _chk_sub, "mul": _chk_mul, "div": _chk_div,
    "neg": _chk_neg, "mul_const": _chk_mul_const, "add_const": _chk_add_const,
    "leaky_relu": _chk_leaky_relu, "abs": _chk_abs, "exp": _chk_exp,
    "sqrt": _chk_sqrt, "cast": _chk_cast, "matmul": _chk_matmul,
    "concat": _chk_concat, "reshape": _chk_reshape, "slice_last": _chk_slice_last,
    "sum": _chk_sum, "sum_axis": _chk_sum_axis, "gather": _chk_gather,
    "gather_pad": _chk_gather_pad, "segment_sum": _chk_segment_sum,
    "segment_max": _chk_segment_max, "max_axis1": _chk_max_axis1,
    "upsample2x": _chk_upsample2x, "conv2d": _chk_conv2d,
    "conv2d_s2": _chk_conv2d_s2, "splat": _chk_splat,
    "fusion_block": _chk_fusion_block, "render_loss": _chk_render_loss,
}


def run_gradcheck(ops: list[str] | None = None, seeds: int = 20,
                  eps: float = EPS) -> dict[str, float]:
    """Run FD checks; returns {op: max relative error over seeds}."""
    names = list(OP_CHECKS) if ops is None else ops
    results = {}
    for name in names:
        gen = OP_CHECKS[name]
        worst = 0.0
        for seed in range(seeds):
            build, arrays = gen(seed)
            worst = max(worst, fd_max_rel_error(build, arrays, eps=eps))
        results[name] = worst
    return results
