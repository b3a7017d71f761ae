"""Reverse-mode gradient tape over a fixed op vocabulary.

Ops are recorded eagerly; values live on the tape as numpy arrays of
whatever dtype the caller feeds (feature math runs in float32, gradient
verification in float64). ``backward`` walks the records once in reverse.

Subgradient conventions: max-style ops route the upstream gradient to the
first (lowest-index) argmax slot; gather/scatter indices are constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .exceptions import ConfigurationError, UsageError


@dataclass
class _Record:
    kind: str
    out: int
    ins: tuple[int, ...]
    ctx: dict


class Tape:
    def __init__(self):
        self._values: list[np.ndarray] = []
        self._records: list[_Record] = []
        self._param_names: dict[int, str] = {}
        self._grads: list[np.ndarray | None] | None = None

    # ---- node management ------------------------------------------------

    def _new(self, value: np.ndarray) -> int:
        self._values.append(np.asarray(value))
        return len(self._values) - 1

    def input(self, value) -> int:
        """Leaf node (activations, constants that may still receive grads)."""
        return self._new(value)

    def param(self, name: str, value) -> int:
        node = self._new(value)
        self._param_names[node] = name
        return node

    def val(self, node: int) -> np.ndarray:
        return self._values[node]

    def grad(self, node: int) -> np.ndarray | None:
        if self._grads is None:
            raise UsageError("backward has not been run")
        return self._grads[node]

    def _record(self, kind: str, ins: tuple[int, ...], value, ctx: dict | None = None) -> int:
        out = self._new(value)
        self._records.append(_Record(kind, out, ins, ctx or {}))
        return out

    # ---- elementwise ----------------------------------------------------

    def add(self, a: int, b: int) -> int:
        return self._record("add", (a, b), self._values[a] + self._values[b])

    def sub(self, a: int, b: int) -> int:
        return self._record("sub", (a, b), self._values[a] - self._values[b])

    def mul(self, a: int, b: int) -> int:
        return self._record("mul", (a, b), self._values[a] * self._values[b])

    def div(self, a: int, b: int) -> int:
        return self._record("div", (a, b), self._values[a] / self._values[b])

    def neg(self, a: int) -> int:
        return self._record("neg", (a,), -self._values[a])

    def mul_const(self, a: int, c) -> int:
        return self._record("mul_const", (a,), self._values[a] * c, {"c": c})

    def add_const(self, a: int, c) -> int:
        return self._record("add_const", (a,), self._values[a] + c)

    def leaky_relu(self, a: int, slope: float = 0.1) -> int:
        x = self._values[a]
        return self._record("leaky_relu", (a,), np.where(x > 0, x, slope * x),
                            {"slope": slope})

    def abs(self, a: int) -> int:
        return self._record("abs", (a,), np.abs(self._values[a]))

    def exp(self, a: int) -> int:
        return self._record("exp", (a,), np.exp(self._values[a]))

    def sqrt(self, a: int) -> int:
        return self._record("sqrt", (a,), np.sqrt(self._values[a]))

    def cast(self, a: int, dtype) -> int:
        return self._record("cast", (a,), self._values[a].astype(dtype),
                            {"src_dtype": self._values[a].dtype})

    # ---- linear algebra / shape ------------------------------------------

    def matmul(self, a: int, b: int) -> int:
        return self._record("matmul", (a, b), self._values[a] @ self._values[b])

    def linear(self, x: int, w: int, b: int | None = None) -> int:
        y = self.matmul(x, w)
        return self.add(y, b) if b is not None else y

    def concat(self, nodes: list[int], axis: int = -1) -> int:
        vals = [self._values[n] for n in nodes]
        return self._record("concat", tuple(nodes), np.concatenate(vals, axis=axis),
                            {"axis": axis, "sizes": [v.shape[axis] for v in vals]})

    def reshape(self, a: int, shape) -> int:
        return self._record("reshape", (a,), self._values[a].reshape(shape),
                            {"in_shape": self._values[a].shape})

    def slice_last(self, a: int, start: int, stop: int) -> int:
        return self._record("slice_last", (a,), self._values[a][..., start:stop],
                            {"start": start, "stop": stop,
                             "size": self._values[a].shape[-1]})

    def sum(self, a: int) -> int:
        return self._record("sum", (a,), np.asarray(self._values[a].sum()))

    def sum_axis(self, a: int, axis: int, keepdims: bool = False) -> int:
        return self._record("sum_axis", (a,),
                            self._values[a].sum(axis=axis, keepdims=keepdims),
                            {"axis": axis, "keepdims": keepdims,
                             "in_shape": self._values[a].shape})

    # ---- gather / scatter -------------------------------------------------

    def gather(self, a: int, idx: np.ndarray) -> int:
        idx = np.asarray(idx, dtype=np.int64)
        return self._record("gather", (a,), self._values[a][idx], {"idx": idx})

    def gather_pad(self, a: int, idx: np.ndarray) -> int:
        """Row gather where index -1 yields the null (zero) feature."""
        idx = np.asarray(idx, dtype=np.int64)
        x = self._values[a]
        out = x[np.clip(idx, 0, None)]
        out[idx < 0] = 0
        return self._record("gather_pad", (a,), out, {"idx": idx})

    def segment_sum(self, a: int, seg: np.ndarray, num: int) -> int:
        seg = np.asarray(seg, dtype=np.int64)
        x = self._values[a]
        out = np.zeros((num,) + x.shape[1:], dtype=x.dtype)
        np.add.at(out, seg, x)
        return self._record("segment_sum", (a,), out, {"seg": seg})

    def segment_max(self, a: int, seg: np.ndarray, num: int) -> int:
        """Per-segment max; empty segments yield 0 and receive no gradient."""
        seg = np.asarray(seg, dtype=np.int64)
        x = self._values[a]
        n, d = x.shape
        out = np.full((num, d), -np.inf, dtype=x.dtype)
        np.maximum.at(out, seg, x)
        empty = np.isinf(out)
        out[empty] = 0
        winner = np.full((num, d), n, dtype=np.int64)
        idxmat = np.where(x == out[seg], np.arange(n, dtype=np.int64)[:, None], n)
        np.minimum.at(winner, seg, idxmat)
        winner[empty] = n
        return self._record("segment_max", (a,), out, {"winner": winner, "n": n})

    def max_axis1(self, a: int) -> int:
        """(N, K, d) -> (N, d) max over the K slots; ties to the lowest slot."""
        x = self._values[a]
        return self._record("max_axis1", (a,), x.max(axis=1),
                            {"argmax": x.argmax(axis=1)})

    def upsample2x(self, a: int) -> int:
        x = self._values[a]
        return self._record("upsample2x", (a,), np.repeat(np.repeat(x, 2, 0), 2, 1))

    # ---- convolution ------------------------------------------------------

    def conv2d(self, x: int, w: int, stride: int = 1) -> int:
        """3x3 same-padding convolution on (H, W, Cin) with (3, 3, Cin, Cout)."""
        xv, wv = self._values[x], self._values[w]
        if xv.ndim != 3 or wv.ndim != 4 or wv.shape[:2] != (3, 3):
            raise ConfigurationError("conv2d expects (H,W,Cin) input and (3,3,Cin,Cout) kernel")
        if xv.shape[2] != wv.shape[2]:
            raise ConfigurationError(
                f"conv2d channel mismatch: input {xv.shape[2]}, kernel {wv.shape[2]}")
        if stride not in (1, 2):
            raise ConfigurationError("conv2d stride must be 1 or 2")
        cols, ys, xs = _im2col(xv, stride)
        cout = wv.shape[3]
        out = cols @ wv.reshape(-1, cout)
        ho, wo = xv.shape[0] // stride, xv.shape[1] // stride
        return self._record("conv2d", (x, w), out.reshape(ho, wo, cout),
                            {"stride": stride})

    # ---- renderer -----------------------------------------------------------

    def splat(self, points: int, colors: int, fx: float, fy: float, cx: float,
              cy: float, height: int, width: int, sigma: float, tau: float,
              position_grads: bool = True) -> int:
        """Soft point splatting; output (H, W, 5) = [rgb, depth, accum].

        Pixels with zero accumulation hold the background (0 color, 0 depth).
        """
        pv, cv = self._values[points], self._values[colors]
        sum_wc, sum_wz, sum_w = kernels.splat_forward(
            pv, cv, fx, fy, cx, cy, height, width, sigma, tau)
        pos = sum_w > 0
        safe = np.where(pos, sum_w, 1.0)
        color = np.where(pos[:, :, None], sum_wc / safe[:, :, None], 0.0)
        depth = np.where(pos, sum_wz / safe, 0.0)
        out = np.concatenate([color, depth[:, :, None], sum_w[:, :, None]], axis=2)
        ctx = {"fx": fx, "fy": fy, "cx": cx, "cy": cy, "h": height, "w": width,
               "sigma": sigma, "tau": tau, "color": color, "depth": depth,
               "safe": safe, "pos": pos, "position_grads": position_grads}
        return self._record("splat", (points, colors), out, ctx)

    # ---- backward -----------------------------------------------------------

    def backward(self, loss: int) -> dict[str, np.ndarray]:
        """Accumulate d(loss)/d(node) for every node; returns grads by param name."""
        if not self._records:
            raise UsageError("backward called on an empty tape")
        lv = self._values[loss]
        if lv.size != 1:
            raise UsageError("loss node must be scalar")
        grads: list[np.ndarray | None] = [None] * len(self._values)
        grads[loss] = np.ones_like(lv)
        for rec in reversed(self._records):
            g = grads[rec.out]
            if g is None:
                continue
            for node, gin in zip(rec.ins, _BACKWARD[rec.kind](self, rec, g)):
                if gin is None:
                    continue
                if grads[node] is None:
                    grads[node] = gin.astype(self._values[node].dtype, copy=True) \
                        if gin.dtype != self._values[node].dtype else gin.copy()
                else:
                    grads[node] += gin.astype(self._values[node].dtype, copy=False) \
                        if gin.dtype != self._values[node].dtype else gin
        self._grads = grads
        return {name: grads[node] if grads[node] is not None
                else np.zeros_like(self._values[node])
                for node, name in self._param_names.items()}


# im2col index cache keyed by (H, W, stride)
_COL_CACHE: dict[tuple[int, int, int], tuple[np.ndarray, np.ndarray]] = {}


def _col_indices(h: int, w: int, stride: int):
    key = (h, w, stride)
    if key not in _COL_CACHE:
        oy = np.arange(0, h, stride)
        ox = np.arange(0, w, stride)
        ky = np.arange(3)
        ys = oy[:, None, None, None] + ky[None, None, :, None]         # padded row
        xs = ox[None, :, None, None] + ky[None, None, None, :]         # padded col
        ys = np.broadcast_to(ys, (len(oy), len(ox), 3, 3)).copy()
        xs = np.broadcast_to(xs, (len(oy), len(ox), 3, 3)).copy()
        _COL_CACHE[key] = (ys, xs)
    return _COL_CACHE[key]


def _im2col(x: np.ndarray, stride: int):
    h, w, cin = x.shape
    ys, xs = _col_indices(h, w, stride)
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    cols = xp[ys, xs]                                  # (ho, wo, 3, 3, cin)
    ho, wo = h // stride, w // stride
    return cols.reshape(ho * wo, 9 * cin), ys, xs


def _reduce_broadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape` (undo numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _bw_add(tape, rec, g):
    a, b = rec.ins
    return (_reduce_broadcast(g, tape._values[a].shape),
            _reduce_broadcast(g, tape._values[b].shape))


def _bw_sub(tape, rec, g):
    a, b = rec.ins
    return (_reduce_broadcast(g, tape._values[a].shape),
            _reduce_broadcast(-g, tape._values[b].shape))


def _bw_mul(tape, rec, g):
    a, b = rec.ins
    va, vb = tape._values[a], tape._values[b]
    return (_reduce_broadcast(g * vb, va.shape), _reduce_broadcast(g * va, vb.shape))


def _bw_div(tape, rec, g):
    a, b = rec.ins
    va, vb = tape._values[a], tape._values[b]
    return (_reduce_broadcast(g / vb, va.shape),
            _reduce_broadcast(-g * va / (vb * vb), vb.shape))


def _bw_neg(tape, rec, g):
    return (-g,)


def _bw_mul_const(tape, rec, g):
    return (_reduce_broadcast(g * rec.ctx["c"], tape._values[rec.ins[0]].shape),)


def _bw_add_const(tape, rec, g):
    return (_reduce_broadcast(g, tape._values[rec.ins[0]].shape),)


def _bw_leaky_relu(tape, rec, g):
    x = tape._values[rec.ins[0]]
    return (g * np.where(x > 0, 1.0, rec.ctx["slope"]),)


def _bw_abs(tape, rec, g):
    return (g * np.sign(tape._values[rec.ins[0]]),)


def _bw_exp(tape, rec, g):
    return (g * tape._values[rec.out],)


def _bw_sqrt(tape, rec, g):
    return (g * 0.5 / tape._values[rec.out],)


def _bw_cast(tape, rec, g):
    return (g.astype(rec.ctx["src_dtype"]),)


def _bw_matmul(tape, rec, g):
    a, b = rec.ins
    va, vb = tape._values[a], tape._values[b]
    return (g @ vb.T, va.T @ g)


def _bw_concat(tape, rec, g):
    axis = rec.ctx["axis"]
    splits = np.cumsum(rec.ctx["sizes"][:-1])
    return tuple(np.split(g, splits, axis=axis))


def _bw_reshape(tape, rec, g):
    return (g.reshape(rec.ctx["in_shape"]),)


def _bw_slice_last(tape, rec, g):
    x = tape._values[rec.ins[0]]
    gx = np.zeros_like(x, dtype=g.dtype)
    gx[..., rec.ctx["start"]:rec.ctx["stop"]] = g
    return (gx,)


def _bw_sum(tape, rec, g):
    return (np.broadcast_to(g, tape._values[rec.ins[0]].shape).copy(),)


def _bw_sum_axis(tape, rec, g):
    shape = rec.ctx["in_shape"]
    if not rec.ctx["keepdims"]:
        g = np.expand_dims(g, rec.ctx["axis"])
    return (np.broadcast_to(g, shape).copy(),)


def _bw_gather(tape, rec, g):
    x = tape._values[rec.ins[0]]
    gx = np.zeros_like(x, dtype=g.dtype)
    np.add.at(gx, rec.ctx["idx"], g)
    return (gx,)


def _bw_gather_pad(tape, rec, g):
    x = tape._values[rec.ins[0]]
    idx = rec.ctx["idx"]
    gx = np.zeros_like(x, dtype=g.dtype)
    valid = idx >= 0
    np.add.at(gx, idx[valid], g[valid])
    return (gx,)


def _bw_segment_sum(tape, rec, g):
    return (g[rec.ctx["seg"]],)


def _bw_segment_max(tape, rec, g):
    x = tape._values[rec.ins[0]]
    winner, n = rec.ctx["winner"], rec.ctx["n"]
    gx = np.zeros_like(x, dtype=g.dtype)
    jj, dd = np.nonzero(winner < n)
    np.add.at(gx, (winner[jj, dd], dd), g[jj, dd])
    return (gx,)


def _bw_max_axis1(tape, rec, g):
    x = tape._values[rec.ins[0]]
    gx = np.zeros_like(x, dtype=g.dtype)
    np.put_along_axis(gx, rec.ctx["argmax"][:, None, :], g[:, None, :], axis=1)
    return (gx,)


def _bw_upsample2x(tape, rec, g):
    h2, w2, c = g.shape
    return (g.reshape(h2 // 2, 2, w2 // 2, 2, c).sum(axis=(1, 3)),)


def _bw_conv2d(tape, rec, g):
    x, w = rec.ins
    xv, wv = tape._values[x], tape._values[w]
    stride = rec.ctx["stride"]
    cols, ys, xs = _im2col(xv, stride)
    cout = wv.shape[3]
    gflat = g.reshape(-1, cout)
    gw = (cols.T @ gflat).reshape(wv.shape)
    gcols = (gflat @ wv.reshape(-1, cout).T).reshape(ys.shape + (xv.shape[2],))
    gxp = np.zeros((xv.shape[0] + 2, xv.shape[1] + 2, xv.shape[2]), dtype=g.dtype)
    np.add.at(gxp, (ys, xs), gcols)
    return (gxp[1:-1, 1:-1, :], gw)


def _bw_splat(tape, rec, g):
    c = rec.ctx
    pos, safe = c["pos"], c["safe"]
    g_c = g[..., 0:3]
    g_d = g[..., 3]
    g_a = g[..., 4]
    g_wc = np.where(pos[:, :, None], g_c / safe[:, :, None], 0.0)
    g_wz = np.where(pos, g_d / safe, 0.0)
    g_w = g_a + np.where(
        pos, -((g_c * c["color"]).sum(axis=2) + g_d * c["depth"]) / safe, 0.0)
    pts, cols = tape._values[rec.ins[0]], tape._values[rec.ins[1]]
    gp, gc = kernels.splat_backward(pts, cols, g_wc, g_wz, g_w, c["fx"], c["fy"],
                                    c["cx"], c["cy"], c["h"], c["w"],
                                    c["sigma"], c["tau"])
    return (gp if c["position_grads"] else None, gc)


_BACKWARD = {
    "add": _bw_add, "sub": _bw_sub, "mul": _bw_mul, "div": _bw_div,
    "neg": _bw_neg, "mul_const": _bw_mul_const, "add_const": _bw_add_const,
    "leaky_relu": _bw_leaky_relu, "abs": _bw_abs, "exp": _bw_exp,
    "sqrt": _bw_sqrt, "cast": _bw_cast, "matmul": _bw_matmul,
    "concat": _bw_concat, "reshape": _bw_reshape, "slice_last": _bw_slice_last,
    "sum": _bw_sum, "sum_axis": _bw_sum_axis, "gather": _bw_gather,
    "gather_pad": _bw_gather_pad, "segment_sum": _bw_segment_sum,
    "segment_max": _bw_segment_max, "max_axis1": _bw_max_axis1,
    "upsample2x": _bw_upsample2x, "conv2d": _bw_conv2d, "splat": _bw_splat,
}

OP_KINDS = tuple(sorted(_BACKWARD))
