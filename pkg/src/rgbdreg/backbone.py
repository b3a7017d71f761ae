"""Reduced two-branch feature extractor: U-shaped, three scales per branch.

Levels 0-2 are the encoder (visual strides 1/2/4, voxel doubling per
level), levels 3-5 the decoder (stride 4/2/1). The visual branch is a
small conv net; the geometric branch is a density-normalized point conv:
per-neighbor MLP on (relative offset (+) neighbor feature), summed and
divided by the neighbor count, pooled to the coarser level by max over
voxel children.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .config import PipelineConfig
from .exceptions import InvalidInputError
from .tape import Tape


@dataclass(frozen=True)
class ScaleLevel:
    index: int
    stride: int
    voxel: float

    def __post_init__(self):
        expected = 2 ** min(self.index, 5 - self.index)
        if self.stride != expected:
            raise InvalidInputError(f"level {self.index} must have stride {expected}")


def scale_levels(cfg: PipelineConfig) -> list[ScaleLevel]:
    out = []
    for lvl in range(6):
        stride = 2 ** min(lvl, 5 - lvl)
        voxel = cfg.base_voxel * (2 ** min(lvl, 5 - lvl))
        out.append(ScaleLevel(lvl, stride, voxel))
    return out


def level_radius(cfg: PipelineConfig, lvl: int) -> float:
    return cfg.radius_scale * scale_levels(cfg)[lvl].voxel


def grid_subsample(points: np.ndarray, voxel: float):
    """One representative (barycenter) per occupied voxel + parent map."""
    return kernels.voxel_subsample(points, voxel)


class TapeParams:
    """Lazily mirrors a weights bundle onto a tape as param nodes."""

    def __init__(self, tape: Tape, bundle: dict[str, np.ndarray]):
        self.tape = tape
        self.bundle = bundle
        self._nodes: dict[str, int] = {}

    def node(self, name: str) -> int:
        if name not in self._nodes:
            self._nodes[name] = self.tape.param(name, self.bundle[name])
        return self._nodes[name]


# ---- visual branch ---------------------------------------------------------


def visual_forward_stage(t: Tape, params: TapeParams, lvl: int, x: int,
                         skip: int | None = None, slope: float = 0.1) -> int:
    """One visual stage; encoder levels take the previous level's grid,
    decoder levels 4/5 additionally take the matching encoder skip."""
    if lvl in (0, 1, 2):
        stride = 1 if lvl == 0 else 2
        y = t.conv2d(x, params.node(f"visual.enc{lvl}.conv1.w"), stride=stride)
        y = t.leaky_relu(t.add(y, params.node(f"visual.enc{lvl}.conv1.b")), slope)
        y = t.conv2d(y, params.node(f"visual.enc{lvl}.conv2.w"), stride=1)
        return t.leaky_relu(t.add(y, params.node(f"visual.enc{lvl}.conv2.b")), slope)
    if lvl == 3:
        y = t.conv2d(x, params.node("visual.dec3.conv.w"), stride=1)
        return t.leaky_relu(t.add(y, params.node("visual.dec3.conv.b")), slope)
    if lvl in (4, 5):
        if skip is None:
            raise InvalidInputError(f"decoder level {lvl} needs a skip input")
        up = t.upsample2x(x)
        y = t.concat([up, skip], axis=2)
        y = t.conv2d(y, params.node(f"visual.dec{lvl}.conv.w"), stride=1)
        return t.leaky_relu(t.add(y, params.node(f"visual.dec{lvl}.conv.b")), slope)
    raise InvalidInputError(f"no such level: {lvl}")


def visual_head(t: Tape, params: TapeParams, x: int) -> int:
    h, w, c = t.val(x).shape
    y = t.reshape(x, (h * w, c))
    y = t.add(t.matmul(y, params.node("visual.head.w")), params.node("visual.head.b"))
    return t.reshape(y, (h, w, t.val(y).shape[-1]))


# ---- geometric branch ------------------------------------------------------


@dataclass
class GeometricStagePlan:
    """Precomputed neighbor structure for one point-conv stage.

    Pairs are (query seg[i], neighbor nb[i]); queries with no neighbor in
    radius get a synthetic self pair with zero offset (the self-neighbor
    fallback), which is also what a lone point receives.
    """

    seg: np.ndarray        # (T,) int64
    nb: np.ndarray         # (T,) int64
    rel: np.ndarray        # (T,3) float32
    inv_count: np.ndarray  # (nq,1) float32
    nq: int
    pool_parent: np.ndarray | None = None
    n_coarse: int | None = None


def build_stage_plan(points: np.ndarray, radius: float,
                     pool_parent: np.ndarray | None = None,
                     n_coarse: int | None = None) -> GeometricStagePlan:
    nq = points.shape[0]
    indptr, nb = kernels.radius_all(points, points, radius)
    counts = np.diff(indptr)
    seg = np.repeat(np.arange(nq, dtype=np.int64), counts)
    lonely = np.nonzero(counts == 0)[0]
    if lonely.size:
        seg = np.concatenate([seg, lonely])
        nb = np.concatenate([nb, lonely])
        order = np.argsort(seg, kind="stable")
        seg, nb = seg[order], nb[order]
        counts = counts.copy()
        counts[lonely] = 1
    rel = (points[nb] - points[seg]).astype(np.float32)
    inv_count = (1.0 / counts.astype(np.float64))[:, None].astype(np.float32)
    return GeometricStagePlan(seg, nb, rel, inv_count, nq, pool_parent, n_coarse)


def geometric_forward_stage(t: Tape, params: TapeParams, prefix: str,
                            feats: int, plan: GeometricStagePlan,
                            slope: float = 0.1) -> int:
    """Density-normalized point conv (+ optional max pooling to the coarser
    level when the plan carries a pool_parent map)."""
    nb_feat = t.gather(feats, plan.nb)
    rel = t.input(plan.rel)
    h = t.concat([rel, nb_feat], axis=1)
    h = t.add(t.matmul(h, params.node(f"{prefix}.nbr.w")), params.node(f"{prefix}.nbr.b"))
    h = t.leaky_relu(h, slope)
    agg = t.segment_sum(h, plan.seg, plan.nq)
    agg = t.mul_const(agg, plan.inv_count)
    y = t.add(t.matmul(agg, params.node(f"{prefix}.post.w")),
              params.node(f"{prefix}.post.b"))
    y = t.leaky_relu(y, slope)
    if plan.pool_parent is not None:
        y = t.segment_max(y, plan.pool_parent, plan.n_coarse)
    return y


def geometric_decoder_stage(t: Tape, params: TapeParams, prefix: str,
                            coarse_feats: int, parent_map: np.ndarray,
                            skip: int, slope: float = 0.1) -> int:
    """Nearest-parent upsample + skip concat + pointwise MLP."""
    up = t.gather(coarse_feats, parent_map)
    y = t.concat([up, skip], axis=1)
    y = t.add(t.matmul(y, params.node(f"{prefix}.mlp.w")),
              params.node(f"{prefix}.mlp.b"))
    return t.leaky_relu(y, slope)


def geometric_head(t: Tape, params: TapeParams, feats: int,
                   full_parent: np.ndarray) -> int:
    """Map level-0 features to the output dim and copy to full-res points."""
    y = t.add(t.matmul(feats, params.node("geometric.head.w")),
              params.node("geometric.head.b"))
    return t.gather(y, full_parent)


@dataclass
class PointHierarchy:
    """Subsampled point sets Q0..Q2 with parent maps and stage radii."""

    full_points: np.ndarray
    levels: list[np.ndarray]     # [Q0, Q1, Q2]
    parents: list[np.ndarray]    # [full->Q0, Q0->Q1, Q1->Q2]

    def level_points(self, lvl: int) -> np.ndarray:
        # levels 0..5 map onto [Q0, Q1, Q2, Q2, Q1, Q0]
        return self.levels[min(lvl, 5 - lvl)]


def build_hierarchy(points: np.ndarray, cfg: PipelineConfig) -> PointHierarchy:
    voxels = [cfg.base_voxel, cfg.base_voxel * 2, cfg.base_voxel * 4]
    q0, p0 = grid_subsample(points, voxels[0])
    q1, p1 = grid_subsample(q0, voxels[1])
    q2, p2 = grid_subsample(q1, voxels[2])
    return PointHierarchy(points, [q0, q1, q2], [p0, p1, p2])
