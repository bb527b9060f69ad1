"""Adaptive 2^k-tree subdivision with conservative cell labels.

The tree itself (:class:`CellTree`, :func:`build_tree`) is dimension-generic
and knows nothing about kinematics: it refines every cell whose label is a
boundary label until ``max_depth`` levels exist.  Cells are stored with
integer dyadic coordinates (level, per-axis index) so partition checks and
adjacency are exact.

The workspace instantiation (:func:`classify_cells`,
:func:`build_workspace_tree`) labels planar cells for one working mode by
probing a regular grid inside each cell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable

import numpy as np

from .kinematics import ManipulatorGeometry, WorkingMode, branch_arrays


class LeafBudgetExceeded(RuntimeError):
    """The tree would hold more leaves than the configured cap."""


class CellLabel(IntEnum):
    OUTSIDE = 0
    FREE = 1
    SERIAL_BOUNDARY = 2
    PARALLEL_BOUNDARY = 3
    MIXED_BOUNDARY = 4

    @property
    def title(self) -> str:
        return _TITLES[self]

    @classmethod
    def from_title(cls, text: str) -> "CellLabel":
        for label, name in _TITLES.items():
            if name == text:
                return label
        raise ValueError(f"unknown cell label {text!r}")

    @property
    def is_boundary(self) -> bool:
        return self >= CellLabel.SERIAL_BOUNDARY


_TITLES = {
    CellLabel.OUTSIDE: "Outside",
    CellLabel.FREE: "Free",
    CellLabel.SERIAL_BOUNDARY: "SerialBoundary",
    CellLabel.PARALLEL_BOUNDARY: "ParallelBoundary",
    CellLabel.MIXED_BOUNDARY: "MixedBoundary",
}


@dataclass(frozen=True)
class CellBox:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("box corners must have the same nonzero dimension")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ValueError(f"box requires lo < hi componentwise, got {lo} / {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def k(self) -> int:
        return len(self.lo)

    @property
    def diam(self) -> float:
        return math.dist(self.lo, self.hi)

    @property
    def volume(self) -> float:
        return math.prod(b - a for a, b in zip(self.lo, self.hi))

    def contains(self, point) -> bool:
        return all(a <= p <= b for a, p, b in zip(self.lo, point, self.hi))


@dataclass(frozen=True)
class DecompositionConfig:
    max_depth: int = 8
    samples_per_axis: int = 3
    kappa_a: float = 0.05
    kappa_b: float = 0.05
    leaf_budget: int = 1_000_000

    def __post_init__(self):
        if not 1 <= self.max_depth <= 20:
            raise ValueError(f"max_depth must lie in [1, 20], got {self.max_depth}")
        if self.samples_per_axis < 2:
            raise ValueError(f"samples_per_axis must be >= 2, got {self.samples_per_axis}")
        if self.kappa_a < 0 or self.kappa_b < 0:
            raise ValueError("kappa_a and kappa_b must be non-negative")
        if self.leaf_budget < 1:
            raise ValueError("leaf_budget must be positive")

    def tau_a(self, diam):
        return self.kappa_a * diam

    def tau_b(self, diam):
        return self.kappa_b * diam


# A batch classifier maps (lo, hi) arrays of shape (n, k) plus a flag telling
# whether the cells are at the finest level to labels (n,) and a per-cell
# summary array (n, m).
BatchClassifier = Callable[[np.ndarray, np.ndarray, bool], tuple[np.ndarray, np.ndarray]]


class CellTree:
    """Leaves of a 2^k-tree over ``root`` plus the derived node structure.

    Leaves are kept in Morton (Z) order of their lower corner, which is the
    depth-first order with children enumerated by binary counting over axes.
    Level 0 is the root, so a tree with ``max_depth`` levels has finest
    level ``max_depth - 1``.
    """

    def __init__(self, root: CellBox, max_depth: int, levels, indices, labels, summary):
        self.root = root
        self.max_depth = int(max_depth)
        levels = np.asarray(levels, dtype=np.int64).reshape(-1)
        indices = np.asarray(indices, dtype=np.int64).reshape(len(levels), root.k)
        labels = np.asarray(labels, dtype=np.int8).reshape(-1)
        summary = np.asarray(summary, dtype=float).reshape(len(levels), -1)
        order = np.argsort(self._morton(levels, indices), kind="stable")
        self.levels = levels[order]
        self.indices = indices[order]
        self.labels = labels[order]
        self.summary = summary[order]
        self._grid = None
        self._build_nodes()

    # -- geometry -----------------------------------------------------------
    @property
    def k(self) -> int:
        return self.root.k

    @property
    def n_leaves(self) -> int:
        return len(self.levels)

    @property
    def finest_level(self) -> int:
        return self.max_depth - 1

    @property
    def finest_shape(self) -> tuple[int, ...]:
        return (1 << self.finest_level,) * self.k

    @property
    def finest_cell_size(self) -> np.ndarray:
        span = np.subtract(self.root.hi, self.root.lo)
        return span / (1 << self.finest_level)

    @property
    def finest_cell_volume(self) -> float:
        return float(np.prod(self.finest_cell_size))

    @property
    def finest_cell_diam(self) -> float:
        return float(np.linalg.norm(self.finest_cell_size))

    def finest_spans(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-leaf ``[start, stop)`` indices on the finest grid, shape (n, k)."""
        scale = (1 << (self.finest_level - self.levels))[:, None]
        start = self.indices * scale
        return start, start + scale

    def leaf_bounds(self, ids=None) -> tuple[np.ndarray, np.ndarray]:
        levels = self.levels if ids is None else self.levels[ids]
        indices = self.indices if ids is None else self.indices[ids]
        lo0 = np.asarray(self.root.lo)
        span = np.subtract(self.root.hi, self.root.lo)
        size = span / (1 << levels)[:, None].astype(float)
        lo = lo0 + indices * size
        return lo, lo + size

    def leaf_box(self, leaf_id: int) -> CellBox:
        lo, hi = self.leaf_bounds([leaf_id])
        return CellBox(tuple(lo[0]), tuple(hi[0]))

    def leaf_volumes(self) -> np.ndarray:
        return self.root.volume / (1 << (self.levels * self.k)).astype(float)

    def label_volume(self, label: CellLabel) -> float:
        return float(self.leaf_volumes()[self.labels == label].sum())

    # -- structure ----------------------------------------------------------
    def _morton(self, levels, indices) -> np.ndarray:
        fl = self.max_depth - 1
        if self.root.k * fl > 63:
            raise ValueError("Morton keys need k * (max_depth - 1) <= 63")
        start = (indices << (fl - levels)[:, None]).astype(np.uint64)
        key = np.zeros(len(levels), dtype=np.uint64)
        for bit in range(fl):
            for axis in range(self.root.k):
                b = (start[:, axis] >> np.uint64(bit)) & np.uint64(1)
                key |= b << np.uint64(bit * self.root.k + axis)
        return key

    def morton_keys(self) -> np.ndarray:
        return self._morton(self.levels, self.indices)

    def _build_nodes(self):
        k = self.k
        leaf_of = {(int(l), *map(int, ix)): i for i, (l, ix) in enumerate(zip(self.levels, self.indices))}
        offsets = [tuple((c >> a) & 1 for a in range(k)) for c in range(1 << k)]
        node_level, node_index, node_leaf, children = [0], [(0,) * k], [], []
        head = 0
        while head < len(node_level):
            lvl, ix = node_level[head], node_index[head]
            leaf = leaf_of.get((lvl, *ix))
            node_leaf.append(-1 if leaf is None else leaf)
            if leaf is None:
                if lvl >= self.finest_level:
                    raise ValueError("leaves do not tile the root box")
                first = len(node_level)
                for off in offsets:
                    node_level.append(lvl + 1)
                    node_index.append(tuple(2 * i + o for i, o in zip(ix, off)))
                children.append(list(range(first, first + len(offsets))))
            else:
                children.append([-1] * len(offsets))
            head += 1
        if len(leaf_of) != sum(1 for v in node_leaf if v >= 0):
            raise ValueError("leaves overlap or lie outside the root box")
        self.node_level = np.asarray(node_level, dtype=np.int64)
        self.node_index = np.asarray(node_index, dtype=np.int64).reshape(-1, k)
        self.node_leaf = np.asarray(node_leaf, dtype=np.int64)
        self.children = np.asarray(children, dtype=np.int64).reshape(-1, 1 << k)

    def find_leaf(self, point) -> int | None:
        """Leaf containing ``point`` (half-open cells, closed at the root's upper faces)."""
        lo = np.asarray(self.root.lo)
        hi = np.asarray(self.root.hi)
        p = np.asarray(point, dtype=float)
        if p.shape != lo.shape or np.any(p < lo) or np.any(p > hi) or not np.all(np.isfinite(p)):
            return None
        n = 1 << self.finest_level
        cell = np.minimum(np.floor((p - lo) / (hi - lo) * n).astype(np.int64), n - 1)
        node = 0
        while self.node_leaf[node] < 0:
            lvl = self.node_level[node]
            bits = (cell >> (self.finest_level - lvl - 1)) & 1
            node = self.children[node, int(sum(int(b) << a for a, b in enumerate(bits)))]
        return int(self.node_leaf[node])

    def index_grid(self) -> np.ndarray:
        """Finest-level grid holding the id of the covering leaf (axis 0 = x)."""
        if self._grid is None:
            if self.k * self.finest_level > 26:
                raise MemoryError("finest grid too large to materialise")
            grid = np.full(self.finest_shape, -1, dtype=np.int64)
            start, stop = self.finest_spans()
            for i in range(self.n_leaves):
                grid[tuple(slice(a, b) for a, b in zip(start[i], stop[i]))] = i
            grid.setflags(write=False)
            self._grid = grid
        return self._grid

    def adjacency_pairs(self) -> np.ndarray:
        """All unordered face-adjacent leaf pairs, shape (m, 2), ``a < b``."""
        grid = self.index_grid()
        pairs = []
        for axis in range(self.k):
            a = np.take(grid, range(0, grid.shape[axis] - 1), axis=axis).ravel()
            b = np.take(grid, range(1, grid.shape[axis]), axis=axis).ravel()
            diff = a != b
            pairs.append(np.stack([np.minimum(a, b)[diff], np.maximum(a, b)[diff]], axis=1))
        if not pairs:
            return np.empty((0, 2), dtype=np.int64)
        return np.unique(np.concatenate(pairs), axis=0)

    def neighbors(self, leaf_id: int) -> list[int]:
        """Leaves sharing a (k-1)-face of positive measure with ``leaf_id``."""
        grid = self.index_grid()
        start, stop = self.finest_spans()
        s, e = start[leaf_id], stop[leaf_id]
        found = set()
        for axis in range(self.k):
            for pos in (s[axis] - 1, e[axis]):
                if 0 <= pos < grid.shape[axis]:
                    sl = [slice(a, b) for a, b in zip(s, e)]
                    sl[axis] = slice(pos, pos + 1)
                    found.update(np.unique(grid[tuple(sl)]).tolist())
        found.discard(leaf_id)
        return sorted(found)

    def __eq__(self, other):
        if not isinstance(other, CellTree):
            return NotImplemented
        return (
            self.root == other.root
            and self.max_depth == other.max_depth
            and np.array_equal(self.levels, other.levels)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.summary, other.summary, equal_nan=True)
        )

    def __repr__(self):
        return f"CellTree(k={self.k}, max_depth={self.max_depth}, leaves={self.n_leaves})"


def build_tree(
    root: CellBox,
    classify: BatchClassifier,
    max_depth: int,
    leaf_budget: int = 1_000_000,
) -> CellTree:
    """Refine boundary-labelled cells level by level until ``max_depth`` levels."""
    k = root.k
    lo0 = np.asarray(root.lo)
    span = np.subtract(root.hi, root.lo)
    offsets = np.array([[(c >> a) & 1 for a in range(k)] for c in range(1 << k)], dtype=np.int64)

    out_levels, out_index, out_labels, out_summary = [], [], [], []
    level = 0
    pending = np.zeros((1, k), dtype=np.int64)
    n_final = 0
    while len(pending):
        size = span / float(1 << level)
        lo = lo0 + pending * size
        final = level == max_depth - 1
        labels, summary = classify(lo, lo + size, final)
        labels = np.asarray(labels, dtype=np.int8)
        summary = np.asarray(summary, dtype=float).reshape(len(pending), -1)
        refine = labels >= CellLabel.SERIAL_BOUNDARY
        if final:
            refine[:] = False
        keep = ~refine
        out_levels.append(np.full(int(keep.sum()), level))
        out_index.append(pending[keep])
        out_labels.append(labels[keep])
        out_summary.append(summary[keep])
        n_final += int(keep.sum())
        parents = pending[refine]
        if n_final + len(parents) * len(offsets) > leaf_budget:
            raise LeafBudgetExceeded(
                f"leaf count would exceed budget {leaf_budget} at level {level + 1}"
            )
        pending = (2 * parents[:, None, :] + offsets[None, :, :]).reshape(-1, k)
        level += 1
    return CellTree(
        root,
        max_depth,
        np.concatenate(out_levels),
        np.concatenate(out_index),
        np.concatenate(out_labels),
        np.concatenate(out_summary),
    )


# -- workspace instantiation (k = 2) ------------------------------------------

SUMMARY_FIELDS = (
    "n_branch",
    "detA_min",
    "detA_max",
    "B11_min",
    "B11_max",
    "B22_min",
    "B22_max",
    "reach_fail_leg1",
    "reach_fail_leg2",
    "limit_fail",
)


def _probe_points(lo: np.ndarray, hi: np.ndarray, samples: int):
    t = np.linspace(0.0, 1.0, samples)
    u, v = np.meshgrid(t, t, indexing="ij")
    u, v = u.ravel(), v.ravel()
    px = lo[:, 0:1] + (hi[:, 0:1] - lo[:, 0:1]) * u[None, :]
    py = lo[:, 1:2] + (hi[:, 1:2] - lo[:, 1:2]) * v[None, :]
    return px, py


def _leg_certificates(geom: ManipulatorGeometry, leg: int, gamma: int, lo: np.ndarray, hi: np.ndarray):
    """Interval bounds of one leg's branch over whole cells.

    Returns ``(never, always)``: the branch exists nowhere in the cell, or it
    exists everywhere with the elbow strictly away from the serial locus.
    """
    base_x, a, b = geom.legs()[leg]
    r_in, r_out = abs(a - b), a + b
    rel_lo = lo - np.array([base_x, 0.0])
    rel_hi = hi - np.array([base_x, 0.0])
    gap = np.maximum(np.maximum(rel_lo, -rel_hi), 0.0)
    r_min = np.hypot(gap[:, 0], gap[:, 1])
    far = np.maximum(np.abs(rel_lo), np.abs(rel_hi))
    r_max = np.hypot(far[:, 0], far[:, 1])
    never = (r_max < r_in) | (r_min > r_out)
    reach_all = (r_min > r_in) & (r_max < r_out)

    # polar-angle range of the cell seen from the base; unbounded if the base touches it
    centre = 0.5 * (rel_lo + rel_hi)
    phi_c = np.arctan2(centre[:, 1], centre[:, 0])
    corners = [(rel_lo[:, 0], rel_lo[:, 1]), (rel_lo[:, 0], rel_hi[:, 1]),
               (rel_hi[:, 0], rel_lo[:, 1]), (rel_hi[:, 0], rel_hi[:, 1])]
    delta = np.stack([np.angle(np.exp(1j * (np.arctan2(cy, cx) - phi_c))) for cx, cy in corners])
    phi_lo = phi_c + delta.min(axis=0)
    phi_hi = phi_c + delta.max(axis=0)
    bounded = r_min > 0

    # elbow-angle range over the reachable radii
    r1 = np.clip(r_min, r_in, r_out)
    r2 = np.clip(r_max, r_in, r_out)
    with np.errstate(divide="ignore", invalid="ignore"):
        def cos_alpha(r):
            return np.clip((r * r + a * a - b * b) / (2 * a * r), -1.0, 1.0)
        c_vals = [cos_alpha(r1), cos_alpha(r2)]
        if a > b:
            r_star = math.sqrt(a * a - b * b)
            inside = (r1 < r_star) & (r2 > r_star)
            c_star = np.where(inside, cos_alpha(np.full_like(r1, r_star)), c_vals[0])
            c_vals.append(c_star)
    c_vals = np.nan_to_num(np.stack(c_vals), nan=1.0)
    alpha_lo = np.arccos(c_vals.max(axis=0))
    alpha_hi = np.arccos(c_vals.min(axis=0))
    if gamma > 0:
        t_lo, t_hi = phi_lo + alpha_lo, phi_hi + alpha_hi
    else:
        t_lo, t_hi = phi_lo - alpha_hi, phi_hi - alpha_lo
    disjoint = np.ones(len(lo), dtype=bool)
    contained = np.zeros(len(lo), dtype=bool)
    for k in range(-3, 4):
        s_lo, s_hi = t_lo + 2 * np.pi * k, t_hi + 2 * np.pi * k
        disjoint &= (s_hi < geom.theta_min) | (s_lo > geom.theta_max)
        contained |= (s_lo > geom.theta_min) & (s_hi < geom.theta_max)
    reachable_somewhere = ~never
    never = never | (bounded & reachable_somewhere & disjoint)
    always = reach_all & bounded & contained
    return never, always


def classify_cells(
    geom: ManipulatorGeometry,
    mode: WorkingMode,
    lo: np.ndarray,
    hi: np.ndarray,
    cfg: DecompositionConfig,
    final: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Label a batch of planar cells for one working mode.

    A cell is Free when every probe has the branch, ``det A`` keeps one sign
    with ``|det A| > tau_a`` and both ``|B_jj| > tau_b``.  Boundary cells are
    split by what failed: probes losing the branch because a leg is out of
    reach, or small ``|B_jj|``, count as serial; a sign change or small
    ``|det A|`` counts as parallel; probes cut off only by joint limits make
    the cell mixed.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = len(lo)
    px, py = _probe_points(lo, hi, cfg.samples_per_axis)
    br = branch_arrays(geom, mode, px, py)
    diam = np.linalg.norm(hi - lo, axis=1)[:, None]
    tau_a = cfg.tau_a(diam)
    tau_b = cfg.tau_b(diam)
    ok = br.ok
    n_branch = ok.sum(axis=1)

    def masked(values, fn, fill):
        return np.where(ok.any(axis=1), fn(np.where(ok, values, fill), axis=1), np.nan)

    det_min = masked(br.det_a, np.min, np.inf)
    det_max = masked(br.det_a, np.max, -np.inf)
    small_det = (ok & (np.abs(br.det_a) <= tau_a)).any(axis=1)
    sign_change = (det_min < 0) & (det_max > 0)
    parallel = small_det | sign_change
    small_b = (ok & ((np.abs(br.b11) <= tau_b) | (np.abs(br.b22) <= tau_b))).any(axis=1)
    reach1 = br.reach_fail[0].sum(axis=1)
    reach2 = br.reach_fail[1].sum(axis=1)
    reach_any = (br.reach_fail[0] | br.reach_fail[1]).any(axis=1)
    limit_only = br.limit_fail.sum(axis=1)
    serial = small_b | reach_any

    labels = np.full(n, CellLabel.MIXED_BOUNDARY, dtype=np.int8)
    labels[n_branch == 0] = CellLabel.OUTSIDE
    full = n_branch == ok.shape[1]
    labels[full & ~parallel & ~serial] = CellLabel.FREE
    partial = (n_branch > 0) & ~(full & ~parallel & ~serial)
    clean = limit_only == 0
    labels[partial & clean & serial & ~parallel] = CellLabel.SERIAL_BOUNDARY
    labels[partial & clean & parallel & ~serial] = CellLabel.PARALLEL_BOUNDARY

    # probes alone cannot rule out a thin sliver of the branch, so Outside
    # needs a certificate; on coarse cells Free does as well
    never1, always1 = _leg_certificates(geom, 0, mode.gamma1, lo, hi)
    never2, always2 = _leg_certificates(geom, 1, mode.gamma2, lo, hi)
    unsure_out = (labels == CellLabel.OUTSIDE) & ~(never1 | never2)
    if final:
        labels[unsure_out & clean] = CellLabel.SERIAL_BOUNDARY
        labels[unsure_out & ~clean] = CellLabel.MIXED_BOUNDARY
    else:
        unsure_free = (labels == CellLabel.FREE) & ~(always1 & always2)
        labels[unsure_out | unsure_free] = CellLabel.MIXED_BOUNDARY

    summary = np.column_stack(
        [
            n_branch,
            det_min,
            det_max,
            masked(br.b11, np.min, np.inf),
            masked(br.b11, np.max, -np.inf),
            masked(br.b22, np.min, np.inf),
            masked(br.b22, np.max, -np.inf),
            reach1,
            reach2,
            limit_only,
        ]
    )
    return labels, summary


def classify_cell(geom: ManipulatorGeometry, mode: WorkingMode, box: CellBox, cfg: DecompositionConfig):
    """Label of a single workspace cell plus its probe summary as a dict."""
    if box.k != 2:
        raise ValueError("workspace cells are two-dimensional")
    labels, summary = classify_cells(geom, mode, np.array([box.lo]), np.array([box.hi]), cfg)
    return CellLabel(int(labels[0])), dict(zip(SUMMARY_FIELDS, summary[0].tolist()))


def build_workspace_tree(
    geom: ManipulatorGeometry,
    mode: WorkingMode,
    root: CellBox,
    cfg: DecompositionConfig,
) -> CellTree:
    """Workspace quadtree of one working mode."""
    if root.k != 2:
        raise ValueError("workspace root box must be two-dimensional")
    return build_tree(
        root,
        lambda lo, hi, final: classify_cells(geom, mode, lo, hi, cfg, final),
        cfg.max_depth,
        cfg.leaf_budget,
    )


def leaf_sign(tree: CellTree) -> np.ndarray:
    """Sign of det A recorded on each leaf (0 where it is not constant)."""
    dmin = tree.summary[:, 1]
    dmax = tree.summary[:, 2]
    sign = np.zeros(tree.n_leaves, dtype=np.int8)
    sign[dmin > 0] = 1
    sign[dmax < 0] = -1
    return sign

