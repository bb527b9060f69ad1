"""Aspects, reachable-configuration regions and their workspace projections.

The product space W x Q is represented as four planar sheets, one per
working mode: for a fully parallel manipulator ``q`` is a function of the
platform point and the working mode, so a point of W x Q is a pair
``(X, mode)``.  An aspect is an edge-connected set of Free leaves of one
sheet with constant ``sign det A``.  Aspects of the same sign whose modes
differ in one leg are joined when both reach the serial locus of that leg
at the same place; the joined groups are the reachable-configuration
regions.  Projections onto W are unions of leaf footprints on the finest
grid of the (shared) root box.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import ndimage

from .celltree import CellBox, CellLabel, CellTree, DecompositionConfig, build_workspace_tree, leaf_sign
from .kinematics import (
    WORKING_MODES,
    JointConfig,
    ManipulatorGeometry,
    WorkingMode,
    branch_arrays,
    inverse_kinematics_branch,
)

log = logging.getLogger(__name__)

DEFAULT_ROOT = CellBox((-13.0, -13.0), (20.0, 13.0))
MIN_ASPECT_LEAVES = 4
_NEIGHBOURHOOD = np.ones((3, 3), dtype=bool)


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the smaller index as representative for stable output
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra

    def groups(self, members) -> list[list[int]]:
        out: dict[int, list[int]] = {}
        for m in members:
            out.setdefault(self.find(m), []).append(m)
        return sorted(out.values(), key=lambda g: g[0])


class RegionKind(Enum):
    T_CONNECTED = "TConnected"
    N_CONNECTED = "NConnected"


@dataclass(frozen=True)
class Aspect:
    id: int
    mode: WorkingMode
    sigma: int
    leaves: tuple[int, ...]

    @property
    def mode_index(self) -> int:
        return WORKING_MODES.index(self.mode)


@dataclass(frozen=True)
class ReachableRegion:
    id: int
    aspect_ids: tuple[int, ...]
    sigma: int


@dataclass(frozen=True)
class WorkspaceRegion:
    id: int
    kind: RegionKind
    source_id: int
    leaves: tuple[tuple[int, int], ...]  # (mode index, leaf id)
    cell_count: int
    area: float

    @property
    def modes(self) -> set[int]:
        return {m for m, _ in self.leaves}


@dataclass(frozen=True)
class Membership:
    region_id: int
    mode: WorkingMode
    q: JointConfig


@dataclass(frozen=True)
class LocateReport:
    point: tuple[float, float]
    t_members: tuple[Membership, ...] = ()
    n_members: tuple[Membership, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.t_members and not self.n_members

    def n_region_ids(self) -> set[int]:
        return {m.region_id for m in self.n_members}


@dataclass
class RegionAtlas:
    geometry: ManipulatorGeometry
    decomposition: DecompositionConfig
    root: CellBox
    trees: tuple[CellTree, ...]
    aspects: tuple[Aspect, ...]
    regions: tuple[ReachableRegion, ...]
    t_regions: tuple[WorkspaceRegion, ...]
    n_regions: tuple[WorkspaceRegion, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self._masks: dict = {}
        self._leaf_aspect = [np.full(t.n_leaves, -1, dtype=np.int64) for t in self.trees]
        for a in self.aspects:
            self._leaf_aspect[a.mode_index][list(a.leaves)] = a.id
        self._aspect_region = {}
        for r in self.regions:
            for aid in r.aspect_ids:
                self._aspect_region[aid] = r.id

    def __eq__(self, other):
        if not isinstance(other, RegionAtlas):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.decomposition == other.decomposition
            and self.root == other.root
            and self.trees == other.trees
            and self.aspects == other.aspects
            and self.regions == other.regions
            and self.t_regions == other.t_regions
            and self.n_regions == other.n_regions
            and self.metadata == other.metadata
        )

    @property
    def cell_area(self) -> float:
        return self.trees[0].finest_cell_volume

    @property
    def leaf_diameter(self) -> float:
        return self.trees[0].finest_cell_diam

    def tree(self, mode: WorkingMode) -> CellTree:
        return self.trees[WORKING_MODES.index(mode)]

    def aspect_of_leaf(self, mode_index: int, leaf: int) -> int | None:
        a = int(self._leaf_aspect[mode_index][leaf])
        return None if a < 0 else a

    def region_of_aspect(self, aspect_id: int) -> int:
        return self._aspect_region[aspect_id]

    def get_region(self, kind: RegionKind, region_id: int) -> WorkspaceRegion:
        pool = self.t_regions if kind is RegionKind.T_CONNECTED else self.n_regions
        for r in pool:
            if r.id == region_id:
                return r
        raise KeyError(f"no {kind.value} region with id {region_id}")

    def mask(self, region: WorkspaceRegion) -> np.ndarray:
        """Finest-grid footprint of a workspace region (axis 0 = x)."""
        key = (region.kind, region.id)
        if key not in self._masks:
            self._masks[key] = leaves_mask(self.trees, region.leaves)
        return self._masks[key]

    def free_mask(self) -> np.ndarray:
        """Cells covered by some aspect in some mode."""
        out = np.zeros(self.trees[0].finest_shape, dtype=bool)
        for r in self.t_regions:
            out |= self.mask(r)
        return out

    def label_grid(self, mode_index: int) -> np.ndarray:
        tree = self.trees[mode_index]
        return tree.labels[tree.index_grid()]


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("PARAKIN_THREADS", "4")))
    except ValueError:
        return 1


def build_trees(
    geom: ManipulatorGeometry, cfg: DecompositionConfig, root: CellBox = DEFAULT_ROOT
) -> tuple[CellTree, ...]:
    """One workspace tree per working mode, built concurrently."""
    workers = min(_thread_count(), len(WORKING_MODES))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return tuple(pool.map(lambda m: build_workspace_tree(geom, m, root, cfg), WORKING_MODES))


def leaves_mask(trees: Sequence[CellTree], leaves) -> np.ndarray:
    out = np.zeros(trees[0].finest_shape, dtype=bool)
    by_mode: dict[int, list[int]] = {}
    for m, leaf in leaves:
        by_mode.setdefault(m, []).append(leaf)
    for m, ids in by_mode.items():
        grid = trees[m].index_grid()
        sel = np.zeros(trees[m].n_leaves, dtype=bool)
        sel[ids] = True
        out |= sel[grid]
    return out


def label_aspects(
    trees: Sequence[CellTree], min_leaves: int = MIN_ASPECT_LEAVES
) -> tuple[list[Aspect], list[dict]]:
    """Edge-connected components of same-sign Free leaves, per mode.

    Returns the kept aspects and a record of the discarded specks.
    """
    found = []
    discarded = []
    for mi, (mode, tree) in enumerate(zip(WORKING_MODES, trees)):
        sign = leaf_sign(tree)
        free = (tree.labels == CellLabel.FREE) & (sign != 0)
        uf = UnionFind(tree.n_leaves)
        pairs = tree.adjacency_pairs()
        a, b = pairs[:, 0], pairs[:, 1]
        keep = free[a] & free[b] & (sign[a] == sign[b])
        for i, j in zip(a[keep].tolist(), b[keep].tolist()):
            uf.union(i, j)
        for group in uf.groups(np.flatnonzero(free).tolist()):
            sigma = int(sign[group[0]])
            if len(group) < min_leaves:
                discarded.append({"mode": str(mode), "sigma": sigma, "leaves": len(group)})
                log.info("discarding %d-leaf component in mode %s (sigma %+d)", len(group), mode, sigma)
                continue
            found.append((sigma, mode, group[0], mi, tuple(group)))
    found.sort(key=lambda t: t[:3])
    aspects = [Aspect(i, mode, sigma, leaves) for i, (sigma, mode, _, _, leaves) in enumerate(found)]
    return aspects, discarded


def compute_aspects(
    geom: ManipulatorGeometry,
    cfg: DecompositionConfig,
    root: CellBox = DEFAULT_ROOT,
    trees: Sequence[CellTree] | None = None,
) -> list[Aspect]:
    """Aspects of every working mode, ordered by (sigma, mode, first leaf)."""
    if trees is None:
        trees = build_trees(geom, cfg, root)
    return label_aspects(trees)[0]


def _serial_band(tree: CellTree, leg: int, sigma: int, kappa_b: float) -> np.ndarray:
    """Finest-grid mask of SerialBoundary leaves touching leg ``leg``'s locus."""
    s = tree.summary
    lo, hi = tree.leaf_bounds()
    tau_b = kappa_b * np.linalg.norm(hi - lo, axis=1)
    b_min = s[:, 3 + 2 * leg]
    b_max = s[:, 4 + 2 * leg]
    with np.errstate(invalid="ignore"):
        small_b = (np.minimum(np.abs(b_min), np.abs(b_max)) <= tau_b) | ((b_min < 0) & (b_max > 0))
        same_sign = (s[:, 1] > 0) if sigma > 0 else (s[:, 2] < 0)
    touches = small_b | (s[:, 7 + leg] > 0)
    band = (tree.labels == CellLabel.SERIAL_BOUNDARY) & touches & same_sign
    return band[tree.index_grid()]


def _differing_leg(a: WorkingMode, b: WorkingMode) -> int | None:
    diff = [j for j in range(2) if a[j] != b[j]]
    return diff[0] if len(diff) == 1 else None


def serial_adjacent(a: Aspect, b: Aspect, trees: Sequence[CellTree], kappa_b: float = 0.05) -> bool:
    """Whether two aspects meet across the serial locus of the one leg they differ in.

    Both aspects must come within one finest cell of a SerialBoundary leaf
    of that leg whose probes keep the aspects' sign of det A.
    """
    if a.id == b.id or a.sigma != b.sigma:
        return False
    leg = _differing_leg(a.mode, b.mode)
    if leg is None:
        return False
    return _band_contact(a, b, trees, leg, kappa_b)


def _band_contact(a: Aspect, b: Aspect, trees: Sequence[CellTree], leg: int, kappa_b: float) -> bool:
    near_a = ndimage.binary_dilation(leaves_mask(trees, [(a.mode_index, l) for l in a.leaves]), _NEIGHBOURHOOD)
    near_b = ndimage.binary_dilation(leaves_mask(trees, [(b.mode_index, l) for l in b.leaves]), _NEIGHBOURHOOD)
    band = _serial_band(trees[a.mode_index], leg, a.sigma, kappa_b)
    band |= _serial_band(trees[b.mode_index], leg, a.sigma, kappa_b)
    return bool(np.any(band & near_a & near_b))


def compute_reachable_regions(
    aspects: Sequence[Aspect],
    trees: Sequence[CellTree],
    contacts: list | None = None,
    kappa_b: float = 0.05,
) -> list[ReachableRegion]:
    """Connected components of the aspect graph under serial adjacency.

    Same-mode aspects touching a common serial band are never merged; such
    contacts are appended to ``contacts`` when a list is given.
    """
    uf = UnionFind(len(aspects))
    for i, a in enumerate(aspects):
        for b in aspects[i + 1:]:
            if serial_adjacent(a, b, trees, kappa_b):
                uf.union(a.id, b.id)
            elif a.mode == b.mode and a.sigma == b.sigma and contacts is not None:
                if any(_band_contact(a, b, trees, leg, kappa_b) for leg in range(2)):
                    log.warning("same-mode serial contact between aspects %d and %d", a.id, b.id)
                    contacts.append([a.id, b.id])
    by_id = {a.id: a for a in aspects}
    groups = uf.groups([a.id for a in aspects])
    groups.sort(key=lambda g: (by_id[g[0]].sigma, g[0]))
    return [ReachableRegion(i, tuple(g), by_id[g[0]].sigma) for i, g in enumerate(groups)]


def project(source, trees: Sequence[CellTree], aspects: Sequence[Aspect] = ()) -> WorkspaceRegion:
    """Workspace footprint of an aspect (T-connected) or region (N-connected)."""
    if isinstance(source, Aspect):
        kind, members = RegionKind.T_CONNECTED, [source]
    elif isinstance(source, ReachableRegion):
        by_id = {a.id: a for a in aspects}
        kind, members = RegionKind.N_CONNECTED, [by_id[i] for i in source.aspect_ids]
    else:
        raise TypeError(f"cannot project {type(source).__name__}")
    leaves = tuple(sorted((a.mode_index, l) for a in members for l in a.leaves))
    cells = int(leaves_mask(trees, leaves).sum())
    return WorkspaceRegion(
        id=source.id,
        kind=kind,
        source_id=source.id,
        leaves=leaves,
        cell_count=cells,
        area=cells * trees[0].finest_cell_volume,
    )


def build_atlas(
    geom: ManipulatorGeometry,
    cfg: DecompositionConfig,
    root: CellBox = DEFAULT_ROOT,
) -> RegionAtlas:
    trees = build_trees(geom, cfg, root)
    aspects, discarded = label_aspects(trees)
    contacts: list = []
    regions = compute_reachable_regions(aspects, trees, contacts, cfg.kappa_b)
    t_regions = tuple(project(a, trees) for a in aspects)
    n_regions = tuple(project(r, trees, aspects) for r in regions)
    metadata = {
        "max_depth": cfg.max_depth,
        "finest_cell": [float(v) for v in trees[0].finest_cell_size],
        "kappa_a": cfg.kappa_a,
        "kappa_b": cfg.kappa_b,
        "leaf_counts": [t.n_leaves for t in trees],
        "discarded_components": discarded,
        "same_mode_serial_contacts": contacts,
    }
    return RegionAtlas(geom, cfg, root, trees, tuple(aspects), tuple(regions), t_regions, n_regions, metadata)


def locate(atlas: RegionAtlas, X) -> LocateReport:
    """Every T- and N-connected region containing ``X``, with joint witnesses.

    A point inside a SerialBoundary leaf is an N-member of a region when all
    aspects flanking that leaf belong to that region and the branch exists
    at ``X`` with the region's sign of det A.
    """
    x, y = float(X[0]), float(X[1])
    t_members, n_members = [], []
    geom = atlas.geometry
    for mi, (mode, tree) in enumerate(zip(WORKING_MODES, atlas.trees)):
        leaf = tree.find_leaf((x, y))
        if leaf is None:
            continue
        label = tree.labels[leaf]
        if label == CellLabel.FREE:
            aid = atlas.aspect_of_leaf(mi, leaf)
            if aid is None:
                continue
            q = inverse_kinematics_branch(geom, (x, y), mode)
            if q is None:
                continue
            t_members.append(Membership(aid, mode, q))
            n_members.append(Membership(atlas.region_of_aspect(aid), mode, q))
        elif label == CellLabel.SERIAL_BOUNDARY:
            flank = {atlas.aspect_of_leaf(mi, n) for n in tree.neighbors(leaf)}
            flank.discard(None)
            regions = {atlas.region_of_aspect(a) for a in flank}
            if len(regions) != 1:
                continue
            (rid,) = regions
            q = inverse_kinematics_branch(geom, (x, y), mode)
            if q is None:
                continue
            det = branch_arrays(geom, mode, x, y).det_a
            if np.sign(det) == atlas.regions[rid].sigma:
                n_members.append(Membership(rid, mode, q))
    return LocateReport((x, y), tuple(t_members), tuple(n_members))


def is_workspace_n_connected(atlas: RegionAtlas) -> bool:
    """True iff one N-connected region covers every Free cell, up to one cell."""
    if not atlas.n_regions:
        return False
    free = atlas.free_mask()
    for region in atlas.n_regions:
        grown = ndimage.binary_dilation(atlas.mask(region), _NEIGHBOURHOOD)
        if not np.any(free & ~grown):
            return True
    return False


def separating_pair(atlas: RegionAtlas):
    """Two interior points, each inside exactly one distinct N-connected region.

    Returns ``None`` if every region overlaps all others.
    """
    if len(atlas.n_regions) < 2:
        return None
    masks = [atlas.mask(r) for r in atlas.n_regions]
    tree = atlas.trees[0]
    size = tree.finest_cell_size
    picks = []
    for i, m in enumerate(masks[:2]):
        others = np.zeros_like(m)
        for j, o in enumerate(masks):
            if j != i:
                others |= ndimage.binary_dilation(o, _NEIGHBOURHOOD)
        own = ndimage.binary_erosion(m & ~others, _NEIGHBOURHOOD)
        cells = np.argwhere(own)
        if not len(cells):
            return None
        c = cells[len(cells) // 2]
        picks.append(tuple(float(v) for v in np.asarray(atlas.root.lo) + (c + 0.5) * size))
    return picks[0], picks[1]
