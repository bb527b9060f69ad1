"""Feasibility of point-to-point and continuous tasks against a region atlas."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .kinematics import (
    JointConfig,
    PlatformConfig,
    WorkingMode,
    inverse_kinematics,
    inverse_kinematics_branch,
)
from .regions import RegionAtlas, locate


class LiftBroken(RuntimeError):
    """A path sample lost the aspect's branch while lifting into joint space."""


class Verdict(Enum):
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"


class FailureReason(Enum):
    OUTSIDE_WORKSPACE = "OutsideWorkspace"
    NO_COMMON_REGION = "NoCommonRegion"
    NO_COVERING_ASPECT = "NoCoveringAspect"


@dataclass(frozen=True)
class PointToPointTask:
    waypoints: tuple[PlatformConfig, ...]

    def __post_init__(self):
        pts = tuple(PlatformConfig(float(x), float(y)) for x, y in self.waypoints)
        if not pts:
            raise ValueError("a point-to-point task needs at least one waypoint")
        object.__setattr__(self, "waypoints", pts)


@dataclass(frozen=True)
class ContinuousTask:
    """Polyline path; ``lambda`` runs over [0, 1] proportionally to arc length."""

    vertices: tuple[PlatformConfig, ...]

    def __post_init__(self):
        pts = tuple(PlatformConfig(float(x), float(y)) for x, y in self.vertices)
        if len(pts) < 2:
            raise ValueError("a continuous task needs at least two vertices")
        if not all(math.isfinite(v) for p in pts for v in p):
            raise ValueError("continuous task vertices must be finite")
        object.__setattr__(self, "vertices", pts)

    @property
    def length(self) -> float:
        return sum(math.dist(a, b) for a, b in zip(self.vertices, self.vertices[1:]))


@dataclass(frozen=True)
class PathSample:
    lam: float
    point: PlatformConfig
    q: JointConfig


@dataclass(frozen=True)
class WaypointWitness:
    mode: WorkingMode
    q: JointConfig


@dataclass(frozen=True)
class FeasibilityReport:
    verdict: Verdict
    task: str  # "point-to-point" or "continuous"
    region_id: int | None = None
    aspect_id: int | None = None
    waypoints: tuple[WaypointWitness, ...] = ()
    path: tuple[PathSample, ...] = ()
    failure_index: int | None = None
    failure_lambda: float | None = None
    reason: FailureReason | None = None
    mode: WorkingMode | None = None

    @property
    def feasible(self) -> bool:
        return self.verdict is Verdict.FEASIBLE

    def to_dict(self) -> dict:
        out: dict = {"task": self.task, "verdict": self.verdict.value}
        if self.feasible:
            if self.task == "point-to-point":
                out["region_id"] = self.region_id
                out["waypoints"] = [
                    {"mode": str(w.mode), "q": list(w.q)} for w in self.waypoints
                ]
            else:
                out["aspect_id"] = self.aspect_id
                out["mode"] = str(self.mode)
                out["path"] = [
                    {"lambda": s.lam, "x": s.point.x, "y": s.point.y, "q": list(s.q)}
                    for s in self.path
                ]
        else:
            out["reason"] = self.reason.value
            if self.failure_index is not None:
                out["failure_index"] = self.failure_index
            if self.failure_lambda is not None:
                out["failure_lambda"] = self.failure_lambda
        return out


def _joint_distance(a: JointConfig, b: JointConfig) -> float:
    return math.hypot(*(math.remainder(x - y, 2 * math.pi) for x, y in zip(a, b)))


def check_point_to_point(atlas: RegionAtlas, task: PointToPointTask) -> FeasibilityReport:
    """Feasible iff one reachable region holds a configuration at every waypoint."""
    reports = [locate(atlas, X) for X in task.waypoints]
    for i, rep in enumerate(reports):
        if not rep.n_members:
            return FeasibilityReport(
                Verdict.INFEASIBLE, "point-to-point", failure_index=i, reason=FailureReason.OUTSIDE_WORKSPACE
            )
    common = reports[0].n_region_ids()
    for i, rep in enumerate(reports[1:], start=1):
        common &= rep.n_region_ids()
        if not common:
            return FeasibilityReport(
                Verdict.INFEASIBLE, "point-to-point", failure_index=i, reason=FailureReason.NO_COMMON_REGION
            )
    region = min(common)
    witness: list[WaypointWitness] = []
    for rep in reports:
        options = sorted(
            (m for m in rep.n_members if m.region_id == region), key=lambda m: m.mode
        )
        if witness:
            prev = witness[-1].q
            best = min(options, key=lambda m: _joint_distance(m.q, prev))
        else:
            best = options[0]
        witness.append(WaypointWitness(best.mode, best.q))
    return FeasibilityReport(Verdict.FEASIBLE, "point-to-point", region_id=region, waypoints=tuple(witness))


def default_step(atlas: RegionAtlas) -> float:
    """Half the diameter of a finest-level leaf."""
    return 0.5 * atlas.leaf_diameter


def sample_polyline(task: ContinuousTask, step: float) -> list[tuple[float, PlatformConfig]]:
    """``(lambda, X)`` samples at most ``step`` apart, vertices included."""
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    verts = task.vertices
    seg_len = [math.dist(a, b) for a, b in zip(verts, verts[1:])]
    total = sum(seg_len)
    out = [(0.0, verts[0])]
    travelled = 0.0
    for (a, b), length in zip(zip(verts, verts[1:]), seg_len):
        n = max(1, math.ceil(length / step))
        for i in range(1, n + 1):
            t = i / n
            p = PlatformConfig(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
            lam = (travelled + t * length) / total if total > 0 else 1.0
            out.append((lam, p))
        travelled += length
    return out


def _segment_cells(atlas: RegionAtlas, a, b) -> np.ndarray | None:
    """Finest cells whose closed box meets segment ``ab``; ``None`` if it leaves the root."""
    lo = np.asarray(atlas.root.lo)
    hi = np.asarray(atlas.root.hi)
    pa, pb = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if np.any(pa < lo) or np.any(pa > hi) or np.any(pb < lo) or np.any(pb > hi):
        return None
    size = atlas.trees[0].finest_cell_size
    n = atlas.trees[0].finest_shape[0]
    ua, ub = (pa - lo) / size, (pb - lo) / size
    # chop long segments so the candidate windows stay small
    pieces = max(1, int(math.ceil(np.max(np.abs(ub - ua)) / 8.0)))
    found = []
    for k in range(pieces):
        s = ua + (ub - ua) * (k / pieces)
        e = ua + (ub - ua) * ((k + 1) / pieces)
        i0 = np.clip(np.floor(np.minimum(s, e)).astype(int) - 1, 0, n - 1)
        i1 = np.clip(np.floor(np.maximum(s, e)).astype(int) + 1, 0, n - 1)
        gx, gy = np.meshgrid(np.arange(i0[0], i1[0] + 1), np.arange(i0[1], i1[1] + 1), indexing="ij")
        gx, gy = gx.ravel(), gy.ravel()
        # closed-box vs segment: bounding boxes overlap and corners not strictly on one side
        bb = (
            (gx <= max(s[0], e[0])) & (gx + 1 >= min(s[0], e[0]))
            & (gy <= max(s[1], e[1])) & (gy + 1 >= min(s[1], e[1]))
        )
        d = e - s
        sides = np.stack(
            [d[0] * (cy - s[1]) - d[1] * (cx - s[0]) for cx, cy in ((gx, gy), (gx + 1, gy), (gx, gy + 1), (gx + 1, gy + 1))]
        )
        straddle = ~((sides > 0).all(axis=0) | (sides < 0).all(axis=0))
        hit = bb & straddle
        found.append(np.stack([gx[hit], gy[hit]], axis=1))
    return np.unique(np.concatenate(found), axis=0)


def _aspects_covering(atlas: RegionAtlas, cells: np.ndarray | None) -> set[int]:
    if cells is None or not len(cells):
        return set()
    out = set()
    for region in atlas.t_regions:
        if atlas.mask(region)[cells[:, 0], cells[:, 1]].all():
            out.add(region.id)
    return out


def check_continuous(atlas: RegionAtlas, task: ContinuousTask, step: float | None = None) -> FeasibilityReport:
    """Feasible iff a single aspect's projection contains the whole polyline.

    Containment is tested on every finest cell the polyline touches, so the
    verdict does not depend on ``step``; ``step`` only sets the density of
    the joint-space witness.
    """
    if step is None:
        step = default_step(atlas)
    samples = sample_polyline(task, step)
    candidates: set[int] | None = None
    prev = samples[0][1]
    for idx, (lam, X) in enumerate(samples):
        cover = _aspects_covering(atlas, _segment_cells(atlas, prev, X))
        candidates = cover if candidates is None else candidates & cover
        if not candidates:
            reason = FailureReason.NO_COVERING_ASPECT
            if not inverse_kinematics(atlas.geometry, X):
                reason = FailureReason.OUTSIDE_WORKSPACE
            return FeasibilityReport(
                Verdict.INFEASIBLE, "continuous", failure_index=idx, failure_lambda=lam, reason=reason
            )
        prev = X
    aspect_id = min(candidates)
    path = _lift(atlas, samples, aspect_id)
    return FeasibilityReport(
        Verdict.FEASIBLE,
        "continuous",
        aspect_id=aspect_id,
        mode=atlas.aspects[aspect_id].mode,
        path=tuple(path),
    )


def _lift(atlas: RegionAtlas, samples, aspect_id: int) -> list[PathSample]:
    mode = atlas.aspects[aspect_id].mode
    out = []
    for lam, X in samples:
        q = inverse_kinematics_branch(atlas.geometry, X, mode)
        if q is None:
            raise LiftBroken(f"branch {mode} lost at lambda={lam:.6g}, X={tuple(X)}")
        out.append(PathSample(lam, X, q))
    return out


def lift_continuous(
    atlas: RegionAtlas, task: ContinuousTask, aspect_id: int, step: float | None = None
) -> list[PathSample]:
    """Joint path of ``task`` on the branch of aspect ``aspect_id``."""
    if step is None:
        step = default_step(atlas)
    return _lift(atlas, sample_polyline(task, step), aspect_id)

