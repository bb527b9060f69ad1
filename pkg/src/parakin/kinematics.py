"""Closed-form kinematics of the planar five-bar fully parallel manipulator.

Conventions
-----------
Leg 1 is actuated at ``A = (0, 0)`` and leg 2 at ``B = (L0, 0)``.  The
proximal links (``L1``, ``L3``) end at the elbows ``C`` and ``D``; the distal
links (``L2``, ``L4``) meet at the operational point ``P = (x, y)``.

The velocity model is ``A @ p_dot + B @ q_dot = 0`` with

* ``A`` rows ``(P - C)`` and ``(P - D)``, so ``det A = (P - C) x (P - D)``;
* ``B = diag(-L1 (P - C) . n1, -L3 (P - D) . n2)`` with
  ``n_i = (-sin theta_i, cos theta_i)``.

The working mode of a configuration is ``(sign B11, sign B22)``.  With the
sign convention above, ``gamma_j = +1`` is the branch ``theta_j = phi_j +
alpha_j`` where ``phi_j`` is the polar angle of ``P`` seen from the leg base
and ``alpha_j`` the elbow angle from the law of cosines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import NamedTuple

import numpy as np

TAU_F = 1e-9
TAU_A = 1e-9
TAU_B = 1e-9

# Slack on the closed joint-limit interval, absorbs rounding at theta = 0, pi.
LIMIT_SLACK = 1e-12
# Slack on |cos alpha| <= 1, absorbs rounding on the reach circles.
_REACH_SLACK = 1e-12


class GeometryError(ValueError):
    """Raised when a geometry violates its invariants."""


class InvalidConfiguration(ValueError):
    """Raised when an (X, q) pair does not satisfy the loop-closure equations."""


@dataclass(frozen=True)
class ManipulatorGeometry:
    """Link lengths and actuated-joint limits of a planar five-bar.

    The defaults are the reference instance ``L0=7, L1=8, L2=5, L3=8, L4=5``
    with both actuated joints limited to ``[0, pi]``.
    """

    L0: float = 7.0
    L1: float = 8.0
    L2: float = 5.0
    L3: float = 8.0
    L4: float = 5.0
    theta_min: float = 0.0
    theta_max: float = math.pi

    def __post_init__(self):
        lengths = (self.L0, self.L1, self.L2, self.L3, self.L4)
        if not all(math.isfinite(v) and v > 0 for v in lengths):
            raise GeometryError(f"lengths: all link lengths must be > 0, got {lengths}")
        if not (math.isfinite(self.theta_min) and math.isfinite(self.theta_max)):
            raise GeometryError("limits: joint limits must be finite")
        if not self.theta_min < self.theta_max:
            raise GeometryError(
                f"limits: theta_min < theta_max required, got [{self.theta_min}, {self.theta_max}]"
            )

    @property
    def base_a(self) -> tuple[float, float]:
        return (0.0, 0.0)

    @property
    def base_b(self) -> tuple[float, float]:
        return (self.L0, 0.0)

    def legs(self):
        """Per-leg ``(base_x, proximal, distal)`` triples."""
        return ((0.0, self.L1, self.L2), (self.L0, self.L3, self.L4))


class JointConfig(NamedTuple):
    theta1: float
    theta2: float


class PlatformConfig(NamedTuple):
    x: float
    y: float


class WorkingMode(NamedTuple):
    """Per-leg inverse-kinematics branch, ``(sign B11, sign B22)``."""

    gamma1: int
    gamma2: int

    def __str__(self):
        return "".join("+" if g > 0 else "-" for g in self)

    @classmethod
    def parse(cls, text: str) -> "WorkingMode":
        text = text.strip()
        if len(text) != 2 or any(c not in "+-" for c in text):
            raise ValueError(f"working mode must look like '+-', got {text!r}")
        return cls(*(1 if c == "+" else -1 for c in text))


WORKING_MODES: tuple[WorkingMode, ...] = tuple(
    WorkingMode(g1, g2) for g1 in (-1, 1) for g2 in (-1, 1)
)


class AssemblyMode(IntEnum):
    """Direct-kinematics branch, the sign of det A."""

    NEGATIVE = -1
    POSITIVE = 1


class SingularityClass(Enum):
    REGULAR = "Regular"
    SERIAL = "Serial"
    PARALLEL = "Parallel"
    BOTH = "Both"


@dataclass(frozen=True)
class KinematicMatrices:
    A: np.ndarray
    B: np.ndarray
    detA: float
    detB: float


@dataclass(frozen=True)
class FKSolution:
    point: PlatformConfig
    degenerate: bool = False


@dataclass(frozen=True)
class IKSolution:
    q: JointConfig
    mode: WorkingMode
    # per leg: True when the two elbow branches merge (|B_jj| <= tau_B)
    serial_legs: tuple[bool, bool] = (False, False)

    @property
    def serial_singular(self) -> bool:
        return any(self.serial_legs)


def canonical_angle(theta):
    """Wrap angles into ``(-pi, pi]``; works on scalars and arrays."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def _within_limits(geom: ManipulatorGeometry, theta):
    theta = np.asarray(theta, dtype=float)
    lo = geom.theta_min - LIMIT_SLACK
    hi = geom.theta_max + LIMIT_SLACK
    inside = np.zeros(theta.shape, dtype=bool)
    for shift in (-2.0 * np.pi, 0.0, 2.0 * np.pi):
        t = theta + shift
        inside |= (t >= lo) & (t <= hi)
    return inside


def in_joint_limits(geom: ManipulatorGeometry, q) -> bool:
    """Closed-interval membership of both actuated angles (after wrapping)."""
    return bool(np.all(_within_limits(geom, canonical_angle(np.asarray(q, dtype=float)))))


def elbows(geom: ManipulatorGeometry, q):
    """Elbow points ``C`` and ``D`` for joint angles ``q``."""
    t1, t2 = q
    c = (geom.L1 * math.cos(t1), geom.L1 * math.sin(t1))
    d = (geom.L0 + geom.L3 * math.cos(t2), geom.L3 * math.sin(t2))
    return c, d


def constraint_residual(geom: ManipulatorGeometry, X, q) -> np.ndarray:
    """Loop-closure residual ``(|P-C|^2 - L2^2, |P-D|^2 - L4^2)``."""
    x, y = X
    (cx, cy), (dx, dy) = elbows(geom, q)
    return np.array(
        [
            (x - cx) ** 2 + (y - cy) ** 2 - geom.L2**2,
            (x - dx) ** 2 + (y - dy) ** 2 - geom.L4**2,
        ]
    )


def forward_kinematics(geom: ManipulatorGeometry, q, sigma, tau_a: float = TAU_A):
    """Circle-circle intersection on the side where ``sign det A == sigma``.

    Returns ``None`` when the distal circles do not meet.  When they are
    tangent (``|det A| <= tau_a``) the single point comes back flagged
    ``degenerate``.
    """
    (cx, cy), (dx, dy) = elbows(geom, q)
    ex, ey = dx - cx, dy - cy
    d = math.hypot(ex, ey)
    if d == 0.0:
        return None
    ux, uy = ex / d, ey / d
    a = (geom.L2**2 - geom.L4**2 + d * d) / (2.0 * d)
    h2 = geom.L2**2 - a * a
    if h2 < 0.0:
        if h2 < -_REACH_SLACK * geom.L2**2:
            return None
        h2 = 0.0
    h = math.sqrt(h2)
    mx, my = cx + a * ux, cy + a * uy
    # det A = sigma * h * d on this branch
    if h * d <= tau_a:
        return FKSolution(PlatformConfig(mx, my), degenerate=True)
    s = 1.0 if sigma > 0 else -1.0
    return FKSolution(PlatformConfig(mx - s * h * uy, my + s * h * ux))


class BranchArrays(NamedTuple):
    """Vectorised branch evaluation for one working mode."""

    ok: np.ndarray  # branch exists and lies within joint limits
    reach_fail: np.ndarray  # (2, n) leg cannot reach P at all
    limit_fail: np.ndarray  # reachable, but the branch angle violates limits
    theta1: np.ndarray
    theta2: np.ndarray
    b11: np.ndarray
    b22: np.ndarray
    det_a: np.ndarray


def _leg_solve(px, py, base_x, proximal, distal):
    dx = px - base_x
    r = np.hypot(dx, py)
    phi = np.arctan2(py, dx)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos_alpha = (r * r + proximal**2 - distal**2) / (2.0 * proximal * r)
    reach = np.isfinite(cos_alpha) & (np.abs(cos_alpha) <= 1.0 + _REACH_SLACK)
    alpha = np.arccos(np.clip(np.where(reach, cos_alpha, 1.0), -1.0, 1.0))
    return phi, alpha, reach


def branch_arrays(geom: ManipulatorGeometry, mode: WorkingMode, x, y) -> BranchArrays:
    """Evaluate the IK branch ``mode`` and its kinematic measures at many points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    thetas, reaches = [], []
    for (base_x, proximal, distal), gamma in zip(geom.legs(), mode):
        phi, alpha, reach = _leg_solve(x, y, base_x, proximal, distal)
        thetas.append(canonical_angle(phi + gamma * alpha))
        reaches.append(reach)
    t1, t2 = np.asarray(thetas[0]), np.asarray(thetas[1])
    reach = np.stack(reaches)
    within = _within_limits(geom, t1) & _within_limits(geom, t2)
    both = reach[0] & reach[1]
    cx, cy = geom.L1 * np.cos(t1), geom.L1 * np.sin(t1)
    dx, dy = geom.L0 + geom.L3 * np.cos(t2), geom.L3 * np.sin(t2)
    pcx, pcy = x - cx, y - cy
    pdx, pdy = x - dx, y - dy
    b11 = -geom.L1 * (-pcx * np.sin(t1) + pcy * np.cos(t1))
    b22 = -geom.L3 * (-pdx * np.sin(t2) + pdy * np.cos(t2))
    det_a = pcx * pdy - pcy * pdx
    return BranchArrays(
        ok=both & within,
        reach_fail=~reach,
        limit_fail=both & ~within,
        theta1=t1,
        theta2=t2,
        b11=b11,
        b22=b22,
        det_a=det_a,
    )


def inverse_kinematics(geom: ManipulatorGeometry, X, tau_b: float = TAU_B) -> list[IKSolution]:
    """All admissible joint configurations reaching ``X``, sorted by working mode.

    A leg whose two branches coincide (``|B_jj| <= tau_b``) contributes one
    merged branch, labelled ``gamma_j = +1`` and flagged in ``serial_legs``.
    """
    x, y = float(X[0]), float(X[1])
    per_leg = []
    for base_x, proximal, distal in geom.legs():
        phi, alpha, reach = _leg_solve(x, y, base_x, proximal, distal)
        if not reach:
            return []
        phi, alpha = float(phi), float(alpha)
        r = math.hypot(x - base_x, y)
        options = []
        for gamma in (-1, 1):
            theta = canonical_angle(phi + gamma * alpha)
            if not _within_limits(geom, theta):
                continue
            b_jj = gamma * proximal * r * math.sin(alpha)
            merged = abs(b_jj) <= tau_b
            if merged and any(o[2] for o in options):
                continue
            options.append((1 if merged else gamma, theta, merged))
        per_leg.append(options)
    out = []
    for g1, t1, s1 in per_leg[0]:
        for g2, t2, s2 in per_leg[1]:
            out.append(IKSolution(JointConfig(t1, t2), WorkingMode(g1, g2), (s1, s2)))
    out.sort(key=lambda s: s.mode)
    return out


def inverse_kinematics_branch(
    geom: ManipulatorGeometry, X, mode: WorkingMode, tau_b: float = TAU_B
) -> JointConfig | None:
    """Joint configuration of branch ``mode`` at ``X``, or ``None``.

    A merged (serial-singular) leg matches either value of its ``gamma``.
    """
    for sol in inverse_kinematics(geom, X, tau_b):
        if all(s or g == m for g, m, s in zip(sol.mode, mode, sol.serial_legs)):
            return sol.q
    return None


def working_mode_of(geom: ManipulatorGeometry, X, q) -> WorkingMode:
    """Working mode read off the signs of ``B``; zero entries map to ``+1``."""
    M = jacobians(geom, X, q)
    return WorkingMode(*(1 if M.B[j, j] >= 0 else -1 for j in range(2)))


def jacobians(geom: ManipulatorGeometry, X, q, tau_f: float = TAU_F) -> KinematicMatrices:
    """Direct- and inverse-kinematics matrices of the velocity model."""
    residual = constraint_residual(geom, X, q)
    if np.max(np.abs(residual)) > tau_f:
        raise InvalidConfiguration(
            f"(X, q) violates loop closure: residual {residual.tolist()} exceeds {tau_f}"
        )
    x, y = X
    t1, t2 = q
    (cx, cy), (dx, dy) = elbows(geom, q)
    pc = np.array([x - cx, y - cy])
    pd = np.array([x - dx, y - dy])
    n1 = np.array([-math.sin(t1), math.cos(t1)])
    n2 = np.array([-math.sin(t2), math.cos(t2)])
    A = np.array([pc, pd])
    B = np.diag([-geom.L1 * float(pc @ n1), -geom.L3 * float(pd @ n2)])
    det_a = float(pc[0] * pd[1] - pc[1] * pd[0])
    return KinematicMatrices(A=A, B=B, detA=det_a, detB=float(B[0, 0] * B[1, 1]))


def classify_singularity(
    M: KinematicMatrices, tau_a: float = TAU_A, tau_b: float = TAU_B
) -> SingularityClass:
    parallel = abs(M.detA) <= tau_a
    serial = min(abs(M.B[0, 0]), abs(M.B[1, 1])) <= tau_b
    if parallel and serial:
        return SingularityClass.BOTH
    if parallel:
        return SingularityClass.PARALLEL
    if serial:
        return SingularityClass.SERIAL
    return SingularityClass.REGULAR
