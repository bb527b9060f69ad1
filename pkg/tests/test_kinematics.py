import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import fk_bisection, ik_sweep
from parakin.kinematics import (
    WORKING_MODES,
    GeometryError,
    InvalidConfiguration,
    JointConfig,
    ManipulatorGeometry,
    SingularityClass,
    WorkingMode,
    canonical_angle,
    classify_singularity,
    constraint_residual,
    forward_kinematics,
    in_joint_limits,
    inverse_kinematics,
    inverse_kinematics_branch,
    jacobians,
    working_mode_of,
)

# sqrt(L2^2 - (d/2)^2) with elbows (8, 0) and (-1, 0)
H_STRETCHED = math.sqrt(4.75)


def test_default_geometry_values():
    g = ManipulatorGeometry()
    assert (g.L0, g.L1, g.L2, g.L3, g.L4) == (7, 8, 5, 8, 5)
    assert (g.theta_min, g.theta_max) == (0.0, math.pi)


@pytest.mark.parametrize("kw", [{"L2": 0.0}, {"L0": -1.0}, {"L1": math.nan}])
def test_bad_lengths_rejected(kw):
    with pytest.raises(GeometryError, match="lengths"):
        ManipulatorGeometry(**kw)


def test_bad_limits_rejected():
    with pytest.raises(GeometryError, match="limits"):
        ManipulatorGeometry(theta_min=1.0, theta_max=1.0)


def test_symmetric_configuration(geom):
    sol = forward_kinematics(geom, (math.pi / 2, math.pi / 2), +1)
    assert sol.point.x == pytest.approx(3.5, abs=1e-12)
    assert sol.point.y == pytest.approx(8 + math.sqrt(25 - 3.5**2), abs=1e-12)


@pytest.mark.parametrize("sigma,expected_y", [(+1, -H_STRETCHED), (-1, H_STRETCHED)])
def test_fk_stretched_elbows_against_bisection(geom, sigma, expected_y):
    q = (0.0, math.pi)
    sol = forward_kinematics(geom, q, sigma)
    ref = fk_bisection(q, sigma)
    assert sol.point == pytest.approx((3.5, expected_y), abs=1e-12)
    assert sol.point == pytest.approx(tuple(ref), abs=1e-9)


def test_fk_branch_sign_matches_det_a(geom):
    rng = np.random.default_rng(3)
    for _ in range(25):
        q = rng.uniform(0, math.pi, 2)
        for sigma in (-1, 1):
            sol = forward_kinematics(geom, q, sigma)
            if sol is None or sol.degenerate:
                continue
            assert np.sign(jacobians(geom, sol.point, q).detA) == sigma
            ref = fk_bisection(q, sigma, n_scan=4000)
            assert sol.point == pytest.approx(tuple(ref), abs=1e-8)


def test_fk_unreachable_returns_none():
    g = ManipulatorGeometry(L0=30.0)
    assert forward_kinematics(g, (math.pi, 0.0), 1) is None


def test_fk_tangent_is_degenerate():
    # elbows 10 apart with distal links 5 + 5: circles touch
    g = ManipulatorGeometry(L0=10.0, L1=1.0, L3=1.0)
    sol = forward_kinematics(g, (math.pi / 2, math.pi / 2), 1)
    assert sol.degenerate
    assert sol.point == pytest.approx((5.0, 1.0))


def test_ik_matches_sweep_oracle(geom):
    X = (3.5, 6.0)
    sols = inverse_kinematics(geom, X)
    assert [s.mode for s in sols] == list(WORKING_MODES)
    legs = ik_sweep(*X)
    assert sorted({s.q.theta1 for s in sols}) == pytest.approx(sorted(legs[0]), abs=1e-9)
    assert sorted({s.q.theta2 for s in sols}) == pytest.approx(sorted(legs[1]), abs=1e-9)
    for s in sols:
        assert np.max(np.abs(constraint_residual(geom, X, s.q))) < 1e-12
        assert working_mode_of(geom, X, s.q) == s.mode


def test_ik_gamma_plus_is_phi_plus_alpha(geom):
    X = (3.5, 6.0)
    phi = math.atan2(6.0, 3.5)
    r = math.hypot(3.5, 6.0)
    alpha = math.acos((64 + r * r - 25) / (16 * r))
    q = inverse_kinematics_branch(geom, X, WorkingMode(1, 1))
    assert q.theta1 == pytest.approx(phi + alpha, abs=1e-12)


def test_ik_outside_workspace_is_empty(geom):
    assert inverse_kinematics(geom, (30.0, 0.0)) == []
    assert inverse_kinematics(geom, (3.5, -12.0)) == []


def test_ik_on_serial_circle_merges_branches(geom):
    X = (13.0 * math.cos(1.0), 13.0 * math.sin(1.0))
    sols = inverse_kinematics(geom, X, tau_b=1e-6)
    assert sols
    assert all(s.serial_legs[0] for s in sols)
    assert {s.mode.gamma1 for s in sols} == {1}
    # either label of leg 1 finds the merged branch
    for m in WORKING_MODES:
        if any(s.mode.gamma2 == m.gamma2 for s in sols):
            assert inverse_kinematics_branch(geom, X, m, tau_b=1e-6) is not None


def test_joint_limits_closed_interval(geom):
    assert in_joint_limits(geom, (0.0, math.pi))
    assert in_joint_limits(geom, (-math.pi, 2 * math.pi))  # wraps onto pi and 0
    assert not in_joint_limits(geom, (-0.1, 1.0))


def test_canonical_angle_range():
    assert canonical_angle(-math.pi) == pytest.approx(math.pi)
    assert canonical_angle(3 * math.pi) == pytest.approx(math.pi)
    vals = canonical_angle(np.linspace(-20, 20, 101))
    assert np.all(vals > -math.pi) and np.all(vals <= math.pi)


def test_velocity_model_finite_differences(geom):
    rng = np.random.default_rng(11)
    h = 1e-6
    checked = 0
    while checked < 100:
        q = rng.uniform(0.2, math.pi - 0.2, 2)
        qdot = rng.normal(size=2)
        sol = forward_kinematics(geom, q, 1)
        if sol is None or sol.degenerate:
            continue
        plus = forward_kinematics(geom, q + h * qdot, 1)
        minus = forward_kinematics(geom, q - h * qdot, 1)
        if plus is None or minus is None:
            continue
        pdot = (np.array(plus.point) - np.array(minus.point)) / (2 * h)
        M = jacobians(geom, sol.point, q)
        assert np.max(np.abs(M.A @ pdot + M.B @ qdot)) < 1e-6
        checked += 1


def test_jacobians_reject_inconsistent_pair(geom):
    with pytest.raises(InvalidConfiguration):
        jacobians(geom, (3.5, 6.0), (0.0, 0.0))


def test_classify_singularity(geom):
    q = (0.0, math.pi)
    sol = forward_kinematics(geom, q, 1)
    assert classify_singularity(jacobians(geom, sol.point, q)) is SingularityClass.REGULAR
    # distal links folded along the proximal link: leg 1 serial singular
    X = (3.0, 0.0)
    (s, *_) = inverse_kinematics(geom, X, tau_b=1e-6)
    M = jacobians(geom, X, s.q)
    assert classify_singularity(M, tau_b=1e-6) in (SingularityClass.SERIAL, SingularityClass.BOTH)


def test_working_mode_text():
    assert str(WorkingMode(1, -1)) == "+-"
    assert WorkingMode.parse("-+") == WorkingMode(-1, 1)
    with pytest.raises(ValueError):
        WorkingMode.parse("+0")


@settings(max_examples=200, deadline=None)
@given(
    t1=st.floats(0.05, math.pi - 0.05),
    t2=st.floats(0.05, math.pi - 0.05),
    sigma=st.sampled_from([-1, 1]),
)
def test_fk_ik_round_trip_property(t1, t2, sigma):
    geom = ManipulatorGeometry()
    sol = forward_kinematics(geom, (t1, t2), sigma)
    if sol is None or sol.degenerate:
        return
    mode = working_mode_of(geom, sol.point, (t1, t2))
    q = inverse_kinematics_branch(geom, sol.point, mode)
    assert q is not None
    assert q == pytest.approx((t1, t2), abs=1e-8)
    assert JointConfig(*q) == q


SQRT_1275 = math.sqrt(12.75)


def test_residual_examples(geom):
    up = (3.5, 8.0 + SQRT_1275)
    assert constraint_residual(geom, up, (math.pi / 2, math.pi / 2)) == pytest.approx([0.0, 0.0], abs=1e-12)
    np.testing.assert_allclose(constraint_residual(geom, (0.0, 0.0), (0.0, 0.0)), [39.0, 200.0])


def test_symmetric_det_a(geom):
    M = jacobians(geom, (3.5, 8.0 + SQRT_1275), (math.pi / 2, math.pi / 2))
    assert M.detA == pytest.approx(7.0 * SQRT_1275, rel=1e-12)


def test_lower_symmetric_point(geom):
    q = (math.pi / 2, math.pi / 2)
    down = forward_kinematics(geom, q, -1).point
    assert down == pytest.approx((3.5, 8.0 - SQRT_1275), abs=1e-12)
    mode = working_mode_of(geom, down, q)
    assert inverse_kinematics_branch(geom, down, mode) == pytest.approx(q, abs=1e-12)
    assert inverse_kinematics_branch(geom, (100.0, 100.0), WorkingMode(1, 1)) is None


def test_in_joint_limits_examples(geom):
    assert in_joint_limits(geom, (math.pi / 2, math.pi / 2))
    assert not in_joint_limits(geom, (-0.1, 1.0))


def test_stretched_leg_single_branch(geom):
    # |X - A| = L1 + L2: leg 1 has one angle, shared by both of its modes
    X = (5.0, 12.0)
    sols = inverse_kinematics(geom, X)
    assert len({round(s.q.theta1, 12) for s in sols}) == 1
    assert all(s.serial_legs[0] and not s.serial_legs[1] for s in sols)
    for s in sols:
        M = jacobians(geom, X, s.q)
        assert abs(M.B[0, 0]) <= 1e-9
        assert classify_singularity(M) is SingularityClass.SERIAL


def test_parallel_configuration_by_root_finding(geom):
    from scipy.optimize import brentq

    # theta1 fixed; find theta2 where the elbows are L2 + L4 apart (det A = 0)
    t1 = math.pi / 2
    C = np.array([0.0, geom.L1])

    def gap(t2):
        D = np.array([geom.L0 + geom.L3 * math.cos(t2), geom.L3 * math.sin(t2)])
        return float(np.linalg.norm(D - C)) - (geom.L2 + geom.L4)

    t2 = brentq(gap, 0.0, math.pi / 2, xtol=1e-14)
    D = np.array([geom.L0 + geom.L3 * math.cos(t2), geom.L3 * math.sin(t2)])
    X = C + geom.L2 / (geom.L2 + geom.L4) * (D - C)
    M = jacobians(geom, X, (t1, t2))
    assert abs(M.detA) < 1e-6
    assert classify_singularity(M) is SingularityClass.PARALLEL
