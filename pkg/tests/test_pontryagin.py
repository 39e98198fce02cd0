"""Costate recursions, variational residuals, certificates, norm bounds."""

import numpy as np
import pytest

from ihoc import (
    Ball,
    Box,
    ControlProblem,
    IndexMismatch,
    MarginZero,
    MultiplierPath,
    NonFiniteValue,
    NormalizationError,
    PointNotInSet,
    Process,
    StageDynamics,
    StageReward,
    TangentConeViolation,
    abnormal_instance,
    abnormal_reference,
    adjoint_step,
    adjoint_sweep,
    bound_audit,
    cone_bound_check,
    stationary_stages,
    verify_certificate,
    vi_residual,
)


def build_problem(n, m, f, jx, ju, phi, gx, gu, cset, sigma):
    dyn = StageDynamics(n, m, f, jx, ju)
    rew = StageReward(n, m, phi, gx, gu)
    return ControlProblem(stationary_stages(dyn, rew, cset),
                          np.asarray(sigma, dtype=float))


def drift_problem(cset=None, sigma=0.0):
    # f = x with a linear-in-u reward; the control never moves the state
    cset = Box(np.array([-1.0]), np.array([1.0])) if cset is None else cset
    return build_problem(
        1, 1, lambda x, u: x.copy(), lambda x, u: np.eye(1),
        lambda x, u: np.zeros((1, 1)),
        lambda x, u: 2.0 * u[0], lambda x, u: np.zeros(1),
        lambda x, u: np.array([2.0]), cset, [sigma])


def const_process(x_val, u_val, T, n=1, m=1):
    x = np.tile(np.atleast_1d(float(x_val)), (T + 2, 1)) if n == 1 else None
    u = np.tile(np.atleast_1d(float(u_val)), (T + 1, 1)) if m == 1 else None
    return Process(x, u)


# ---------------------------------------------------------------------------
# Adjoint recursion.
# ---------------------------------------------------------------------------

def test_adjoint_step_identity_dynamics():
    problem = drift_problem()
    proc = const_process(0.0, 0.0, 4)
    p = np.array([0.7])
    out = adjoint_step(problem, proc, 2, p, 0.0)
    assert np.array_equal(out, p)


def test_adjoint_step_worked_value():
    problem = build_problem(
        1, 1, lambda x, u: 2.0 * x + u, lambda x, u: np.array([[2.0]]),
        lambda x, u: np.array([[1.0]]),
        lambda x, u: -x[0] ** 2, lambda x, u: np.array([-2.0 * x[0]]),
        lambda x, u: np.zeros(1),
        Box(np.array([-5.0]), np.array([5.0])), [1.0])
    proc = const_process(1.0, 0.0, 4)
    out = adjoint_step(problem, proc, 1, np.array([3.0]), 1.0)
    assert out[0] == 2.0 * 3.0 - 2.0


def test_adjoint_sweep_matches_recursion(golden_problem, golden_oracle):
    proc, path, _ = golden_oracle
    T = 20
    swept = adjoint_sweep(golden_problem, proc, path.p_at(T + 1), 1.0, T=T)
    assert swept.lambda0 == 1.0
    assert swept.p.shape == (T + 1, 1)
    assert np.max(np.abs(swept.p - path.p[:T + 1])) <= 1e-8

    single = adjoint_sweep(golden_problem, proc, path.p_at(2), 1.0, T=1)
    step = adjoint_step(golden_problem, proc, 1, path.p_at(2), 1.0)
    assert np.array_equal(single.p_at(1), step)


def test_adjoint_sweep_zero_inputs():
    problem = drift_problem()
    proc = const_process(0.0, 0.0, 3)
    swept = adjoint_sweep(problem, proc, np.zeros(1), 0.0)
    assert np.array_equal(swept.p, np.zeros((4, 1)))


# ---------------------------------------------------------------------------
# Variational inequality residual.
# ---------------------------------------------------------------------------

def test_vi_residual_box_values():
    problem = drift_problem()
    mid = const_process(0.0, 0.5, 3)
    assert vi_residual(problem, mid, 1, np.zeros(1), 1.0) \
        == pytest.approx(1.0, abs=1e-15)
    top = const_process(0.0, 1.0, 3)
    assert vi_residual(problem, top, 1, np.zeros(1), 1.0) == 0.0


def test_vi_residual_ball_maximizer():
    problem = build_problem(
        1, 2, lambda x, u: x.copy(), lambda x, u: np.eye(1),
        lambda x, u: np.zeros((1, 2)),
        lambda x, u: 3.0 * u[0] + 4.0 * u[1],
        lambda x, u: np.zeros(1), lambda x, u: np.array([3.0, 4.0]),
        Ball(np.zeros(2), 1.0), [0.0])
    x = np.zeros((5, 1))
    u = np.tile([0.6, 0.8], (4, 1))
    assert vi_residual(problem, Process(x, u), 2, np.zeros(1), 1.0) \
        == pytest.approx(0.0, abs=1e-12)


def test_vi_residual_nonnegative_random(rng):
    problem = drift_problem()
    for _ in range(50):
        u_hat = rng.uniform(-1.0, 1.0)
        proc = const_process(0.0, u_hat, 3)
        p_next = rng.normal(size=1)
        lam = float(rng.uniform(0.0, 2.0))
        assert vi_residual(problem, proc, 1, p_next, lam) >= -1e-12


def test_vi_residual_requires_membership():
    problem = drift_problem()
    outside = const_process(0.0, 5.0, 3)
    with pytest.raises(PointNotInSet):
        vi_residual(problem, outside, 1, np.zeros(1), 1.0)


# ---------------------------------------------------------------------------
# Certificates.
# ---------------------------------------------------------------------------

def test_certificate_accepts_reference_path(golden_problem, golden_oracle):
    proc, path, _ = golden_oracle
    report = verify_certificate(golden_problem, proc, path)
    assert report.passed
    assert all(report.verdicts.values())
    assert report.worst()["adjoint"] <= 1e-10
    assert report.worst()["variational"] <= 1e-10


def test_certificate_scale_invariance(golden_problem, golden_oracle):
    proc, path, _ = golden_oracle
    base = verify_certificate(golden_problem, proc, path)
    scaled = verify_certificate(golden_problem, proc, path.scaled(7.0))
    assert scaled.verdicts == base.verdicts
    assert scaled.passed == base.passed
    assert np.allclose(scaled.adjoint_residuals, base.adjoint_residuals,
                       rtol=1e-9, atol=1e-15)
    assert np.allclose(scaled.vi_residuals, base.vi_residuals,
                       rtol=1e-9, atol=1e-15)


def test_certificate_rejects_zero_path():
    problem = drift_problem()
    proc = const_process(0.0, 0.0, 3)
    report = verify_certificate(problem, proc, MultiplierPath(0.0,
                                                              np.zeros((4,
                                                                        1))))
    assert not report.passed
    assert not report.verdicts["nontriviality"]


def test_certificate_window_mismatch(golden_problem, golden_oracle):
    proc, path, _ = golden_oracle
    with pytest.raises(IndexMismatch):
        verify_certificate(golden_problem, proc.restricted(5), path)


def test_solver_controls_stay_interior(golden_solve):
    # with the control box inactive, the variational bound pins down the
    # gradient itself: vi >= rho * ||q|| for an interior point at distance
    # rho from the faces
    problem, tp, kkt, path = golden_solve
    scale = path.scale()
    for t in range(tp.T + 1):
        x, u = kkt.primal.x[t], kkt.primal.u[t]
        dyn, rew = problem.dynamics(t), problem.reward(t)
        q = path.lambda0 * rew.d2(x, u) + dyn.d2(x, u).T @ path.p_at(t + 1)
        rho = 10.0 - float(np.max(np.abs(u)))
        assert rho > 1.0
        vi = vi_residual(problem, kkt.primal, t, path.p_at(t + 1),
                         path.lambda0)
        assert rho * np.linalg.norm(q) <= vi + 1e-12
        assert np.linalg.norm(q) <= 2e-6 * scale / rho


# ---------------------------------------------------------------------------
# Norm-bound audit.
# ---------------------------------------------------------------------------

def test_bound_audit_identity_chain():
    problem = drift_problem(sigma=0.3)
    # reward gradient in u is nonzero, so silence it for the pure chain
    problem = build_problem(
        1, 1, lambda x, u: x.copy(), lambda x, u: np.eye(1),
        lambda x, u: np.zeros((1, 1)),
        lambda x, u: 0.0, lambda x, u: np.zeros(1),
        lambda x, u: np.zeros(1),
        Box(np.array([-1.0]), np.array([1.0])), [0.3])
    proc = const_process(0.3, 0.0, 5)
    paths = {T: MultiplierPath(0.5, np.tile([0.7], (T + 1, 1)))
             for T in (3, 5)}
    audit = bound_audit(problem, proc, paths)
    assert np.array_equal(audit.a, np.zeros(6))
    assert np.array_equal(audit.b, np.ones(6))
    for T, sl in audit.slacks.items():
        assert np.array_equal(sl, np.zeros(T + 1))
    assert audit.min_slack == 0.0
    assert audit.flagged_stages == ()
    assert audit.passed


def test_bound_audit_zero_margin():
    problem = build_problem(
        1, 1, lambda x, u: np.zeros(1), lambda x, u: np.zeros((1, 1)),
        lambda x, u: np.zeros((1, 1)),
        lambda x, u: 0.0, lambda x, u: np.zeros(1),
        lambda x, u: np.zeros(1),
        Box(np.array([-1.0]), np.array([1.0])), [0.0])
    proc = const_process(0.0, 0.0, 3)
    paths = {3: MultiplierPath(1.0, np.zeros((4, 1)))}
    audit = bound_audit(problem, proc, paths)
    assert audit.flagged_stages == (2, 3, 4)
    assert np.isnan(audit.a[1:]).all()
    assert np.isnan(audit.slacks[3][1:]).all()
    with pytest.raises(MarginZero):
        bound_audit(problem, proc, paths, strict=True)


def test_bound_audit_requires_coverage(golden_oracle):
    proc, path, _ = golden_oracle
    with pytest.raises(IndexMismatch):
        bound_audit(drift_problem(), const_process(0.0, 0.0, 3), {10: path})


# ---------------------------------------------------------------------------
# Tangent-cone directional bound.
# ---------------------------------------------------------------------------

def test_cone_bound_reference_paths(golden_problem, golden_oracle):
    proc, path, _ = golden_oracle
    report = cone_bound_check(golden_problem, proc, path,
                              rng=np.random.default_rng(5))
    assert report.passed
    assert report.stage == 0
    assert report.worst <= 1e-7


def test_cone_bound_separates_abnormal():
    problem, path = abnormal_instance()
    proc, _ = abnormal_reference(None, path.horizon)
    ok = cone_bound_check(problem, proc, path, rng=np.random.default_rng(3))
    assert ok.passed

    normal = MultiplierPath(1.0, path.p.copy())
    bad = cone_bound_check(problem, proc, normal,
                           rng=np.random.default_rng(3))
    assert not bad.passed
    assert bad.worst > 1e-3


def test_cone_bound_rejects_outward_generator():
    problem = drift_problem(cset=Box(np.array([0.0]), np.array([1.0])))
    proc = const_process(0.0, 0.0, 3)  # control pinned at the lower face
    path = MultiplierPath(0.0, np.ones((4, 1)))
    with pytest.raises(TangentConeViolation):
        cone_bound_check(problem, proc, path,
                         generators=np.array([[-1.0]]))


def test_cone_bound_anchor_override(golden_problem, golden_oracle):
    # moving the anchor pairs p_5 with the stage that produced x_5
    proc, path, _ = golden_oracle
    report = cone_bound_check(golden_problem, proc, path, s=5,
                              rng=np.random.default_rng(5))
    assert report.s == 5
    assert report.stage == 4
    assert report.passed


# ---------------------------------------------------------------------------
# Multiplier-path bookkeeping.
# ---------------------------------------------------------------------------

def test_multiplier_path_validation():
    with pytest.raises(NormalizationError):
        MultiplierPath(-0.1, np.ones((3, 1)))
    with pytest.raises(NonFiniteValue):
        MultiplierPath(1.0, np.array([[np.nan]]))
    path = MultiplierPath(2.0, np.ones((3, 1)))
    with pytest.raises(IndexMismatch):
        path.p_at(0)
    with pytest.raises(IndexMismatch):
        path.p_at(5)
    with pytest.raises(NormalizationError):
        path.scaled(-1.0)


def test_normalization_idempotent():
    path = MultiplierPath(2.0, np.array([[3.0], [4.0], [0.5]]))
    once = path.normalized(1)
    assert once.normalized_at == 1
    assert abs(once.lambda0 + np.linalg.norm(once.p_at(1)) - 1.0) <= 1e-15
    twice = once.normalized(1)
    assert abs(twice.lambda0 - once.lambda0) <= 1e-15
    assert np.max(np.abs(twice.p - once.p)) <= 1e-15


def test_normalizing_zero_path_fails():
    with pytest.raises(NormalizationError):
        MultiplierPath(0.0, np.zeros((3, 1))).normalized(1)
