"""Problem data model: stage maps, processes, derivative and rank checks."""

import numpy as np
import pytest

from ihoc import (
    AnchorReport,
    Box,
    ControlProblem,
    NonFiniteValue,
    Process,
    StageData,
    StageDynamics,
    StageReward,
    Tail,
    anchor_check,
    check_derivatives,
    control_violation,
    feasibility_residual,
    interiority_margin,
    make_ramsey_problem,
    periodic_stages,
    ramsey_reference,
    rank_codim,
    stationary_stages,
    tabulated_stages,
)


def scalar_dynamics(f, fx, fu):
    return StageDynamics(1, 1, lambda x, u: np.array([f(x[0], u[0])]),
                         lambda x, u: np.array([[fx(x[0], u[0])]]),
                         lambda x, u: np.array([[fu(x[0], u[0])]]))


def scalar_reward(phi, px, pu):
    return StageReward(1, 1, lambda x, u: phi(x[0], u[0]),
                       lambda x, u: np.array([px(x[0], u[0])]),
                       lambda x, u: np.array([pu(x[0], u[0])]))


ZERO_REWARD = scalar_reward(lambda x, u: 0.0, lambda x, u: 0.0,
                            lambda x, u: 0.0)
UNIT_BOX = Box(np.array([-1.0]), np.array([1.0]))
WIDE_BOX = Box(np.array([-10.0]), np.array([10.0]))


def scalar_problem(dyn, rew, box=WIDE_BOX, sigma=0.0, discount=1.0,
                   mode="equation"):
    return ControlProblem(stationary_stages(dyn, rew, box, discount),
                          np.array([sigma]), mode=mode)


def flat_process(x0, T, x_value=None, u_value=0.0):
    xv = x0 if x_value is None else x_value
    x = np.full((T + 2, 1), float(xv))
    x[0, 0] = x0
    return Process(x, np.full((T + 1, 1), float(u_value)))


# ---------------------------------------------------------------------------
# Derivative checks.
# ---------------------------------------------------------------------------

def test_check_derivatives_linear_exact():
    # central differences are exact on affine maps, any step size
    dyn = scalar_dynamics(lambda x, u: 0.7 * x + 0.2 * u,
                          lambda x, u: 0.7, lambda x, u: 0.2)
    problem = scalar_problem(dyn, ZERO_REWARD)
    proc = flat_process(0.3, 3, x_value=0.3, u_value=0.1)
    for h in (1e-2, 1e-3):
        rep = check_derivatives(problem, proc, h=h)
        assert rep.worst_by_block()["d1f"] <= 1e-12
        assert rep.worst_by_block()["d2f"] <= 1e-12


def test_check_derivatives_linear_reward():
    rew = scalar_reward(lambda x, u: 4.0 * x, lambda x, u: 4.0,
                        lambda x, u: 0.0)
    dyn = scalar_dynamics(lambda x, u: x, lambda x, u: 1.0, lambda x, u: 0.0)
    rep = check_derivatives(scalar_problem(dyn, rew),
                            flat_process(1.0, 2, x_value=1.0), h=1e-5)
    assert rep.worst_by_block()["d1phi"] <= 1e-10


def test_check_derivatives_cubic_truncation_error():
    # phi = x^3 at x = 1: central difference is 3 + h^2, so the scaled
    # error is h^2 / 3 up to round-off
    rew = scalar_reward(lambda x, u: x ** 3, lambda x, u: 3.0 * x ** 2,
                        lambda x, u: 0.0)
    dyn = scalar_dynamics(lambda x, u: x, lambda x, u: 1.0, lambda x, u: 0.0)
    h = 1e-5
    rep = check_derivatives(scalar_problem(dyn, rew),
                            flat_process(1.0, 2, x_value=1.0), h=h)
    err = rep.worst_by_block()["d1phi"]
    assert err <= 1e-9
    assert err == pytest.approx(h ** 2 / 3.0, rel=0.25)


def test_check_derivatives_detects_wrong_gradient():
    rew = scalar_reward(lambda x, u: x ** 2, lambda x, u: 2.0 * x + 1.0,
                        lambda x, u: 0.0)  # off by one
    dyn = scalar_dynamics(lambda x, u: x, lambda x, u: 1.0, lambda x, u: 0.0)
    rep = check_derivatives(scalar_problem(dyn, rew),
                            flat_process(1.0, 2, x_value=1.0))
    assert rep.worst() > 1e-2


def test_check_derivatives_nonfinite():
    dyn = scalar_dynamics(lambda x, u: 1.0 / (x - 0.5), lambda x, u: 0.0,
                          lambda x, u: 0.0)
    problem = scalar_problem(dyn, ZERO_REWARD)
    with np.errstate(divide="ignore"), pytest.raises(NonFiniteValue):
        check_derivatives(problem, flat_process(0.5, 2, x_value=0.5))


# ---------------------------------------------------------------------------
# Feasibility and control membership.
# ---------------------------------------------------------------------------

def test_feasibility_residual_modes(ramsey_pair):
    problem, proc, _ = ramsey_pair
    assert feasibility_residual(problem, proc) <= 1e-12

    free = make_ramsey_problem(mode="inequation")
    assert feasibility_residual(free, proc) <= 1e-12
    # throwing capital away at the window's end is feasible under <=,
    # never under = (an interior cut would also starve the next stage)
    short = proc.restricted(10)
    slack_x = short.x.copy()
    slack_x[-1, 0] -= 0.01
    slack = Process(slack_x, short.u.copy())
    assert feasibility_residual(free, slack) <= 1e-12
    assert feasibility_residual(problem, slack) >= 0.009
    # creating capital violates both
    bump_x = short.x.copy()
    bump_x[-1, 0] += 0.01
    bump = Process(bump_x, short.u.copy())
    assert feasibility_residual(free, bump) >= 0.009


def test_control_violation():
    dyn = scalar_dynamics(lambda x, u: x, lambda x, u: 1.0, lambda x, u: 0.0)
    problem = scalar_problem(dyn, ZERO_REWARD, box=UNIT_BOX)
    ok = flat_process(0.0, 2, x_value=0.0, u_value=0.5)
    assert control_violation(problem, ok) == 0.0
    out = flat_process(0.0, 2, x_value=0.0, u_value=1.5)
    assert control_violation(problem, out) == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# Stage maps.
# ---------------------------------------------------------------------------

def test_stationary_discount_scales_reward():
    rew = scalar_reward(lambda x, u: 2.0, lambda x, u: 0.0, lambda x, u: 0.0)
    dyn = scalar_dynamics(lambda x, u: x, lambda x, u: 1.0, lambda x, u: 0.0)
    stages = stationary_stages(dyn, rew, UNIT_BOX, discount=0.5)
    x, u = np.zeros(1), np.zeros(1)
    assert stages.at(0).reward.eval(x, u) == 2.0
    assert stages.at(3).reward.eval(x, u) == pytest.approx(2.0 * 0.5 ** 3)


def test_periodic_stages_cycle():
    def block(c):
        dyn = scalar_dynamics(lambda x, u: c * x, lambda x, u: c,
                              lambda x, u: 0.0)
        return StageData(dyn, ZERO_REWARD, UNIT_BOX)

    stages = periodic_stages([block(2.0), block(3.0)])
    x, u = np.ones(1), np.zeros(1)
    values = [stages.at(t).dynamics.eval(x, u)[0] for t in range(5)]
    assert values == [2.0, 3.0, 2.0, 3.0, 2.0]


def test_tabulated_stages_fall_back_to_tail():
    def block(c):
        dyn = scalar_dynamics(lambda x, u: x + c, lambda x, u: 1.0,
                              lambda x, u: 0.0)
        return StageData(dyn, ZERO_REWARD, UNIT_BOX)

    stages = tabulated_stages([block(1.0), block(2.0)], tail=block(9.0))
    x, u = np.zeros(1), np.zeros(1)
    assert [stages.at(t).dynamics.eval(x, u)[0] for t in range(4)] \
        == [1.0, 2.0, 9.0, 9.0]


def test_stage_map_rejects_negative_index():
    dyn = scalar_dynamics(lambda x, u: x, lambda x, u: 1.0, lambda x, u: 0.0)
    stages = stationary_stages(dyn, ZERO_REWARD, UNIT_BOX)
    with pytest.raises(IndexError):
        stages.at(-1)


# ---------------------------------------------------------------------------
# Process windows.
# ---------------------------------------------------------------------------

def test_process_window_shapes():
    with pytest.raises(Exception):
        Process(np.zeros((3, 1)), np.zeros((3, 1)))  # x rows must be u + 1


def test_process_restrict_and_extend(ramsey_pair):
    problem, proc, _ = ramsey_pair
    short = proc.restricted(10)
    assert short.horizon == 10
    assert np.array_equal(short.x, proc.x[:12])

    # extending a window that ends at the steady state reproduces it
    tail = Tail(proc.tail.x_ss, proc.tail.u_ss)
    long_ref, _ = ramsey_reference(None, 55)
    near_ss = Process(long_ref.x[:42], long_ref.u[:41], tail)
    grown = near_ss.extended(problem, 50)
    assert grown.horizon == 50
    assert feasibility_residual(problem, grown) <= 1e-10 or \
        np.max(np.abs(grown.x[-1] - tail.x_ss)) <= 1e-6


def test_process_extend_needs_tail():
    proc = flat_process(0.0, 2, x_value=0.0)
    dyn = scalar_dynamics(lambda x, u: x, lambda x, u: 1.0, lambda x, u: 0.0)
    with pytest.raises(Exception):
        proc.extended(scalar_problem(dyn, ZERO_REWARD), 5)


# ---------------------------------------------------------------------------
# Interiority margin and rank reports.
# ---------------------------------------------------------------------------

def test_interiority_margin_full_cone_exact():
    # f = x + u with an interior control: the image of the unit ball of
    # (h, k) under h + k has radius sqrt(2)
    dyn = scalar_dynamics(lambda x, u: x + u, lambda x, u: 1.0,
                          lambda x, u: 1.0)
    problem = scalar_problem(dyn, ZERO_REWARD)
    proc = flat_process(0.0, 3, x_value=0.0)
    assert interiority_margin(problem, proc, 1) == pytest.approx(np.sqrt(2.0),
                                                                 abs=1e-12)


def test_interiority_margin_state_only():
    dyn = scalar_dynamics(lambda x, u: x, lambda x, u: 1.0, lambda x, u: 0.0)
    problem = scalar_problem(dyn, ZERO_REWARD)
    assert interiority_margin(problem, flat_process(0.0, 3, x_value=0.0),
                              1) == pytest.approx(1.0, abs=1e-12)


def test_interiority_margin_zero_when_degenerate():
    dyn = scalar_dynamics(lambda x, u: 0.0, lambda x, u: 0.0,
                          lambda x, u: 0.0)
    problem = scalar_problem(dyn, ZERO_REWARD)
    assert interiority_margin(problem, flat_process(0.0, 3, x_value=0.0),
                              1) == 0.0


def test_interiority_margin_active_face():
    # u pinned at the upper face: the cone only allows k <= 0, so the
    # direction d = +1 costs a full unit step while d = -1 enjoys sqrt(2);
    # the estimate is the worse of the two
    dyn = scalar_dynamics(lambda x, u: x + u, lambda x, u: 1.0,
                          lambda x, u: 1.0)
    problem = scalar_problem(dyn, ZERO_REWARD, box=UNIT_BOX)
    proc = flat_process(0.0, 3, x_value=0.0, u_value=1.0)
    assert interiority_margin(problem, proc, 1) == pytest.approx(1.0,
                                                                 abs=1e-9)


def test_interiority_margin_sampling_stability(rng):
    # estimates from two independent direction sets agree to 5%
    A = np.array([[0.8, 0.1], [0.0, 0.9]])
    dyn = StageDynamics(2, 2, lambda x, u: A @ x + u,
                        lambda x, u: A, lambda x, u: np.eye(2))
    rew = StageReward(2, 2, lambda x, u: 0.0, lambda x, u: np.zeros(2),
                      lambda x, u: np.zeros(2))
    box = Box(-np.ones(2), np.ones(2))
    problem = ControlProblem(stationary_stages(dyn, rew, box), np.zeros(2))
    x = np.zeros((5, 2))
    u = np.tile([1.0, 0.0], (4, 1))  # first coordinate at its face
    proc = Process(x, u)
    m1 = interiority_margin(problem, proc, 1, direction_samples=256,
                            rng=np.random.default_rng(11))
    m2 = interiority_margin(problem, proc, 1, direction_samples=256,
                            rng=np.random.default_rng(97))
    assert m1 > 0 and m2 > 0
    assert abs(m1 - m2) / max(m1, m2) <= 0.05


def test_rank_codim_cases():
    def with_d2(mat):
        arr = np.asarray(mat, dtype=float)
        dyn = StageDynamics(2, 2, lambda x, u: arr @ u,
                            lambda x, u: np.zeros((2, 2)),
                            lambda x, u: arr)
        rew = StageReward(2, 2, lambda x, u: 0.0, lambda x, u: np.zeros(2),
                          lambda x, u: np.zeros(2))
        box = Box(-np.ones(2), np.ones(2))
        problem = ControlProblem(stationary_stages(dyn, rew, box),
                                 np.zeros(2))
        return problem, Process(np.zeros((4, 2)), np.zeros((3, 2)))

    assert rank_codim(*with_d2(np.eye(2)), 1) == (2, 0)
    assert rank_codim(*with_d2(np.zeros((2, 2))), 1) == (0, 2)
    assert rank_codim(*with_d2([[1.0, 0.0], [1.0, 0.0]]), 1) == (1, 1)


def test_anchor_check_cases(rng):
    def setup(mat, u_val):
        arr = np.asarray(mat, dtype=float)
        dyn = StageDynamics(2, 2, lambda x, u: x + arr @ u,
                            lambda x, u: np.eye(2), lambda x, u: arr)
        rew = StageReward(2, 2, lambda x, u: 0.0, lambda x, u: np.zeros(2),
                          lambda x, u: np.zeros(2))
        box = Box(-np.ones(2), np.ones(2))
        problem = ControlProblem(stationary_stages(dyn, rew, box),
                                 np.zeros(2))
        u = np.tile(np.asarray(u_val, dtype=float), (3, 1))
        return problem, Process(np.zeros((4, 2)), u)

    surjective = anchor_check(*setup(np.eye(2), [0.0, 0.0]), 1, rng)
    assert isinstance(surjective, AnchorReport)
    assert surjective.affine_codim == 0
    assert surjective.relative_interior_nonempty

    degenerate = anchor_check(*setup(np.zeros((2, 2)), [0.0, 0.0]), 1, rng)
    assert degenerate.span_rank == 0
    assert degenerate.affine_codim == 2

    # image spans only the first axis
    partial = anchor_check(*setup([[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0]),
                           1, rng)
    assert partial.affine_codim == 1
