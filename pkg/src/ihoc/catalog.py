"""Named problem families and benchmark instances with closed-form answers.

Families (referenced by name from run configurations):
  dynamics: 'linear' (A x + B u), 'constant_state' (x), and
  'capital_accumulation' (k^alpha - c with a C^1 linear extension of the
  power below a positive floor so stray iterates stay finite);
  rewards: 'negative_quadratic' (-x'Qx - u'Ru), 'linear_control' (<c,u>),
  'linear_state' (<c,x>), 'log_control' (log u_1).

Instances:
  lq          discounted linear-quadratic regulator; the value matrix P
              solves P = Q + bA'PA - b^2 A'PB (R + bB'PB)^{-1} B'PA and the
              optimal pair follows the gain K; costates are -2 b^t P x_t.
  ramsey      logarithmic growth with capital accumulation; the optimal
              policy is k_{t+1} = ab k_t^a, c_t = (1-ab) k_t^a and the
              costates are p_{t+1} = b^t / c_t.
  ramsey_free_disposal
              same data with the dynamics relaxed to k_{t+1} <= k^a - c
              (inequation mode); the equality solution remains optimal and
              its costates are positive.
  abnormal    frozen state (f = x, so D2f = 0) with a linear control reward
              and an interior reference control: no normal multiplier can
              kill the control derivative, while any constant costate gives
              an abnormal (lambda0 = 0) certificate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, DomainViolation, NoConvergence
from .model import (ControlProblem, Process, StageDynamics, StageReward,
                    Tail, stationary_stages)
from .pontryagin import MultiplierPath
from .sets import Box


# ---------------------------------------------------------------------------
# Stage families.
# ---------------------------------------------------------------------------

def _sym(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return 0.5 * (M + M.T)


def linear_dynamics(A, B) -> StageDynamics:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
        raise DimensionMismatch("linear_dynamics: A must be square and "
                                "share rows with B")
    n, m = B.shape
    return StageDynamics(
        n, m,
        fun=lambda x, u: A @ x + B @ u,
        jx=lambda x, u: A,
        ju=lambda x, u: B,
    )


def constant_state_dynamics(n: int, m: int) -> StageDynamics:
    Z = np.zeros((n, m))
    I = np.eye(n)
    return StageDynamics(n, m,
                         fun=lambda x, u: np.asarray(x, dtype=float).copy(),
                         jx=lambda x, u: I,
                         ju=lambda x, u: Z)


def _pow_guard(k: float, alpha: float, floor: float) -> float:
    if k >= floor:
        return k ** alpha
    return floor ** alpha + alpha * floor ** (alpha - 1.0) * (k - floor)


def _pow_guard_d(k: float, alpha: float, floor: float) -> float:
    if k >= floor:
        return alpha * k ** (alpha - 1.0)
    return alpha * floor ** (alpha - 1.0)


def capital_accumulation_dynamics(alpha: float,
                                  floor: float = 1e-3) -> StageDynamics:
    if not 0.0 < alpha < 1.0:
        raise DomainViolation("capital_accumulation: alpha must be in (0,1)")
    return StageDynamics(
        1, 1,
        fun=lambda x, u: np.array([_pow_guard(float(x[0]), alpha, floor)
                                   - float(u[0])]),
        jx=lambda x, u: np.array([[_pow_guard_d(float(x[0]), alpha, floor)]]),
        ju=lambda x, u: np.array([[-1.0]]),
    )


def negative_quadratic_reward(Q, R) -> StageReward:
    Q = _sym(Q)
    R = _sym(R)
    n, m = Q.shape[0], R.shape[0]
    return StageReward(
        n, m,
        fun=lambda x, u: -float(x @ (Q @ x)) - float(u @ (R @ u)),
        gx=lambda x, u: -2.0 * (Q @ x),
        gu=lambda x, u: -2.0 * (R @ u),
    )


def linear_control_reward(c, n: int) -> StageReward:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    zero = np.zeros(n)
    return StageReward(n, c.shape[0],
                       fun=lambda x, u: float(c @ u),
                       gx=lambda x, u: zero,
                       gu=lambda x, u: c)


def linear_state_reward(c, m: int) -> StageReward:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    zero = np.zeros(m)
    return StageReward(c.shape[0], m,
                       fun=lambda x, u: float(c @ x),
                       gx=lambda x, u: c,
                       gu=lambda x, u: zero)


def _log_guard(u0: float) -> float:
    if u0 <= 0.0:
        raise DomainViolation("log_control: control must be positive")
    return float(np.log(u0))


def log_control_reward(n: int) -> StageReward:
    return StageReward(
        n, 1,
        fun=lambda x, u: _log_guard(float(u[0])),
        gx=lambda x, u: np.zeros(n),
        gu=lambda x, u: np.array([1.0 / float(u[0])]),
    )


def build_dynamics(name: str, n: int, m: int, params: dict) -> StageDynamics:
    if name == "linear":
        return linear_dynamics(params["A"], params["B"])
    if name == "constant_state":
        return constant_state_dynamics(n, m)
    if name == "capital_accumulation":
        return capital_accumulation_dynamics(params.get("alpha", 0.3),
                                             params.get("floor", 1e-3))
    raise KeyError(name)


def build_reward(name: str, n: int, m: int, params: dict) -> StageReward:
    if name == "negative_quadratic":
        return negative_quadratic_reward(params["Q"], params["R"])
    if name == "linear_control":
        return linear_control_reward(params["c"], n)
    if name == "linear_state":
        return linear_state_reward(params["c"], m)
    if name == "log_control":
        return log_control_reward(n)
    raise KeyError(name)


DYNAMICS_FAMILIES = ("linear", "constant_state", "capital_accumulation")
REWARD_FAMILIES = ("negative_quadratic", "linear_control", "linear_state",
                   "log_control")


# ---------------------------------------------------------------------------
# Linear-quadratic instance.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RiccatiSolution:
    P: np.ndarray
    K: np.ndarray
    x_ss: np.ndarray
    u_ss: np.ndarray
    iterations: int


def riccati_stationary(A, B, Q, R, discount: float = 1.0, tol: float = 1e-13,
                       max_iter: int = 200000,
                       damping: float = 1.0) -> RiccatiSolution:
    """Stabilizing fixed point of the discounted Riccati map by damped
    iteration P <- (1-d) P + d (Q + bA'PA - b^2 A'PB (R+bB'PB)^{-1} B'PA),
    iterated until max|P_new - P| <= tol * max(1, max|P|).

    Returns the value matrix, the gain K = b (R+bB'PB)^{-1} B'PA, and the
    closed-loop steady state (the origin).  Raises NoConvergence when the
    tolerance is not met within max_iter sweeps.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = _sym(Q)
    R = _sym(R)
    b = float(discount)
    P = Q.copy()
    for it in range(1, max_iter + 1):
        M = R + b * B.T @ P @ B
        K = b * np.linalg.solve(M, B.T @ P @ A)
        P_new = _sym(Q + b * A.T @ P @ A - b * A.T @ P @ B @ K)
        step = float(np.max(np.abs(P_new - P)))
        P = (1.0 - damping) * P + damping * P_new
        if step <= tol * max(1.0, float(np.max(np.abs(P)))):
            M = R + b * B.T @ P @ B
            K = b * np.linalg.solve(M, B.T @ P @ A)
            n, m = B.shape
            return RiccatiSolution(P=P, K=K, x_ss=np.zeros(n),
                                   u_ss=np.zeros(m), iterations=it)
    raise NoConvergence(f"Riccati iteration did not reach {tol} "
                        f"in {max_iter} sweeps")


_LQ_DEFAULTS = {
    "A": [[1.0]], "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]],
    "discount": 1.0, "sigma": [1.0], "u_bound": 10.0,
}


def _lq_params(params: Optional[dict]) -> dict:
    p = dict(_LQ_DEFAULTS)
    p.update(params or {})
    return p


def make_lq_problem(params: Optional[dict] = None,
                    mode: str = "equation") -> ControlProblem:
    p = _lq_params(params)
    dyn = linear_dynamics(p["A"], p["B"])
    rew = negative_quadratic_reward(p["Q"], p["R"])
    bound = float(p["u_bound"])
    cset = Box(-bound * np.ones(dyn.m), bound * np.ones(dyn.m))
    stages = stationary_stages(dyn, rew, cset, discount=float(p["discount"]))
    return ControlProblem(stages, np.asarray(p["sigma"], dtype=float),
                          mode=mode, name="lq")


def lq_oracle(params: Optional[dict], horizon: int):
    """Optimal window and costates: x follows A - BK, u = -K x, and
    p_t = -2 b^t P x_t."""
    p = _lq_params(params)
    sol = riccati_stationary(p["A"], p["B"], p["Q"], p["R"], p["discount"])
    A = np.atleast_2d(np.asarray(p["A"], dtype=float))
    B = np.atleast_2d(np.asarray(p["B"], dtype=float))
    closed = A - B @ sol.K
    b = float(p["discount"])
    n, m = B.shape
    x = np.zeros((horizon + 2, n))
    u = np.zeros((horizon + 1, m))
    x[0] = np.asarray(p["sigma"], dtype=float)
    for t in range(horizon + 1):
        u[t] = -sol.K @ x[t]
        x[t + 1] = closed @ x[t]
    proc = Process(x, u, Tail(sol.x_ss, sol.u_ss))
    costates = np.array([-2.0 * b ** t * (sol.P @ x[t])
                         for t in range(1, horizon + 2)])
    return proc, MultiplierPath(1.0, costates), sol


def lq_steady_state(params: Optional[dict]) -> Tail:
    p = _lq_params(params)
    n = np.atleast_2d(np.asarray(p["A"], dtype=float)).shape[0]
    m = np.atleast_2d(np.asarray(p["B"], dtype=float)).shape[1]
    return Tail(np.zeros(n), np.zeros(m))


# ---------------------------------------------------------------------------
# Ramsey growth instance.
# ---------------------------------------------------------------------------

_RAMSEY_DEFAULTS = {
    "alpha": 0.3, "beta": 0.95, "k0": 0.1,
    "c_lo": 1e-3, "c_hi": 10.0, "floor": 1e-3,
}


def _ramsey_params(params: Optional[dict]) -> dict:
    p = dict(_RAMSEY_DEFAULTS)
    p.update(params or {})
    if not 0.0 < p["alpha"] < 1.0:
        raise DomainViolation("ramsey: alpha must be in (0,1)")
    if not 0.0 < p["beta"] <= 1.0:
        raise DomainViolation("ramsey: beta must be in (0,1]")
    if p["alpha"] * p["beta"] >= 1.0:
        raise DomainViolation("ramsey: alpha*beta must be < 1")
    if p["k0"] <= 0.0:
        raise DomainViolation("ramsey: k0 must be positive")
    return p


def make_ramsey_problem(params: Optional[dict] = None,
                        mode: str = "equation") -> ControlProblem:
    p = _ramsey_params(params)
    dyn = capital_accumulation_dynamics(p["alpha"], p["floor"])
    rew = log_control_reward(1)
    cset = Box(np.array([p["c_lo"]]), np.array([p["c_hi"]]))
    stages = stationary_stages(dyn, rew, cset, discount=p["beta"])
    return ControlProblem(stages, np.array([p["k0"]]), mode=mode,
                          name="ramsey")


def ramsey_steady_state(params: Optional[dict]) -> Tail:
    p = _ramsey_params(params)
    ab = p["alpha"] * p["beta"]
    k_ss = ab ** (1.0 / (1.0 - p["alpha"]))
    c_ss = (1.0 - ab) * k_ss ** p["alpha"]
    return Tail(np.array([k_ss]), np.array([c_ss]))


def ramsey_reference(params: Optional[dict], horizon: int):
    """Closed-form optimal window: k_{t+1} = ab k_t^a, c_t = (1-ab) k_t^a,
    with costates p_{t+1} = b^t / c_t (so p_{t+1} c_t / b^t = 1)."""
    p = _ramsey_params(params)
    a, b = p["alpha"], p["beta"]
    ab = a * b
    k = np.zeros(horizon + 2)
    c = np.zeros(horizon + 1)
    k[0] = p["k0"]
    for t in range(horizon + 1):
        ka = k[t] ** a
        c[t] = (1.0 - ab) * ka
        k[t + 1] = ab * ka
    if np.any(c <= p["c_lo"]) or np.any(c >= p["c_hi"]):
        raise DomainViolation("ramsey_reference: optimal consumption leaves "
                              "the control box; widen [c_lo, c_hi]")
    proc = Process(k.reshape(-1, 1), c.reshape(-1, 1),
                   ramsey_steady_state(p))
    costates = np.array([[b ** t / c[t]] for t in range(horizon + 1)])
    return proc, MultiplierPath(1.0, costates)


# ---------------------------------------------------------------------------
# Abnormal instance.
# ---------------------------------------------------------------------------

_ABNORMAL_DEFAULTS = {"n": 1, "sigma_value": 0.5, "discount": 0.9,
                      "u_bound": 1.0}


def _abnormal_params(params: Optional[dict]) -> dict:
    p = dict(_ABNORMAL_DEFAULTS)
    p.update(params or {})
    return p


def make_abnormal_problem(params: Optional[dict] = None,
                          mode: str = "equation") -> ControlProblem:
    p = _abnormal_params(params)
    n = int(p["n"])
    dyn = constant_state_dynamics(n, n)
    rew = linear_control_reward(np.ones(n), n)
    bound = float(p["u_bound"])
    cset = Box(-bound * np.ones(n), bound * np.ones(n))
    stages = stationary_stages(dyn, rew, cset, discount=float(p["discount"]))
    sigma = float(p["sigma_value"]) * np.ones(n)
    return ControlProblem(stages, sigma, mode=mode, name="abnormal")


def abnormal_reference(params: Optional[dict], horizon: int):
    """Reference pair (x frozen at sigma, u = 0 interior) and the abnormal
    certificate lambda0 = 0, p_t = (1,..,1): the control derivative of the
    dynamics vanishes, so any constant costate satisfies the recursion,
    while no lambda0 > 0 could cancel the nonzero reward gradient at an
    interior control."""
    p = _abnormal_params(params)
    n = int(p["n"])
    sigma = float(p["sigma_value"]) * np.ones(n)
    x = np.tile(sigma, (horizon + 2, 1))
    u = np.zeros((horizon + 1, n))
    proc = Process(x, u, Tail(sigma, np.zeros(n)))
    costates = np.ones((horizon + 1, n))
    return proc, MultiplierPath(0.0, costates)


def abnormal_instance(n: int = 1, params: Optional[dict] = None):
    """Problem plus reference abnormal multipliers for a default window."""
    p = _abnormal_params(params)
    p["n"] = n
    problem = make_abnormal_problem(p)
    return problem, abnormal_reference(p, 10)[1]


# ---------------------------------------------------------------------------
# Registry.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CatalogEntry:
    """A named instance: problem builder, closed-form reference pair and
    multipliers (oracle), and the stationary steady state used as the
    terminal anchor in solve mode."""

    name: str
    make_problem: Callable[[Optional[dict]], ControlProblem]
    oracle: Callable[[Optional[dict], int], tuple]
    steady_state: Callable[[Optional[dict]], Tail]
    note: str


def _lq_oracle_pair(params, horizon):
    proc, path, _ = lq_oracle(params, horizon)
    return proc, path


CATALOG = {
    "lq": CatalogEntry(
        name="lq",
        make_problem=lambda params=None: make_lq_problem(params),
        oracle=_lq_oracle_pair,
        steady_state=lq_steady_state,
        note="discounted linear-quadratic regulator (Riccati closed form)",
    ),
    "ramsey": CatalogEntry(
        name="ramsey",
        make_problem=lambda params=None: make_ramsey_problem(params),
        oracle=lambda params, horizon: ramsey_reference(params, horizon),
        steady_state=ramsey_steady_state,
        note="logarithmic growth, policy k' = ab k^a",
    ),
    "ramsey_free_disposal": CatalogEntry(
        name="ramsey_free_disposal",
        make_problem=lambda params=None: make_ramsey_problem(
            params, mode="inequation"),
        oracle=lambda params, horizon: ramsey_reference(params, horizon),
        steady_state=ramsey_steady_state,
        note="growth with free disposal (inequality dynamics), "
             "positive costates",
    ),
    "abnormal": CatalogEntry(
        name="abnormal",
        make_problem=lambda params=None: make_abnormal_problem(params),
        oracle=abnormal_reference,
        steady_state=lambda params=None: Tail(
            _abnormal_params(params)["sigma_value"]
            * np.ones(int(_abnormal_params(params)["n"])),
            np.zeros(int(_abnormal_params(params)["n"]))),
        note="frozen state, linear control reward: only abnormal "
             "certificates exist",
    ),
}


def get_entry(name: str) -> CatalogEntry:
    try:
        return CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown catalog entry '{name}'; "
                       f"known: {sorted(CATALOG)}") from None
