"""Problem data model and assumption checkers.

A problem is a stage map t -> (dynamics, reward, control set) together with
an initial state sigma, a constraint mode ('equation': x_{t+1} = f_t(x_t,u_t),
'inequation': x_{t+1} <= f_t(x_t,u_t) componentwise), and an anchor stage s
used for multiplier normalization.

A process is a trajectory window (x_0..x_{T+1}, u_0..u_T) plus a stationary
tail used to extend it past the window.

The checkers quantify the regularity assumptions the first-order theory
needs: derivative consistency (central differences), surjectivity margins of
the linearized dynamics relative to the tangent cone of the control set,
and rank/codimension of the control-to-state sensitivity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, NonFiniteValue
from .sets import ConvexControlSet, min_norm_affine_cone

MODES = ("equation", "inequation")


def _finite(a, what: str):
    if not np.all(np.isfinite(a)):
        raise NonFiniteValue(f"{what} produced a non-finite value")
    return a


@dataclass(frozen=True)
class StageDynamics:
    """One stage's transition map f: R^n x R^m -> R^n with derivatives."""

    n: int
    m: int
    fun: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jx: Callable[[np.ndarray, np.ndarray], np.ndarray]
    ju: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def eval(self, x, u) -> np.ndarray:
        return _finite(np.asarray(self.fun(x, u), dtype=float).reshape(self.n),
                       "dynamics")

    def d1(self, x, u) -> np.ndarray:
        return np.asarray(self.jx(x, u), dtype=float).reshape(self.n, self.n)

    def d2(self, x, u) -> np.ndarray:
        return np.asarray(self.ju(x, u), dtype=float).reshape(self.n, self.m)


@dataclass(frozen=True)
class StageReward:
    """One stage's reward phi: R^n x R^m -> R with gradients."""

    n: int
    m: int
    fun: Callable[[np.ndarray, np.ndarray], float]
    gx: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gu: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def eval(self, x, u) -> float:
        v = float(self.fun(x, u))
        if not np.isfinite(v):
            raise NonFiniteValue("reward produced a non-finite value")
        return v

    def d1(self, x, u) -> np.ndarray:
        return np.asarray(self.gx(x, u), dtype=float).reshape(self.n)

    def d2(self, x, u) -> np.ndarray:
        return np.asarray(self.gu(x, u), dtype=float).reshape(self.m)


def scale_reward(base: StageReward, c: float) -> StageReward:
    """Reward scaled by a constant (discount factors at fixed stages)."""
    if c == 1.0:
        return base
    return StageReward(
        base.n, base.m,
        fun=lambda x, u, _b=base, _c=c: _c * _b.fun(x, u),
        gx=lambda x, u, _b=base, _c=c: _c * np.asarray(_b.gx(x, u), dtype=float),
        gu=lambda x, u, _b=base, _c=c: _c * np.asarray(_b.gu(x, u), dtype=float),
    )


@dataclass(frozen=True)
class StageData:
    dynamics: StageDynamics
    reward: StageReward
    control_set: ConvexControlSet


@dataclass(frozen=True)
class StageMap:
    """Map t -> StageData. kind is 'stationary', 'periodic' or 'tabulated'.

    Stationary maps keep one base block and apply discount^t to its reward;
    periodic maps cycle over blocks (discounted the same way); tabulated
    maps list explicit entries and fall back to a stationary tail block.
    """

    kind: str
    n: int
    m: int
    at_fn: Callable[[int], StageData]
    discount: float = 1.0
    base: Optional[StageData] = None

    def at(self, t: int) -> StageData:
        if t < 0:
            raise IndexError("stage index must be nonnegative")
        return self.at_fn(t)


def stationary_stages(dynamics: StageDynamics, reward: StageReward,
                      control_set: ConvexControlSet,
                      discount: float = 1.0) -> StageMap:
    base = StageData(dynamics, reward, control_set)

    @lru_cache(maxsize=None)
    def at(t: int) -> StageData:
        if discount == 1.0:
            return base
        return StageData(dynamics, scale_reward(reward, discount ** t),
                         control_set)

    return StageMap("stationary", dynamics.n, dynamics.m, at,
                    discount=discount, base=base)


def periodic_stages(blocks: list[StageData], discount: float = 1.0) -> StageMap:
    if not blocks:
        raise DimensionMismatch("periodic_stages: need at least one block")
    n, m = blocks[0].dynamics.n, blocks[0].dynamics.m
    period = len(blocks)

    @lru_cache(maxsize=None)
    def at(t: int) -> StageData:
        blk = blocks[t % period]
        if discount == 1.0:
            return blk
        return StageData(blk.dynamics, scale_reward(blk.reward, discount ** t),
                         blk.control_set)

    return StageMap("periodic", n, m, at, discount=discount, base=blocks[0])


def tabulated_stages(entries: list[StageData], tail: StageData,
                     discount: float = 1.0) -> StageMap:
    n, m = tail.dynamics.n, tail.dynamics.m

    @lru_cache(maxsize=None)
    def at(t: int) -> StageData:
        blk = entries[t] if t < len(entries) else tail
        if discount == 1.0:
            return blk
        return StageData(blk.dynamics, scale_reward(blk.reward, discount ** t),
                         blk.control_set)

    return StageMap("tabulated", n, m, at, discount=discount, base=tail)


@dataclass(frozen=True)
class ControlProblem:
    """Infinite-horizon problem: maximize sum_t phi_t(x_t, u_t) subject to
    the dynamics constraint in the given mode, x_0 = sigma, u_t in U_t."""

    stages: StageMap
    sigma: np.ndarray
    mode: str = "equation"
    anchor_s: int = 1
    positivity_cone: str = "orthant"
    name: str = ""

    def __post_init__(self):
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if sigma.shape != (self.stages.n,):
            raise DimensionMismatch(
                f"sigma: expected shape ({self.stages.n},), got {sigma.shape}")
        if self.mode not in MODES:
            raise DimensionMismatch(f"mode must be one of {MODES}")
        if self.anchor_s < 1:
            raise DimensionMismatch("anchor_s must be >= 1")
        object.__setattr__(self, "sigma", sigma)

    @property
    def n(self) -> int:
        return self.stages.n

    @property
    def m(self) -> int:
        return self.stages.m

    def dynamics(self, t: int) -> StageDynamics:
        return self.stages.at(t).dynamics

    def reward(self, t: int) -> StageReward:
        return self.stages.at(t).reward

    def control_set(self, t: int) -> ConvexControlSet:
        return self.stages.at(t).control_set


@dataclass(frozen=True)
class Tail:
    """Stationary continuation (x_ss, u_ss) used to extend a window."""

    x_ss: np.ndarray
    u_ss: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_ss",
                           np.atleast_1d(np.asarray(self.x_ss, dtype=float)))
        object.__setattr__(self, "u_ss",
                           np.atleast_1d(np.asarray(self.u_ss, dtype=float)))


@dataclass(frozen=True)
class Process:
    """Trajectory window: x has rows 0..T+1, u has rows 0..T."""

    x: np.ndarray
    u: np.ndarray
    tail: Optional[Tail] = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        if x.shape[0] != u.shape[0] + 1:
            raise DimensionMismatch(
                f"Process: x must have one more row than u "
                f"(got {x.shape[0]} vs {u.shape[0]})")
        if x.shape[0] < 3:
            raise DimensionMismatch("Process: window must cover T >= 1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)

    @property
    def horizon(self) -> int:
        return self.u.shape[0] - 1

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    def restricted(self, T: int) -> "Process":
        """Prefix window with horizon T (x rows 0..T+1, u rows 0..T)."""
        if T + 2 > self.x.shape[0]:
            raise DimensionMismatch(
                f"Process.restricted: window too short for horizon {T}")
        return Process(self.x[:T + 2].copy(), self.u[:T + 1].copy(), self.tail)

    def extended(self, problem: ControlProblem, T: int) -> "Process":
        """Window with horizon T, padded with the tail when T exceeds the
        stored window.  States past the stored rows are rolled out from the
        dynamics with the tail control."""
        if T <= self.horizon:
            return self.restricted(T)
        if self.tail is None:
            raise DimensionMismatch("Process.extended: no tail to extend with")
        x = np.zeros((T + 2, self.n))
        u = np.zeros((T + 1, self.m))
        x[:self.x.shape[0]] = self.x
        u[:self.u.shape[0]] = self.u
        for t in range(self.u.shape[0], T + 1):
            u[t] = self.tail.u_ss
        for t in range(self.x.shape[0] - 1, T + 1):
            x[t + 1] = problem.dynamics(t).eval(x[t], u[t])
        return Process(x, u, self.tail)


def feasibility_residual(problem: ControlProblem, proc: Process) -> float:
    """Worst dynamics violation over the window.

    Equation mode: max_t ||x_{t+1} - f_t(x_t, u_t)||_inf.  Inequation mode:
    max_t max(0, x_{t+1} - f_t(x_t, u_t)) componentwise.
    """
    worst = 0.0
    for t in range(proc.horizon + 1):
        fv = problem.dynamics(t).eval(proc.x[t], proc.u[t])
        gap = proc.x[t + 1] - fv
        if problem.mode == "equation":
            worst = max(worst, float(np.max(np.abs(gap))))
        else:
            worst = max(worst, float(np.max(np.maximum(gap, 0.0))))
    return worst


def control_violation(problem: ControlProblem, proc: Process) -> float:
    """Worst distance from u_t to its control set over the window."""
    worst = 0.0
    for t in range(proc.horizon + 1):
        cset = problem.control_set(t)
        worst = max(worst,
                    float(np.linalg.norm(cset.project(proc.u[t]) - proc.u[t])))
    return worst


# ---------------------------------------------------------------------------
# Assumption checkers.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageDerivativeErrors:
    stage: int
    d1f: float
    d2f: float
    d1phi: float
    d2phi: float

    def worst(self) -> float:
        return max(self.d1f, self.d2f, self.d1phi, self.d2phi)


@dataclass(frozen=True)
class DerivativeReport:
    h: float
    stages: tuple[StageDerivativeErrors, ...]

    def worst(self) -> float:
        return max(e.worst() for e in self.stages)

    def worst_by_block(self) -> dict:
        return {
            "d1f": max(e.d1f for e in self.stages),
            "d2f": max(e.d2f for e in self.stages),
            "d1phi": max(e.d1phi for e in self.stages),
            "d2phi": max(e.d2phi for e in self.stages),
        }


def _central_diff_jac(fn, x, h):
    """Columns (fn(x + h e_j) - fn(x - h e_j)) / 2h."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(fn(x + e), dtype=float)
                     - np.asarray(fn(x - e), dtype=float)) / (2.0 * h))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def _block_error(analytic, fd) -> float:
    analytic = np.atleast_1d(analytic)
    fd = np.atleast_1d(fd)
    scale = max(1.0, float(np.max(np.abs(analytic))) if analytic.size else 1.0)
    diff = float(np.max(np.abs(analytic - fd))) if analytic.size else 0.0
    return diff / scale

def check_derivatives(problem: ControlProblem, proc: Process,
                      h: float = 1e-5) -> DerivativeReport:
    """Compare analytic stage derivatives against central differences along
    the process window.  Errors are max absolute deviations scaled by
    max(1, max |analytic|) per block.  Raises NonFiniteValue when an
    evaluation is not finite."""
    out = []
    for t in range(proc.horizon + 1):
        x, u = proc.x[t], proc.u[t]
        dyn, rew = problem.dynamics(t), problem.reward(t)
        fd_d1f = _central_diff_jac(lambda xx: dyn.eval(xx, u), x, h)
        fd_d2f = _central_diff_jac(lambda uu: dyn.eval(x, uu), u, h)
        fd_d1p = _central_diff_jac(lambda xx: np.array([rew.eval(xx, u)]), x, h)
        fd_d2p = _central_diff_jac(lambda uu: np.array([rew.eval(x, uu)]), u, h)
        _finite(fd_d1f, "central difference")
        _finite(fd_d2f, "central difference")
        out.append(StageDerivativeErrors(
            stage=t,
            d1f=_block_error(dyn.d1(x, u), fd_d1f),
            d2f=_block_error(dyn.d2(x, u), fd_d2f),
            d1phi=_block_error(rew.d1(x, u), fd_d1p.ravel()),
            d2phi=_block_error(rew.d2(x, u), fd_d2p.ravel()),
        ))
    return DerivativeReport(h=h, stages=tuple(out))


_RANK_REL_TOL = 1e-10


def _svd_rank(M: np.ndarray) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > _RANK_REL_TOL * s[0]))


def rank_codim(problem: ControlProblem, proc: Process, t: int) -> tuple[int, int]:
    """Rank of D2 f_t at (x_t, u_t) and its codimension in R^n.

    Rank is decided on singular values with relative threshold 1e-10.
    """
    D2 = problem.dynamics(t).d2(proc.x[t], proc.u[t])
    r = _svd_rank(D2)
    return r, problem.n - r


def _unit_sphere_samples(n: int, count: int, rng) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    raw = rng.standard_normal((count, n))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    keep = norms.ravel() > 1e-12
    return raw[keep] / norms[keep]


def interiority_margin(problem: ControlProblem, proc: Process, t: int,
                       direction_samples: int = 64, rng=None) -> float:
    """Surjectivity margin of the linearized stage map at (x_t, u_t).

    The margin is the radius of the largest ball around the origin contained
    in [D1f D2f] applied to the unit ball of R^{n+m} intersected with
    R^n x T_U(u_t).  When the tangent cone is the whole space this is the
    exact smallest singular value of [D1f D2f].  Otherwise it is estimated
    as the minimum over sampled unit directions d of 1/||z_d|| where z_d is
    the minimum-norm solution of [D1f D2f] z = d with the cone rows active;
    an unreachable direction yields 0.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    n, m = problem.n, problem.m
    dyn = problem.dynamics(t)
    x, u = proc.x[t], proc.u[t]
    M = np.hstack([dyn.d1(x, u), dyn.d2(x, u)])
    if _svd_rank(M) < n:
        return 0.0
    G_u = problem.control_set(t).active_normals(u)
    if G_u.shape[0] == 0:
        s = np.linalg.svd(M, compute_uv=False)
        return float(s[n - 1])
    G = np.hstack([np.zeros((G_u.shape[0], n)), G_u])
    best = np.inf
    for d in _unit_sphere_samples(n, direction_samples, rng):
        z = min_norm_affine_cone(M, d, G)
        if z is None:
            return 0.0
        nz = float(np.linalg.norm(z))
        if nz <= 0.0:
            return 0.0
        best = min(best, 1.0 / nz)
    return float(best)


@dataclass(frozen=True)
class AnchorReport:
    """Span of the control derivative over tangent directions at a stage.

    affine_codim counts directions of R^n missing from the span of
    D2 f_s applied to tangent generators; the affine set it describes always
    contains the origin, so its relative interior is nonempty.
    """

    stage: int
    span_rank: int
    affine_codim: int
    relative_interior_nonempty: bool = True


def anchor_check(problem: ControlProblem, proc: Process, s: int,
                 rng=None) -> AnchorReport:
    dyn = problem.dynamics(s)
    x, u = proc.x[s], proc.u[s]
    gens = problem.control_set(s).tangent_generators(u, rng)
    if gens.shape[0] == 0:
        rank = 0
    else:
        rank = _svd_rank(dyn.d2(x, u) @ gens.T)
    return AnchorReport(stage=s, span_rank=rank, affine_codim=problem.n - rank)
