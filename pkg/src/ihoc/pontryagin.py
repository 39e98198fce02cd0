"""Costate recursions and first-order certificates.

A multiplier path for a horizon-T window is a pair (lambda0, p) with
lambda0 >= 0 on the objective and costates p_1..p_{T+1}.  The certificate
checks, relative to an anchor stage s and a tolerance:

  nontriviality  lambda0 + ||p_t|| bounded away from zero for all t >= s;
  sign           lambda0 >= 0 (and p_t >= 0 componentwise in inequation mode);
  adjoint        p_t = D1f_t' p_{t+1} + lambda0 * D1phi_t for 1 <= t <= T;
  variational    sup_{u in U_t} <q_t, u> <= <q_t, u_t> for 0 <= t <= T,
                 with q_t = lambda0 * D2phi_t + D2f_t' p_{t+1}.

All residuals are normalized by the path scale lambda0 + max_t ||p_t||, so
verdicts are invariant under positive rescaling of the whole path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (IndexMismatch, MarginZero, NonFiniteValue,
                     NormalizationError, PointNotInSet, TangentConeViolation)
from .model import ControlProblem, Process, interiority_margin
from .sets import tangent_cone_contains


@dataclass(frozen=True)
class MultiplierPath:
    """Objective multiplier and costates p_1..p_{T+1} (row i holds p_{i+1})."""

    lambda0: float
    p: np.ndarray
    normalized_at: Optional[int] = None

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.p, dtype=float))
        if not np.isfinite(self.lambda0) or not np.all(np.isfinite(p)):
            raise NonFiniteValue("multiplier path has non-finite entries")
        if self.lambda0 < 0:
            raise NormalizationError("lambda0 must be nonnegative")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "lambda0", float(self.lambda0))
        if self.normalized_at is not None:
            c = self.lambda0 + np.linalg.norm(self.p_at(self.normalized_at))
            if abs(c - 1.0) > 1e-12:
                raise NormalizationError(
                    f"declared normalized at s={self.normalized_at} but "
                    f"lambda0 + ||p_s|| = {c!r}")

    @property
    def horizon(self) -> int:
        return self.p.shape[0] - 1

    @property
    def n(self) -> int:
        return self.p.shape[1]

    def p_at(self, t: int) -> np.ndarray:
        """Costate p_t for 1 <= t <= T+1."""
        if not 1 <= t <= self.horizon + 1:
            raise IndexMismatch(f"costate index {t} outside 1..{self.horizon + 1}")
        return self.p[t - 1]

    def scale(self) -> float:
        """lambda0 + max_t ||p_t||; zero only for the all-zero path."""
        pmax = float(np.max(np.linalg.norm(self.p, axis=1))) if self.p.size else 0.0
        return self.lambda0 + pmax

    def scaled(self, c: float) -> "MultiplierPath":
        if c <= 0:
            raise NormalizationError("scaling factor must be positive")
        return MultiplierPath(self.lambda0 * c, self.p * c)

    def normalized(self, s: int) -> "MultiplierPath":
        """Rescale so that lambda0 + ||p_s|| = 1."""
        c = self.lambda0 + float(np.linalg.norm(self.p_at(s)))
        if c <= 0.0:
            raise NormalizationError("cannot normalize the zero path")
        return MultiplierPath(self.lambda0 / c, self.p / c, normalized_at=s)


def adjoint_step(problem: ControlProblem, proc: Process, t: int,
                 p_next: np.ndarray, lambda0: float) -> np.ndarray:
    """One backward step: D1f_t' p_{t+1} + lambda0 * D1phi_t at (x_t, u_t)."""
    x, u = proc.x[t], proc.u[t]
    dyn, rew = problem.dynamics(t), problem.reward(t)
    out = dyn.d1(x, u).T @ np.asarray(p_next, dtype=float) \
        + lambda0 * rew.d1(x, u)
    if not np.all(np.isfinite(out)):
        raise NonFiniteValue(f"adjoint step at stage {t} is not finite")
    return out


def adjoint_sweep(problem: ControlProblem, proc: Process,
                  p_terminal: np.ndarray, lambda0: float,
                  T: Optional[int] = None) -> MultiplierPath:
    """Backward recursion from p_{T+1} = p_terminal down to p_1."""
    T = proc.horizon if T is None else T
    if T > proc.horizon:
        raise IndexMismatch("adjoint_sweep: horizon exceeds the window")
    p = np.zeros((T + 1, problem.n))
    p[T] = np.asarray(p_terminal, dtype=float)
    for t in range(T, 0, -1):
        p[t - 1] = adjoint_step(problem, proc, t, p[t], lambda0)
    return MultiplierPath(lambda0, p)


def vi_residual(problem: ControlProblem, proc: Process, t: int,
                p_next: np.ndarray, lambda0: float) -> float:
    """Variational-inequality residual at stage t.

    sup_{u in U_t}<q_t, u> - <q_t, u_t> with
    q_t = lambda0 * D2phi_t + D2f_t' p_{t+1}; nonnegative up to round-off,
    zero exactly when u_t maximizes the linearized Hamiltonian over U_t.
    """
    x, u = proc.x[t], proc.u[t]
    cset = problem.control_set(t)
    if not cset.contains(u, tol=1e-7):
        raise PointNotInSet(f"vi_residual: u_{t} is not in its control set")
    dyn, rew = problem.dynamics(t), problem.reward(t)
    q = lambda0 * rew.d2(x, u) + dyn.d2(x, u).T @ np.asarray(p_next, dtype=float)
    return float(cset.support(q) - q @ u)


@dataclass(frozen=True)
class Certificate:
    """Stage-wise residuals and verdicts for one multiplier path."""

    s: int
    tol: float
    mode: str
    scale: float
    lambda0_normalized: float
    adjoint_residuals: np.ndarray      # index t-1 holds stage t, t = 1..T
    vi_residuals: np.ndarray           # index t holds stage t, t = 0..T
    margins: np.ndarray                # index t-1 holds stage t, t = 1..T+1
    positivity_residuals: Optional[np.ndarray]  # inequation mode, t = 1..T+1
    verdicts: dict
    passed: bool

    def worst(self) -> dict:
        out = {
            "adjoint": float(np.max(self.adjoint_residuals)),
            "variational": float(np.max(self.vi_residuals)),
            "min_margin_from_s": float(np.min(self.margins[self.s - 1:])),
        }
        if self.positivity_residuals is not None:
            out["positivity"] = float(np.max(self.positivity_residuals))
        return out

    def to_json_dict(self, fingerprint: Optional[str] = None) -> dict:
        d = {
            "anchor_s": self.s,
            "tol": self.tol,
            "mode": self.mode,
            "scale": self.scale,
            "lambda0_normalized": self.lambda0_normalized,
            "adjoint_residuals": self.adjoint_residuals.tolist(),
            "vi_residuals": self.vi_residuals.tolist(),
            "margins": self.margins.tolist(),
            "verdicts": dict(self.verdicts),
            "passed": self.passed,
        }
        if self.positivity_residuals is not None:
            d["positivity_residuals"] = self.positivity_residuals.tolist()
        if fingerprint is not None:
            d["problem_fingerprint"] = fingerprint
        return d


def verify_certificate(problem: ControlProblem, proc: Process,
                       path: MultiplierPath, s: Optional[int] = None,
                       tol: float = 1e-6) -> Certificate:
    """Evaluate the first-order certificate for (proc, path) at anchor s.

    Residuals are divided by the path scale lambda0 + max_t ||p_t|| before
    comparison with tol; the zero path has scale 0 and fails nontriviality
    at every stage.
    """
    s = problem.anchor_s if s is None else s
    T = path.horizon
    if proc.horizon < T:
        raise IndexMismatch(
            f"certificate horizon {T} exceeds process window {proc.horizon}")
    if path.n != problem.n:
        raise IndexMismatch("costate dimension differs from the state dimension")
    scale = path.scale()
    div = scale if scale > 0 else 1.0

    adj = np.zeros(T)
    for t in range(1, T + 1):
        adj[t - 1] = np.linalg.norm(
            path.p_at(t) - adjoint_step(problem, proc, t, path.p_at(t + 1),
                                        path.lambda0)) / div
    vi = np.zeros(T + 1)
    for t in range(T + 1):
        vi[t] = vi_residual(problem, proc, t, path.p_at(t + 1),
                            path.lambda0) / div
    margins = np.array([(path.lambda0 + np.linalg.norm(path.p_at(t))) / div
                        for t in range(1, T + 2)])

    verdicts = {
        "nontriviality": bool(scale > 0.0 and np.min(margins[s - 1:]) >= tol),
        "sign": bool(path.lambda0 / div >= -tol),
        "adjoint": bool(np.max(adj) <= tol),
        "variational": bool(np.max(vi) <= tol),
    }
    positivity = None
    if problem.mode == "inequation":
        positivity = np.array([max(0.0, -float(np.min(path.p_at(t)))) / div
                               for t in range(1, T + 2)])
        verdicts["positivity"] = bool(np.max(positivity) <= tol)
    return Certificate(
        s=s, tol=tol, mode=problem.mode, scale=scale,
        lambda0_normalized=path.lambda0 / div,
        adjoint_residuals=adj, vi_residuals=vi, margins=margins,
        positivity_residuals=positivity, verdicts=verdicts,
        passed=bool(all(verdicts.values())),
    )


# ---------------------------------------------------------------------------
# Costate norm bounds relative to the anchor.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundAudit:
    """Audit of ||p_t|| <= a_t * lambda0 + b_t * ||p_s|| across horizons.

    Constants: a_s = 0, b_s = 1.  Upward (t >= s, requires margin r_t > 0):
    a_{t+1} = (a_t + ||Dphi_t||)/r_t, b_{t+1} = b_t/r_t.  Downward (t < s):
    a_t = ||D1f_t|| a_{t+1} + ||D1phi_t||, b_t = ||D1f_t|| b_{t+1}.
    slack[T][t-1] = a_t lambda0^T + b_t ||p_s^T|| - ||p_t^T||; the audit
    passes when every defined slack is >= -tol.  Stages whose forward bound
    is undefined because some r_t = 0 are flagged and their slack is NaN.
    """

    s: int
    tol: float
    a: np.ndarray                     # index t-1 holds stage t, t = 1..Tmax+1
    b: np.ndarray
    margins: dict
    slacks: dict                      # horizon -> array over t = 1..T+1
    flagged_stages: tuple[int, ...]
    min_slack: float
    passed: bool


def bound_audit(problem: ControlProblem, proc: Process, paths_by_horizon: dict,
                s: Optional[int] = None, tol: float = 1e-8,
                margins: Optional[dict] = None, direction_samples: int = 64,
                rng=None, strict: bool = False) -> BoundAudit:
    """Check the chained costate norm bounds against actual paths.

    paths_by_horizon maps horizon T to its MultiplierPath.  The process must
    cover the largest horizon.  Margins r_t may be supplied (stage -> value)
    or are computed via interiority_margin.  With strict=True a zero margin
    raises MarginZero instead of flagging the affected stages.
    """
    s = problem.anchor_s if s is None else s
    if not paths_by_horizon:
        raise IndexMismatch("bound_audit: no multiplier paths supplied")
    Tmax = max(paths_by_horizon)
    if proc.horizon < Tmax:
        raise IndexMismatch("bound_audit: process window shorter than Tmax")
    rng = np.random.default_rng(0) if rng is None else rng

    margins = dict(margins) if margins else {}
    for t in range(s, Tmax + 1):
        if t not in margins:
            margins[t] = interiority_margin(problem, proc, t,
                                            direction_samples, rng)

    nstage = Tmax + 1  # stages 1..Tmax+1
    a = np.full(nstage, np.nan)
    b = np.full(nstage, np.nan)
    a[s - 1], b[s - 1] = 0.0, 1.0
    flagged = []
    for t in range(s, Tmax + 1):
        x, u = proc.x[t], proc.u[t]
        rew = problem.reward(t)
        dphi = float(np.linalg.norm(
            np.concatenate([rew.d1(x, u), rew.d2(x, u)])))
        r = margins[t]
        if r <= 0.0 or not np.isfinite(a[t - 1]):
            if r <= 0.0:
                if strict:
                    raise MarginZero(f"zero surjectivity margin at stage {t}")
                flagged.append(t + 1)
            continue
        a[t] = (a[t - 1] + dphi) / r
        b[t] = b[t - 1] / r
    for t in range(s - 1, 0, -1):
        x, u = proc.x[t], proc.u[t]
        dyn, rew = problem.dynamics(t), problem.reward(t)
        nf = float(np.linalg.norm(dyn.d1(x, u), 2))
        a[t - 1] = nf * a[t] + float(np.linalg.norm(rew.d1(x, u)))
        b[t - 1] = nf * b[t]

    slacks = {}
    for T, path in sorted(paths_by_horizon.items()):
        sl = np.full(T + 1, np.nan)
        ps = float(np.linalg.norm(path.p_at(s)))
        for t in range(1, T + 2):
            if not np.isfinite(a[t - 1]):
                continue
            sl[t - 1] = (a[t - 1] * path.lambda0 + b[t - 1] * ps
                         - float(np.linalg.norm(path.p_at(t))))
        slacks[T] = sl
    finite_vals = [v for sl in slacks.values() for v in sl if np.isfinite(v)]
    min_slack = float(min(finite_vals)) if finite_vals else float("nan")
    passed = bool(finite_vals) and min_slack >= -tol
    return BoundAudit(s=s, tol=tol, a=a, b=b, margins=margins, slacks=slacks,
                      flagged_stages=tuple(flagged),
                      min_slack=float(min_slack), passed=passed)


@dataclass(frozen=True)
class ConeBoundReport:
    """Directional bound <p_s, D2f y> <= -lambda0 <D2phi, y> at one stage.

    The stage whose control set and derivatives are probed is explicit
    (default s-1, pairing the costate p_s with the block that produced x_s).
    violations[i] = <p_s, D2f y_i> + lambda0 <D2phi, y_i>, normalized by the
    path scale; bound_constants[i] = -<D2phi, y_i>.
    """

    s: int
    stage: int
    tol: float
    violations: np.ndarray
    bound_constants: np.ndarray
    worst: float
    passed: bool


def cone_bound_check(problem: ControlProblem, proc: Process,
                     path: MultiplierPath, s: Optional[int] = None,
                     generators: Optional[np.ndarray] = None,
                     stage: Optional[int] = None, count: int = 32,
                     rng=None, tol: float = 1e-7) -> ConeBoundReport:
    s = problem.anchor_s if s is None else s
    stage = s - 1 if stage is None else stage
    if stage < 0 or stage > proc.horizon:
        raise IndexMismatch(f"cone_bound_check: stage {stage} outside window")
    rng = np.random.default_rng(0) if rng is None else rng
    x, u = proc.x[stage], proc.u[stage]
    cset = problem.control_set(stage)
    if generators is None:
        structural = cset.tangent_generators(u, rng)
        sampled = cset.sample_tangent(u, count, rng)
        generators = np.vstack([g for g in (structural, sampled) if g.size]) \
            if (structural.size or sampled.size) else np.zeros((0, problem.m))
    else:
        generators = np.atleast_2d(np.asarray(generators, dtype=float))
        for y in generators:
            if not tangent_cone_contains(cset, u, y, tol=1e-6):
                raise TangentConeViolation(
                    "cone_bound_check: generator outside the tangent cone")
    dyn, rew = problem.dynamics(stage), problem.reward(stage)
    D2, dphi2 = dyn.d2(x, u), rew.d2(x, u)
    p_s = path.p_at(s)
    div = path.scale() or 1.0
    viol = np.array([(p_s @ (D2 @ y) + path.lambda0 * (dphi2 @ y)) / div
                     for y in generators]) if generators.shape[0] else np.zeros(0)
    consts = np.array([-(dphi2 @ y) for y in generators]) \
        if generators.shape[0] else np.zeros(0)
    worst = float(np.max(viol)) if viol.size else 0.0
    return ConeBoundReport(s=s, stage=stage, tol=tol, violations=viol,
                           bound_constants=consts, worst=worst,
                           passed=bool(worst <= tol))
