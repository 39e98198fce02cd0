"""Multiplier continuation across a schedule of horizons.

For each horizon T in the schedule a truncation is built (terminal anchor =
the candidate's x_{T+1} in verify mode, a steady state in solve mode),
solved, and its multipliers extracted and normalized so that
lambda0^T + ||p_s^T|| = 1 at the anchor stage s.  When normal (lambda0 = 1)
extraction fails its re-checks, the abnormal route (left null space of the
constraint Jacobian) is tried before the horizon is recorded as failed.
Failures are recorded per horizon; later horizons still run.

detect_limit watches the tail of the trace: the family (lambda0^T, p^T)
converges when the successive differences have fallen below tol by the end
of the window, and the limit candidate is the tail average.  The degeneracy
monitor re-checks the normalization identity, the chained costate norm
bounds, and the directional cone bound at the anchor, then classifies the
limit (abnormal when lambda0 -> 0) -- these are exactly the premises under
which a nonvanishing limit pair is guaranteed, so a run that passes the
monitor cannot drift to the useless (0, 0) limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import IhocError, NoConvergence, NonFiniteValue
from .finite_horizon import (KKTPoint, SolverConfig, TruncatedProblem,
                             abnormal_extraction, extract_multipliers,
                             solve_truncation)
from .model import ControlProblem, Process, Tail
from .pontryagin import (BoundAudit, Certificate, MultiplierPath,
                         bound_audit, cone_bound_check, verify_certificate)

OPTIMALITY_NOTE = "first-order necessary conditions only"


@dataclass(frozen=True)
class HorizonRecord:
    """Outcome at one horizon: status is 'normal', 'abnormal' or 'failed'."""

    T: int
    status: str
    path: Optional[MultiplierPath]
    certificate: Optional[Certificate]
    diagnostics: dict = field(default_factory=dict)
    message: str = ""


@dataclass(frozen=True)
class ContinuationTrace:
    problem_name: str
    mode: str
    s: int
    schedule: tuple[int, ...]
    records: tuple[HorizonRecord, ...]
    process: Process

    def successful(self) -> list[HorizonRecord]:
        return [r for r in self.records if r.status != "failed"]

    def paths_by_horizon(self) -> dict[int, MultiplierPath]:
        return {r.T: r.path for r in self.successful()}


def steady_state_anchor(problem: ControlProblem, x0=None, u0=None,
                        eta: float = 0.2, max_iter: int = 20000,
                        tol: float = 1e-11) -> Tail:
    """Damped fixed-point iteration on the stationary first-order system

        x = f(x, u),  w = b D1f(x,u)' w + D1phi(x,u),
        u = proj_U(u + eta (D2phi(x,u) + b D2f(x,u)' w)),

    where b is the stage map's discount and (phi, f) its base block.
    Requires a stationary stage map; raises NoConvergence for marginally
    stable instances (callers fall back to an explicit anchor).
    """
    if problem.stages.kind != "stationary" or problem.stages.base is None:
        raise NoConvergence("steady_state_anchor needs a stationary stage map")
    base = problem.stages.base
    dyn, rew, cset = base.dynamics, base.reward, base.control_set
    b = problem.stages.discount
    x = problem.sigma.copy() if x0 is None else np.asarray(x0, dtype=float)
    u = cset.project(np.zeros(problem.m) if u0 is None
                     else np.asarray(u0, dtype=float))
    w = np.zeros(problem.n)
    for _ in range(max_iter):
        # a diverging iterate can leave the admissible domain; that is a
        # failure to converge, not a caller error
        try:
            fx = dyn.eval(x, u)
            w_new = b * dyn.d1(x, u).T @ w + rew.d1(x, u)
            q = rew.d2(x, u) + b * dyn.d2(x, u).T @ w
        except NonFiniteValue as exc:
            raise NoConvergence(
                "steady-state iteration left the admissible domain") from exc
        u_new = cset.project(u + eta * q)
        x_new = (1.0 - eta) * x + eta * fx
        w_next = (1.0 - eta) * w + eta * w_new
        # the costate iterate counts: x and u can sit at a dynamics fixed
        # point while w is still moving (then the point is not stationary)
        drift = max(float(np.max(np.abs(x_new - x))),
                    float(np.max(np.abs(u_new - u))),
                    float(np.max(np.abs(w_next - w))))
        x, u, w = x_new, u_new, w_next
        if drift <= tol:
            fx = dyn.eval(x, u)
            w_res = w - (b * dyn.d1(x, u).T @ w + rew.d1(x, u))
            q = rew.d2(x, u) + b * dyn.d2(x, u).T @ w
            resid = max(float(np.max(np.abs(fx - x))),
                        float(np.max(np.abs(w_res))),
                        float(np.linalg.norm(cset.project(u + q) - u)))
            if resid <= 1e-6:
                return Tail(x, u)
            raise NoConvergence(
                f"fixed point stalled with stationarity residual {resid:.2e}")
    raise NoConvergence("steady-state iteration exhausted its budget")


def _resolve_terminal(problem, terminal, terminal_fallback):
    if isinstance(terminal, str):
        if terminal != "steady_state":
            raise ValueError(f"unknown terminal strategy '{terminal}'")
        try:
            return steady_state_anchor(problem).x_ss
        except NoConvergence:
            if terminal_fallback is not None:
                return np.asarray(terminal_fallback, dtype=float)
            raise
    return np.asarray(terminal, dtype=float)


def _warm_start(tp: TruncatedProblem, prev: Optional[KKTPoint],
                source: Process) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Start from the previous horizon's solution extended by the source
    window (candidate in verify mode, tail-extended rollout otherwise)."""
    n, m, T = tp.problem.n, tp.problem.m, tp.T
    xs = np.array(source.x[1:T + 1])
    us = np.array(source.u[:T + 1])
    mu = None
    if prev is not None:
        Tp = prev.p.shape[0] - 1
        keep = min(Tp, T)
        xs[:keep] = prev.primal.x[1:keep + 1]
        us[:keep + 1] = prev.primal.u[:keep + 1]
        mu = np.zeros((T + 1, n))
        mu[:keep + 1] = prev.p[:keep + 1]
        if T > Tp:
            mu[Tp + 1:] = prev.p[Tp]
    return tp.layout.pack(xs, us), mu


def run_continuation(problem: ControlProblem, schedule, s: Optional[int] = None,
                     cfg: Optional[SolverConfig] = None, mode: str = "verify",
                     candidate: Optional[Process] = None,
                     terminal="steady_state", terminal_fallback=None,
                     certificate_tol: float = 1e-6) -> ContinuationTrace:
    """Run the horizon schedule and certify multipliers at each horizon.

    verify mode anchors each truncation at the candidate's x_{T+1} and
    evaluates certificates on the candidate window; solve mode anchors at a
    steady state (or explicit vector) and certifies the solver's own primal.
    """
    schedule = [int(T) for T in schedule]
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])) \
            or schedule[0] < 2:
        raise ValueError("schedule must be strictly increasing with min >= 2")
    s = problem.anchor_s if s is None else s
    cfg = cfg or SolverConfig()
    if mode not in ("verify", "solve"):
        raise ValueError(f"unknown continuation mode '{mode}'")
    if mode == "verify":
        if candidate is None:
            raise ValueError("verify mode needs a candidate process")
        if candidate.horizon < schedule[-1]:
            candidate = candidate.extended(problem, schedule[-1])
        source = candidate
    else:
        anchor = _resolve_terminal(problem, terminal, terminal_fallback)
        tail = Tail(anchor, np.zeros(problem.m))
        base = TruncatedProblem(problem, schedule[-1], anchor)
        source = base.assemble_process(base.rollout(), tail)

    records = []
    prev_kkt = None
    for T in schedule:
        term = candidate.x[T + 1] if mode == "verify" else anchor
        tp = TruncatedProblem(problem, T, term)
        try:
            z0, mu0 = _warm_start(tp, prev_kkt, source)
            kkt = solve_truncation(tp, start=z0, cfg=cfg, mu0=mu0)
            diagnostics = {
                "objective": kkt.objective,
                "feas_residual": kkt.feas_residual,
                "stat_residual": kkt.stat_residual,
                "outer_iterations": kkt.outer_iterations,
                "inner_iterations": kkt.inner_iterations,
                "converged": kkt.converged,
                "solver_status": kkt.status,
            }
            eval_proc = candidate if mode == "verify" else kkt.primal
            status, path = "normal", None
            if kkt.converged:
                try:
                    path = extract_multipliers(tp, kkt, cfg)
                except IhocError:
                    path = None
            if path is not None:
                cert = verify_certificate(problem, eval_proc, path, s,
                                          certificate_tol)
                if not cert.passed:
                    path = None
            if path is None:
                z_eval = tp.pack_process(eval_proc)
                ab = abnormal_extraction(tp, z_eval, tol=cfg.recheck_tol)
                if ab is not None:
                    cert = verify_certificate(problem, eval_proc, ab, s,
                                              certificate_tol)
                    if cert.passed:
                        path, status = ab, "abnormal"
            if path is None:
                if not kkt.converged:
                    records.append(HorizonRecord(
                        T, "failed", None, None, diagnostics,
                        f"solver stopped with status '{kkt.status}'"))
                else:
                    cert = verify_certificate(
                        problem, eval_proc, kkt.multiplier_path(), s,
                        certificate_tol)
                    records.append(HorizonRecord(
                        T, "failed", None, cert, diagnostics,
                        "no multiplier path passed the certificate"))
                prev_kkt = kkt
                continue
            normalized = path.normalized(s)
            cert = verify_certificate(problem, eval_proc, normalized, s,
                                      certificate_tol)
            records.append(HorizonRecord(T, status, normalized, cert,
                                         diagnostics))
            prev_kkt = kkt
        except IhocError as exc:
            # Solver-level failure: an abnormal certificate may still exist.
            diagnostics = {"error": type(exc).__name__}
            eval_proc = candidate if mode == "verify" else None
            handled = False
            if eval_proc is not None:
                ab = abnormal_extraction(tp, tp.pack_process(eval_proc),
                                         tol=cfg.recheck_tol)
                if ab is not None:
                    cert = verify_certificate(problem, eval_proc,
                                              ab.normalized(s), s,
                                              certificate_tol)
                    if cert.passed:
                        records.append(HorizonRecord(
                            T, "abnormal", ab.normalized(s), cert,
                            diagnostics, str(exc)))
                        handled = True
            if not handled:
                records.append(HorizonRecord(T, "failed", None, None,
                                             diagnostics, str(exc)))
    if mode == "verify":
        final_proc = source
    else:
        final_proc = prev_kkt.primal if prev_kkt is not None else source
    return ContinuationTrace(
        problem_name=problem.name, mode=mode, s=s, schedule=tuple(schedule),
        records=tuple(records), process=final_proc)


@dataclass(frozen=True)
class LimitResult:
    """Tail behavior of the normalized family over the last `window`
    successful horizons."""

    converged: bool
    lambda0: float
    p: np.ndarray                 # tail averages, stages 1..k
    lambda0_diff: float
    stage_flags: dict             # stage -> bool (tail difference <= tol)
    worst_oscillation: float
    window: int
    tol: float
    message: str = ""


def detect_limit(trace: ContinuationTrace, window: int = 3,
                 tol: float = 1e-6) -> LimitResult:
    """Declare convergence when the successive differences of lambda0^T and
    of each stage's costate (over horizons present in the whole window)
    have fallen below tol by the window's end; the limit candidate is the
    tail average.  Otherwise reports the worst oscillation amplitude."""
    good = trace.successful()
    if len(good) < window:
        return LimitResult(False, np.nan, np.zeros((0, 0)), np.inf, {},
                           np.inf, window, tol,
                           f"need {window} successful horizons, "
                           f"have {len(good)}")
    tail = good[-window:]
    lams = np.array([r.path.lambda0 for r in tail])
    lam_diffs = np.abs(np.diff(lams))
    k = min(r.T for r in tail) + 1  # stages 1..k present everywhere
    stacks = np.array([[r.path.p_at(t) for t in range(1, k + 1)]
                       for r in tail])  # (window, k, n)
    stage_diffs = np.max(np.abs(np.diff(stacks, axis=0)), axis=2)  # (w-1, k)
    stage_flags = {t + 1: bool(stage_diffs[-1, t] <= tol) for t in range(k)}
    lam_ok = bool(lam_diffs[-1] <= tol)
    converged = lam_ok and all(stage_flags.values())
    worst = float(max(np.max(lam_diffs),
                      np.max(stage_diffs) if stage_diffs.size else 0.0))
    return LimitResult(
        converged=converged,
        lambda0=float(np.mean(lams)),
        p=np.mean(stacks, axis=0),
        lambda0_diff=float(lam_diffs[-1]),
        stage_flags=stage_flags,
        worst_oscillation=worst,
        window=window, tol=tol,
        message="" if converged else
        f"not converged: worst oscillation {worst:.3e}")


@dataclass(frozen=True)
class DegeneracyReport:
    """Premise checks and limit classification for one trace.

    normalization_ok: every recorded path satisfies lambda0 + ||p_s|| = 1
    to 1e-12.  audit / cone_reports: the chained costate norm bounds and the
    directional cone bound at the anchor.  When the premises hold and the
    family converges, the limit pair keeps lambda0 + ||p_s|| = 1, so it
    cannot vanish; abnormal flags lambda0 -> 0.
    """

    normalization_ok: bool
    normalization_worst: float
    audit: BoundAudit
    cone_reports: dict
    cone_ok: bool
    limit: LimitResult
    abnormal: bool
    limit_margin: float
    margin_ok: bool
    premises_ok: bool
    note: str = OPTIMALITY_NOTE


def degeneracy_monitor(trace: ContinuationTrace, problem: ControlProblem,
                       proc: Optional[Process] = None, window: int = 3,
                       tol: float = 1e-6, slack_tol: float = 1e-8,
                       rng=None) -> DegeneracyReport:
    proc = trace.process if proc is None else proc
    good = trace.successful()
    if not good:
        raise NoConvergence("degeneracy_monitor: no successful horizons")
    worst_norm = 0.0
    for r in good:
        c = r.path.lambda0 + float(np.linalg.norm(r.path.p_at(trace.s)))
        worst_norm = max(worst_norm, abs(c - 1.0))
    audit = bound_audit(problem, proc, trace.paths_by_horizon(), trace.s,
                        tol=slack_tol, rng=rng)
    cone_reports = {}
    cone_ok = True
    for r in good:
        rep = cone_bound_check(problem, proc, r.path, trace.s, rng=rng)
        cone_reports[r.T] = rep
        cone_ok = cone_ok and rep.passed
    limit = detect_limit(trace, window, tol)
    if limit.converged:
        margin = limit.lambda0 + float(np.linalg.norm(limit.p[trace.s - 1]))
    else:
        margin = float("nan")
    return DegeneracyReport(
        normalization_ok=bool(worst_norm <= 1e-12),
        normalization_worst=worst_norm,
        audit=audit,
        cone_reports=cone_reports,
        cone_ok=cone_ok,
        limit=limit,
        abnormal=bool(limit.converged and limit.lambda0 <= tol),
        limit_margin=margin,
        margin_ok=bool(limit.converged and margin >= 1.0 - tol),
        premises_ok=bool(worst_norm <= 1e-12 and audit.passed and cone_ok),
    )


# ---------------------------------------------------------------------------
# Trace persistence.
# ---------------------------------------------------------------------------

TRACE_SCHEMA_VERSION = 1


def trace_csv_rows(trace: ContinuationTrace):
    """One row per (horizon, costate index): T, t, status, lambda0,
    p_t entries, adjoint residual at t, variational residual at stage t-1,
    nontriviality margin at t.  Floats are repr'd (shortest round-trip), so
    identical runs serialize byte-identically."""
    n = trace.process.n
    header = (["T", "t", "status", "lambda0"]
              + [f"p{i + 1}" for i in range(n)]
              + ["adjoint_residual", "vi_residual", "margin"])
    yield header
    for rec in trace.records:
        if rec.path is None:
            yield [repr(rec.T), "", rec.status, ""] + [""] * n + ["", "", ""]
            continue
        cert = rec.certificate
        for t in range(1, rec.T + 2):
            adj = repr(float(cert.adjoint_residuals[t - 1])) \
                if t <= rec.T else ""
            vi = repr(float(cert.vi_residuals[t - 1]))
            yield ([repr(rec.T), repr(t), rec.status,
                    repr(float(rec.path.lambda0))]
                   + [repr(float(v)) for v in rec.path.p_at(t)]
                   + [adj, vi, repr(float(cert.margins[t - 1]))])


def write_trace_csv(trace: ContinuationTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in trace_csv_rows(trace):
            fh.write(",".join(row) + "\n")
