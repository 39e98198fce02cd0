"""Finite-horizon truncations and their first-order solver.

A truncation pins x_0 = sigma and a terminal anchor x_{T+1}, keeps
(x_1..x_T, u_0..u_T) as decision variables, and maximizes
J^T = sum_{t=0}^T phi_t(x_t, u_t) subject to the stacked constraint

    g_t(z) = f_t(x_t, u_t) - x_{t+1} = 0   (equation mode)
    g_t(z) >= 0                            (inequation mode)

for t = 0..T, where x_{T+1} means the terminal anchor in the last block.
Constraint block t pairs with the costate p_{t+1}.

The solver is a classic augmented-Lagrangian outer loop (Powell-Hestenes-
Rockafellar form in inequation mode) around a Barzilai-Borwein spectral
projected-gradient inner solver; only the controls are projected (onto
their stage sets), the states are free.  The effective multiplier
mu - rho*g (or max(0, mu - rho*g)) observed at the inner solution is
exactly the costate estimate, which extract_multipliers re-checks against
the adjoint recursion and the variational inequality before packaging.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (ConditionViolation, DimensionMismatch,
                     InfeasibleSubproblem, NonFiniteValue)
from .model import ControlProblem, Process, Tail
from .pontryagin import MultiplierPath, adjoint_step, vi_residual


@dataclass(frozen=True)
class DecisionLayout:
    """Index map for z = (x_1..x_T, u_0..u_T)."""

    n: int
    m: int
    T: int

    @property
    def dim(self) -> int:
        return self.T * self.n + (self.T + 1) * self.m

    def x_slice(self, t: int) -> slice:
        """Slice of x_t, 1 <= t <= T."""
        if not 1 <= t <= self.T:
            raise IndexError(f"x_{t} is not a decision variable")
        return slice((t - 1) * self.n, t * self.n)

    def u_slice(self, t: int) -> slice:
        """Slice of u_t, 0 <= t <= T."""
        if not 0 <= t <= self.T:
            raise IndexError(f"u_{t} is not a decision variable")
        base = self.T * self.n
        return slice(base + t * self.m, base + (t + 1) * self.m)

    def split(self, z: np.ndarray):
        """Views (xs rows 1..T, us rows 0..T) into z."""
        xs = z[:self.T * self.n].reshape(self.T, self.n)
        us = z[self.T * self.n:].reshape(self.T + 1, self.m)
        return xs, us

    def pack(self, xs: np.ndarray, us: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(xs, dtype=float).ravel(),
                               np.asarray(us, dtype=float).ravel()])


class TruncatedProblem:
    """Finite-horizon truncation of a ControlProblem."""

    def __init__(self, problem: ControlProblem, T: int, terminal,
                 mode: Optional[str] = None):
        if T < 2:
            raise DimensionMismatch("truncation horizon must be >= 2")
        terminal = np.atleast_1d(np.asarray(terminal, dtype=float))
        if terminal.shape != (problem.n,):
            raise DimensionMismatch(
                f"terminal anchor: expected shape ({problem.n},), "
                f"got {terminal.shape}")
        self.problem = problem
        self.T = T
        self.terminal = terminal
        self.mode = problem.mode if mode is None else mode
        self.layout = DecisionLayout(problem.n, problem.m, T)
        self._stages = [problem.stages.at(t) for t in range(T + 1)]
        self._csets = [st.control_set for st in self._stages]

    # -- trajectory plumbing -------------------------------------------------

    def states_full(self, z: np.ndarray) -> np.ndarray:
        """Rows x_0..x_{T+1} (sigma and the terminal anchor included)."""
        xs, _ = self.layout.split(z)
        return np.vstack([self.problem.sigma, xs, self.terminal])

    def project_controls(self, z: np.ndarray) -> np.ndarray:
        out = np.array(z, dtype=float)
        xs, us = self.layout.split(out)
        for t in range(self.T + 1):
            us[t] = self._csets[t].project(us[t])
        return out

    def rollout(self, us: Optional[np.ndarray] = None) -> np.ndarray:
        """Decision vector from simulating the controls forward; feasible in
        every block except possibly the terminal one."""
        if us is None:
            us = np.zeros((self.T + 1, self.problem.m))
        us = np.array(us, dtype=float)
        for t in range(self.T + 1):
            us[t] = self._csets[t].project(us[t])
        xs = np.zeros((self.T, self.problem.n))
        x = self.problem.sigma
        for t in range(self.T):
            x = self._stages[t].dynamics.eval(x, us[t])
            xs[t] = x
        return self.layout.pack(xs, us)

    def assemble_process(self, z: np.ndarray, tail: Optional[Tail] = None) -> Process:
        xs, us = self.layout.split(z)
        return Process(self.states_full(z), us.copy(), tail)

    def pack_process(self, proc: Process) -> np.ndarray:
        """Decision vector from a process window covering this horizon."""
        if proc.horizon < self.T:
            raise DimensionMismatch("process window shorter than the horizon")
        return self.layout.pack(proc.x[1:self.T + 1], proc.u[:self.T + 1])

    # -- objective and constraints -------------------------------------------

    def objective(self, z: np.ndarray) -> float:
        """J^T(z) = sum_{t=0}^T phi_t(x_t, u_t)."""
        xf = self.states_full(z)
        _, us = self.layout.split(z)
        J = 0.0
        for t in range(self.T + 1):
            J += self._stages[t].reward.eval(xf[t], us[t])
        return J

    def constraints(self, z: np.ndarray) -> np.ndarray:
        """Stacked g(z), block t = f_t(x_t, u_t) - x_{t+1}, t = 0..T."""
        xf = self.states_full(z)
        _, us = self.layout.split(z)
        n = self.problem.n
        g = np.zeros((self.T + 1) * n)
        for t in range(self.T + 1):
            g[t * n:(t + 1) * n] = \
                self._stages[t].dynamics.eval(xf[t], us[t]) - xf[t + 1]
        return g

    def _stage_pass(self, z: np.ndarray, derivs: bool):
        """One sweep over the stages: objective, constraint blocks, and
        (optionally) all stage derivatives."""
        xf = self.states_full(z)
        _, us = self.layout.split(z)
        n = self.problem.n
        J = 0.0
        g = np.zeros((self.T + 1, n))
        D1f = D2f = D1p = D2p = None
        if derivs:
            D1f, D2f, D1p, D2p = [], [], [], []
        for t in range(self.T + 1):
            st = self._stages[t]
            x, u = xf[t], us[t]
            fv = st.dynamics.fun(x, u)
            g[t] = np.asarray(fv, dtype=float).reshape(n) - xf[t + 1]
            J += float(st.reward.fun(x, u))
            if derivs:
                D1f.append(np.asarray(st.dynamics.jx(x, u), dtype=float))
                D2f.append(np.asarray(st.dynamics.ju(x, u), dtype=float))
                D1p.append(np.asarray(st.reward.gx(x, u), dtype=float))
                D2p.append(np.asarray(st.reward.gu(x, u), dtype=float))
        return J, g, (D1f, D2f, D1p, D2p)

    def objective_grad(self, z: np.ndarray) -> np.ndarray:
        _, _, (D1f, D2f, D1p, D2p) = self._stage_pass(z, derivs=True)
        grad = np.zeros(self.layout.dim)
        xs, us = self.layout.split(grad)
        for t in range(1, self.T + 1):
            xs[t - 1] = D1p[t]
        for t in range(self.T + 1):
            us[t] = D2p[t]
        return grad

    def jacobian_apply(self, z: np.ndarray, dz: np.ndarray) -> np.ndarray:
        """Directional derivative of the constraint map: block t is
        D1f_t dx_t + D2f_t du_t - dx_{t+1} with dx_0 = dx_{T+1} = 0."""
        _, _, (D1f, D2f, _, _) = self._stage_pass(z, derivs=True)
        dxs, dus = self.layout.split(np.asarray(dz, dtype=float))
        n = self.problem.n
        out = np.zeros((self.T + 1) * n)
        for t in range(self.T + 1):
            blk = D2f[t] @ dus[t]
            if t >= 1:
                blk = blk + D1f[t] @ dxs[t - 1]
            if t <= self.T - 1:
                blk = blk - dxs[t]
            out[t * n:(t + 1) * n] = blk
        return out

    def jacobian_adjoint(self, z: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Gradient of <w, g(z)> in z."""
        _, _, (D1f, D2f, _, _) = self._stage_pass(z, derivs=True)
        n = self.problem.n
        w = np.asarray(w, dtype=float).reshape(self.T + 1, n)
        grad = np.zeros(self.layout.dim)
        xs, us = self.layout.split(grad)
        for t in range(1, self.T + 1):
            xs[t - 1] = D1f[t].T @ w[t] - w[t - 1]
        for t in range(self.T + 1):
            us[t] = D2f[t].T @ w[t]
        return grad

    def jacobian_matrix(self, z: np.ndarray) -> np.ndarray:
        """Dense constraint Jacobian, rows = (T+1)*n, cols = layout.dim."""
        _, _, (D1f, D2f, _, _) = self._stage_pass(z, derivs=True)
        n, m, T = self.problem.n, self.problem.m, self.T
        Dg = np.zeros(((T + 1) * n, self.layout.dim))
        for t in range(T + 1):
            rows = slice(t * n, (t + 1) * n)
            Dg[rows, self.layout.u_slice(t)] = D2f[t]
            if t >= 1:
                Dg[rows, self.layout.x_slice(t)] = D1f[t]
            if t <= T - 1:
                Dg[rows, self.layout.x_slice(t + 1)] = -np.eye(n)
        return Dg


# ---------------------------------------------------------------------------
# Solver.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    """Augmented-Lagrangian solver knobs.

    feas_tol / stat_tol: outer convergence on constraint violation and the
    projected-gradient residual of the Lagrangian; recheck_tol: tolerance
    for the multiplier re-check during extraction (10x the stationarity
    tolerance by default); start: 'rollout' simulates projected controls
    forward, 'zero' projects the all-zero vector.
    """

    feas_tol: float = 1e-8
    stat_tol: float = 1e-8
    recheck_tol: float = 1e-7
    max_outer: int = 50
    max_inner: int = 4000
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e12
    start: str = "rollout"

    @staticmethod
    def from_dict(d: dict) -> "SolverConfig":
        return SolverConfig(**d)


@dataclass(frozen=True)
class KKTPoint:
    """Primal-dual outcome of one truncation solve.

    p rows hold the costates p_1..p_{T+1} (effective multipliers of the
    constraint blocks); lambda0 is 1 for solver outcomes.  Never all zero.
    """

    primal: Process
    z: np.ndarray
    lambda0: float
    p: np.ndarray
    objective: float
    feas_residual: float
    stat_residual: float
    comp_residual: float
    outer_iterations: int
    inner_iterations: int
    rho: float
    converged: bool
    status: str

    def multiplier_path(self) -> MultiplierPath:
        return MultiplierPath(self.lambda0, self.p.copy())


def _spg(value_fn, value_grad_fn, project, z0, tol, maxit, memory=10):
    """Nonmonotone spectral projected gradient (Barzilai-Borwein steps).

    Minimizes value_fn over the projection-defined feasible set; returns
    (z, f, grad, pg_residual, iterations).  The pg residual is the infinity
    norm of z - P(z - grad).
    """
    z = project(z0)
    f, grad = value_grad_fn(z)
    hist = [f]
    alpha = 1.0
    it = 0
    pg = np.inf
    for it in range(1, maxit + 1):
        step_pt = project(z - grad)
        pg = float(np.max(np.abs(step_pt - z))) if z.size else 0.0
        if pg <= tol:
            break
        d = project(z - alpha * grad) - z
        gd = float(grad @ d)
        if gd >= 0.0:
            # Fall back to the unit-step direction, guaranteed descent.
            d = step_pt - z
            gd = float(grad @ d)
            if gd >= 0.0:
                break
        fmax = max(hist)
        lam, f_new = 1.0, np.inf
        for _ in range(40):
            f_new = value_fn(z + lam * d)
            if f_new <= fmax + 1e-4 * lam * gd:
                break
            lam *= 0.5
        z_new = z + lam * d
        f_new, grad_new = value_grad_fn(z_new)
        svec = z_new - z
        yvec = grad_new - grad
        sy = float(svec @ yvec)
        if sy > 1e-300:
            alpha = min(max(float(svec @ svec) / sy, 1e-12), 1e12)
        else:
            alpha = 1e6
        z, f, grad = z_new, f_new, grad_new
        hist.append(f)
        if len(hist) > memory:
            hist.pop(0)
    return z, f, grad, pg, it


def _al_terms(tp: TruncatedProblem, z, mu, rho):
    """Value, gradient, raw constraints and effective multiplier of the
    augmented Lagrangian at z."""
    J, g, (D1f, D2f, D1p, D2p) = tp._stage_pass(z, derivs=True)
    if tp.mode == "equation":
        mu_hat = mu - rho * g
        val = -J - float(np.sum(mu * g)) + 0.5 * rho * float(np.sum(g * g))
    else:
        mu_hat = np.maximum(0.0, mu - rho * g)
        val = -J + (float(np.sum(mu_hat * mu_hat))
                    - float(np.sum(mu * mu))) / (2.0 * rho)
    grad = np.zeros(tp.layout.dim)
    gx, gu = tp.layout.split(grad)
    for t in range(1, tp.T + 1):
        gx[t - 1] = -D1p[t] + mu_hat[t - 1] - D1f[t].T @ mu_hat[t]
    for t in range(tp.T + 1):
        gu[t] = -D2p[t] - D2f[t].T @ mu_hat[t]
    if not np.isfinite(val) or not np.all(np.isfinite(grad)):
        raise NonFiniteValue("augmented Lagrangian evaluation is not finite")
    return val, grad, g, mu_hat, J


def _al_value(tp: TruncatedProblem, z, mu, rho):
    J, g, _ = tp._stage_pass(z, derivs=False)
    if tp.mode == "equation":
        val = -J - float(np.sum(mu * g)) + 0.5 * rho * float(np.sum(g * g))
    else:
        mu_hat = np.maximum(0.0, mu - rho * g)
        val = -J + (float(np.sum(mu_hat * mu_hat))
                    - float(np.sum(mu * mu))) / (2.0 * rho)
    if not np.isfinite(val):
        raise NonFiniteValue("augmented Lagrangian value is not finite")
    return val


def _violation(tp: TruncatedProblem, g: np.ndarray) -> float:
    if tp.mode == "equation":
        return float(np.max(np.abs(g))) if g.size else 0.0
    return float(np.max(np.maximum(-g, 0.0))) if g.size else 0.0


def solve_truncation(tp: TruncatedProblem, start=None,
                     cfg: Optional[SolverConfig] = None,
                     mu0: Optional[np.ndarray] = None) -> KKTPoint:
    """Solve one truncation to first-order stationarity.

    Parameters
    ----------
    tp : TruncatedProblem
    start : optional decision vector (controls are projected before use);
        defaults to the strategy named in cfg.start.
    cfg : SolverConfig
    mu0 : optional warm-start multipliers, shape (T+1, n).

    Returns
    -------
    KKTPoint with converged=False and status='max_iterations' when the
    iteration budget runs out; raises InfeasibleSubproblem when the penalty
    reaches its cap while the constraint violation has stopped improving.
    """
    cfg = cfg or SolverConfig()
    n = tp.problem.n
    if start is None:
        z = tp.rollout() if cfg.start == "rollout" \
            else tp.project_controls(np.zeros(tp.layout.dim))
    else:
        z = tp.project_controls(np.asarray(start, dtype=float))
    mu = np.zeros((tp.T + 1, n)) if mu0 is None \
        else np.array(mu0, dtype=float).reshape(tp.T + 1, n)
    if tp.mode == "inequation":
        mu = np.maximum(mu, 0.0)
    rho = cfg.rho0
    omega = max(1e-2, cfg.stat_tol)
    eta = max(1e-2, cfg.feas_tol)
    total_inner = 0
    best = None
    prev_viol = np.inf
    stalled = 0

    for outer in range(1, cfg.max_outer + 1):
        z, _, _, pg, nin = _spg(
            lambda zz: _al_value(tp, zz, mu, rho),
            lambda zz: _al_terms(tp, zz, mu, rho)[:2],
            tp.project_controls, z, tol=omega, maxit=cfg.max_inner)
        total_inner += nin
        _, _, g, mu_hat, J = _al_terms(tp, z, mu, rho)
        viol = _violation(tp, g)
        comp = float(np.max(np.abs(mu_hat * g))) if tp.mode == "inequation" \
            else 0.0
        record = (viol, pg, comp, z.copy(), mu_hat.copy(), J, rho, outer)
        if best is None or (viol, pg) < (best[0], best[1]):
            best = record
        if viol <= cfg.feas_tol and pg <= cfg.stat_tol \
                and comp <= 10.0 * cfg.feas_tol:
            return _package(tp, z, mu_hat, J, viol, pg, comp, outer,
                            total_inner, rho, True, "converged")
        if viol <= max(eta, cfg.feas_tol):
            mu = mu_hat
            omega = max(cfg.stat_tol, 0.1 * omega)
            eta = max(cfg.feas_tol, 0.1 * eta)
        else:
            if rho >= cfg.rho_max:
                if viol > 0.5 * prev_viol:
                    stalled += 1
                if stalled >= 3:
                    raise InfeasibleSubproblem(
                        f"penalty at cap {cfg.rho_max:.1e} with violation "
                        f"{viol:.3e} not improving")
            rho = min(rho * cfg.rho_growth, cfg.rho_max)
            omega = max(cfg.stat_tol, 0.1 * omega)
        prev_viol = viol

    viol, pg, comp, zb, mub, Jb, rhob, _ = best
    return _package(tp, zb, mub, Jb, viol, pg, comp, cfg.max_outer,
                    total_inner, rhob, False, "max_iterations")


def _package(tp, z, mu_hat, J, viol, pg, comp, outer, inner, rho,
             converged, status) -> KKTPoint:
    return KKTPoint(
        primal=tp.assemble_process(z), z=z, lambda0=1.0,
        p=np.array(mu_hat, dtype=float).reshape(tp.T + 1, tp.problem.n),
        objective=float(J), feas_residual=float(viol),
        stat_residual=float(pg), comp_residual=float(comp),
        outer_iterations=outer, inner_iterations=inner, rho=float(rho),
        converged=bool(converged), status=status)


# ---------------------------------------------------------------------------
# Multiplier extraction.
# ---------------------------------------------------------------------------

def extract_multipliers(tp: TruncatedProblem, kkt: KKTPoint,
                        cfg: Optional[SolverConfig] = None) -> MultiplierPath:
    """Re-check the solver's effective multipliers and package them.

    Verifies the adjoint recursion p_t = D1f_t' p_{t+1} + lambda0 D1phi_t
    for t = 1..T and the stage variational inequality for t = 0..T at
    tolerance cfg.recheck_tol; inequation mode additionally requires
    componentwise nonnegativity of the costates and small complementarity.
    Raises ConditionViolation naming the first failing condition and stage.
    """
    cfg = cfg or SolverConfig()
    tol = cfg.recheck_tol
    proc = kkt.primal
    path = MultiplierPath(kkt.lambda0, kkt.p.copy())
    prob = tp.problem
    scale = max(1.0, path.scale())
    for t in range(1, tp.T + 1):
        res = float(np.linalg.norm(
            path.p_at(t) - adjoint_step(prob, proc, t, path.p_at(t + 1),
                                        path.lambda0)))
        if res > tol * scale:
            raise ConditionViolation("adjoint", t, res)
    for t in range(tp.T + 1):
        res = vi_residual(prob, proc, t, path.p_at(t + 1), path.lambda0)
        if res > tol * scale:
            raise ConditionViolation("variational", t, res)
    if tp.mode == "inequation":
        for t in range(1, tp.T + 2):
            low = float(np.min(path.p_at(t)))
            if low < -tol * scale:
                raise ConditionViolation("positivity", t, -low)
        g = tp.constraints(kkt.z).reshape(tp.T + 1, prob.n)
        comp = float(np.max(np.abs(kkt.p * g)))
        if comp > 10.0 * tol * scale:
            raise ConditionViolation("complementarity", -1, comp)
    return path


_NULL_REL_TOL = 1e-10


def abnormal_extraction(tp: TruncatedProblem, z: np.ndarray,
                        tol: float = 1e-7) -> Optional[MultiplierPath]:
    """Abnormal (lambda0 = 0) multipliers from the left null space of the
    constraint Jacobian at z.

    The Jacobian's left null vectors automatically satisfy the adjoint
    recursion with lambda0 = 0 (state columns) and kill the control
    derivative (control columns); candidates are still re-checked, and in
    inequation mode a sign flip is attempted to meet componentwise
    nonnegativity.  Returns None when no candidate satisfies the checks.
    """
    Dg = tp.jacobian_matrix(z)
    U, svals, _ = np.linalg.svd(Dg, full_matrices=True)
    rows = Dg.shape[0]
    smax = svals[0] if svals.size else 0.0
    rank = int(np.sum(svals > _NULL_REL_TOL * smax)) if smax > 0 else 0
    if rank >= rows:
        return None
    proc = tp.assemble_process(z)
    prob = tp.problem
    for i in range(rank, rows):
        v = U[:, i]
        # Deterministic orientation regardless of LAPACK sign conventions.
        lead = v[np.argmax(np.abs(v))]
        if lead < 0:
            v = -v
        for sign in (1.0, -1.0):
            p = (sign * v).reshape(tp.T + 1, prob.n)
            if tp.mode == "inequation" and float(np.min(p)) < -tol:
                continue
            path = MultiplierPath(0.0, p)
            ok = True
            for t in range(1, tp.T + 1):
                res = float(np.linalg.norm(
                    path.p_at(t) - adjoint_step(prob, proc, t,
                                                path.p_at(t + 1), 0.0)))
                if res > tol:
                    ok = False
                    break
            if ok:
                for t in range(tp.T + 1):
                    if vi_residual(prob, proc, t, path.p_at(t + 1), 0.0) > tol:
                        ok = False
                        break
            if ok:
                return path
    return None
