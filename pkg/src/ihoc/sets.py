"""Convex control sets: boxes, balls, and polytopes.

Each set supports membership tests, Euclidean projection, support functions,
and tangent-cone queries at a point of the set.  Projections are closed-form
for boxes and balls; polytopes go through an interior-point QP.  Tangent-cone
membership is decided by an epsilon-grid scaling test (the directional
distance dist(u + eps*y, U)/eps is monotone in eps and converges to the
distance from y to the tangent cone), except for polytopes where the active
rows give an exact conic test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionMismatch, PointNotInSet, UnboundedSet

# Face-activity detection tolerance, absolute on the constraint residual.
ACTIVE_TOL = 1e-9

# Epsilon grid for the tangent-cone scaling test.
EPS_GRID = tuple(10.0 ** (-k) for k in range(0, 9))


def _as_vector(v, dim: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (dim,):
        raise DimensionMismatch(f"{what}: expected shape ({dim},), got {v.shape}")
    return v


class ConvexControlSet:
    """Interface shared by the concrete set kinds."""

    dim: int

    def contains(self, v, tol: float = 1e-9) -> bool:
        raise NotImplementedError

    def project(self, v) -> np.ndarray:
        raise NotImplementedError

    def support(self, q) -> float:
        """sup_{u in U} <q, u>."""
        raise NotImplementedError

    def active_normals(self, u, tol: float = ACTIVE_TOL) -> np.ndarray:
        """Rows G with T_U(u) = {y : G y <= 0}; zero rows when u is interior."""
        raise NotImplementedError

    def interior_radius(self, u) -> float:
        """Distance from u to the boundary (0 if u is on the boundary)."""
        raise NotImplementedError

    def tangent_generators(self, u, rng=None) -> np.ndarray:
        """A finite set of directions spanning (or sampling) T_U(u)."""
        raise NotImplementedError

    def project_tangent(self, u, d) -> np.ndarray:
        """Euclidean projection of direction d onto T_U(u)."""
        raise NotImplementedError

    def sample_tangent(self, u, count: int, rng=None) -> np.ndarray:
        """Unit tangent directions at u, obtained by projecting Gaussian
        samples onto the cone and normalizing.  Projections much shorter
        than the sample are numerical residue of a draw pointing out of the
        cone, so they are dropped rather than normalized into noise."""
        rng = np.random.default_rng(0) if rng is None else rng
        raw = rng.standard_normal((count, self.dim))
        out = []
        for d in raw:
            y = self.project_tangent(u, d)
            nrm = np.linalg.norm(y)
            if nrm > 1e-8 * max(1.0, float(np.linalg.norm(d))):
                out.append(y / nrm)
        if not out:
            return np.zeros((0, self.dim))
        return np.array(out)

    def is_interior(self, u, tol: float = ACTIVE_TOL) -> bool:
        return self.interior_radius(u) > tol

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Box(ConvexControlSet):
    """Axis-aligned box {u : lo <= u <= hi}. Degenerate axes (lo == hi)
    are allowed."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch("Box: lo and hi must be 1-d of equal length")
        if np.any(hi < lo):
            raise DimensionMismatch("Box: hi < lo on some axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def contains(self, v, tol: float = 1e-9) -> bool:
        v = _as_vector(v, self.dim, "Box.contains")
        return bool(np.all(v >= self.lo - tol) and np.all(v <= self.hi + tol))

    def project(self, v) -> np.ndarray:
        v = _as_vector(v, self.dim, "Box.project")
        return np.clip(v, self.lo, self.hi)

    def support(self, q) -> float:
        q = _as_vector(q, self.dim, "Box.support")
        return float(np.sum(np.maximum(q * self.lo, q * self.hi)))

    def active_normals(self, u, tol: float = ACTIVE_TOL) -> np.ndarray:
        u = _as_vector(u, self.dim, "Box.active_normals")
        rows = []
        for i in range(self.dim):
            if u[i] <= self.lo[i] + tol:
                e = np.zeros(self.dim)
                e[i] = -1.0  # tangent directions satisfy y_i >= 0
                rows.append(e)
            if u[i] >= self.hi[i] - tol:
                e = np.zeros(self.dim)
                e[i] = 1.0  # y_i <= 0
                rows.append(e)
        if not rows:
            return np.zeros((0, self.dim))
        return np.array(rows)

    def interior_radius(self, u) -> float:
        u = _as_vector(u, self.dim, "Box.interior_radius")
        return float(max(0.0, min(np.min(u - self.lo), np.min(self.hi - u))))

    def tangent_generators(self, u, rng=None) -> np.ndarray:
        u = _as_vector(u, self.dim, "Box.tangent_generators")
        rows = []
        for i in range(self.dim):
            lo_active = u[i] <= self.lo[i] + ACTIVE_TOL
            hi_active = u[i] >= self.hi[i] - ACTIVE_TOL
            e = np.zeros(self.dim)
            e[i] = 1.0
            if not hi_active:
                rows.append(e)
            if not lo_active:
                rows.append(-e)
        if not rows:
            return np.zeros((0, self.dim))
        return np.array(rows)

    def project_tangent(self, u, d) -> np.ndarray:
        u = _as_vector(u, self.dim, "Box.project_tangent")
        d = _as_vector(d, self.dim, "Box.project_tangent")
        y = d.copy()
        lo_active = u <= self.lo + ACTIVE_TOL
        hi_active = u >= self.hi - ACTIVE_TOL
        y[lo_active] = np.maximum(y[lo_active], 0.0)
        y[hi_active] = np.minimum(y[hi_active], 0.0)
        return y

    def describe(self) -> dict:
        return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True)
class Ball(ConvexControlSet):
    """Euclidean ball {u : ||u - center|| <= radius}."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        if c.ndim != 1:
            raise DimensionMismatch("Ball: center must be a vector")
        if self.radius < 0:
            raise DimensionMismatch("Ball: negative radius")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def contains(self, v, tol: float = 1e-9) -> bool:
        v = _as_vector(v, self.dim, "Ball.contains")
        return bool(np.linalg.norm(v - self.center) <= self.radius + tol)

    def project(self, v) -> np.ndarray:
        v = _as_vector(v, self.dim, "Ball.project")
        d = v - self.center
        nrm = np.linalg.norm(d)
        if nrm <= self.radius:
            return v.copy()
        return self.center + d * (self.radius / nrm)

    def support(self, q) -> float:
        q = _as_vector(q, self.dim, "Ball.support")
        return float(q @ self.center + self.radius * np.linalg.norm(q))

    def _boundary_normal(self, u, tol: float = ACTIVE_TOL):
        d = u - self.center
        nrm = np.linalg.norm(d)
        if nrm >= self.radius - tol and nrm > 0:
            return d / nrm
        return None

    def active_normals(self, u, tol: float = ACTIVE_TOL) -> np.ndarray:
        u = _as_vector(u, self.dim, "Ball.active_normals")
        n = self._boundary_normal(u, tol)
        if n is None:
            return np.zeros((0, self.dim))
        return n.reshape(1, -1)

    def interior_radius(self, u) -> float:
        u = _as_vector(u, self.dim, "Ball.interior_radius")
        return float(max(0.0, self.radius - np.linalg.norm(u - self.center)))

    def tangent_generators(self, u, rng=None) -> np.ndarray:
        u = _as_vector(u, self.dim, "Ball.tangent_generators")
        n = self._boundary_normal(u)
        eye = np.eye(self.dim)
        if n is None:
            return np.vstack([eye, -eye])
        # Orthonormal basis of the tangent hyperplane, plus the inward normal.
        _, _, vt = np.linalg.svd(n.reshape(1, -1))
        plane = vt[1:]
        return np.vstack([plane, -plane, -n.reshape(1, -1)])

    def project_tangent(self, u, d) -> np.ndarray:
        u = _as_vector(u, self.dim, "Ball.project_tangent")
        d = _as_vector(d, self.dim, "Ball.project_tangent")
        n = self._boundary_normal(u)
        if n is None:
            return d.copy()
        return d - max(0.0, float(n @ d)) * n

    def describe(self) -> dict:
        return {"kind": "ball", "center": self.center.tolist(),
                "radius": self.radius}


@dataclass(frozen=True)
class Polytope(ConvexControlSet):
    """Halfspace intersection {u : A u <= b}."""

    A: np.ndarray
    b: np.ndarray
    # Cached row norms for scale-aware activity tests.
    _row_norms: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] != b.shape[0]:
            raise DimensionMismatch("Polytope: A rows and b length differ")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "_row_norms",
                           np.maximum(np.linalg.norm(A, axis=1), 1e-300))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def contains(self, v, tol: float = 1e-9) -> bool:
        v = _as_vector(v, self.dim, "Polytope.contains")
        return bool(np.all(self.A @ v - self.b <= tol * (1.0 + np.abs(self.b))))

    def project(self, v) -> np.ndarray:
        v = _as_vector(v, self.dim, "Polytope.project")
        if self.contains(v, tol=0.0):
            return v.copy()
        sol = _solve_qp(np.eye(self.dim), -v, self.A, self.b)
        if sol is None:
            raise PointNotInSet("Polytope.project: projection QP failed "
                                "(empty polytope?)")
        return _kkt_polish(v, sol, self.A, self.b)

    def support(self, q) -> float:
        q = _as_vector(q, self.dim, "Polytope.support")
        res = linprog(-q, A_ub=self.A, b_ub=self.b,
                      bounds=[(None, None)] * self.dim, method="highs")
        if res.status == 3:
            raise UnboundedSet("Polytope.support: unbounded direction")
        if res.status != 0:
            raise PointNotInSet(f"Polytope.support: LP failed ({res.message})")
        return float(-res.fun)

    def active_normals(self, u, tol: float = ACTIVE_TOL) -> np.ndarray:
        u = _as_vector(u, self.dim, "Polytope.active_normals")
        resid = self.b - self.A @ u
        active = resid <= tol * (1.0 + np.abs(self.b))
        return self.A[active]

    def interior_radius(self, u) -> float:
        u = _as_vector(u, self.dim, "Polytope.interior_radius")
        return float(max(0.0, np.min((self.b - self.A @ u) / self._row_norms)))

    def tangent_generators(self, u, rng=None) -> np.ndarray:
        rng = np.random.default_rng(0) if rng is None else rng
        gens = self.sample_tangent(u, 4 * self.dim + 8, rng)
        return gens

    def project_tangent(self, u, d) -> np.ndarray:
        u = _as_vector(u, self.dim, "Polytope.project_tangent")
        d = _as_vector(d, self.dim, "Polytope.project_tangent")
        G = self.active_normals(u)
        if G.shape[0] == 0:
            return d.copy()
        h = np.zeros(G.shape[0])
        sol = _solve_qp(np.eye(self.dim), -d, G, h)
        if sol is None:
            return np.zeros(self.dim)
        return _kkt_polish(d, sol, G, h)

    def describe(self) -> dict:
        return {"kind": "polytope", "A": self.A.tolist(), "b": self.b.tolist()}


def support_function(cset: ConvexControlSet, q) -> float:
    """Support function sup_{u in U} <q, u> of the set in direction q."""
    return cset.support(q)


def tangent_cone_contains(cset: ConvexControlSet, u_hat, y,
                          tol: float = 1e-6) -> bool:
    """Whether y lies in the tangent cone T_U(u_hat), up to tol.

    Polytopes use the exact active-row test (G y <= 0 on active rows, scaled
    by row and direction norms).  Boxes and balls use the epsilon-grid
    scaling test: min over the grid of dist(u_hat + eps*y, U)/eps, which is
    nonincreasing as eps decreases and converges to dist(y, T_U(u_hat)).
    """
    u_hat = np.asarray(u_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if not cset.contains(u_hat, tol=1e-7):
        raise PointNotInSet("tangent_cone_contains: base point not in the set")
    ynorm = np.linalg.norm(y)
    if ynorm == 0.0:
        return True
    if isinstance(cset, Polytope):
        G = cset.active_normals(u_hat)
        if G.shape[0] == 0:
            return True
        rownorms = np.maximum(np.linalg.norm(G, axis=1), 1e-300)
        return bool(np.all((G @ y) / (rownorms * ynorm) <= tol))
    score = np.inf
    for eps in EPS_GRID:
        probe = u_hat + eps * y
        dist = np.linalg.norm(cset.project(probe) - probe)
        score = min(score, dist / eps)
    return bool(score <= tol)


# ---------------------------------------------------------------------------
# QP helpers (cvxopt interior point).
# ---------------------------------------------------------------------------

_QP_OPTIONS = {
    "show_progress": False,
    "abstol": 1e-11,
    "reltol": 1e-11,
    "feastol": 1e-10,
    "maxiters": 200,
}


def _solve_qp(P, q, G=None, h=None, A=None, b=None):
    """Minimize (1/2) z'Pz + q'z s.t. Gz <= h, Az = b.

    Returns the solution vector, or None when the solver does not reach an
    optimal status (infeasible or numerically stuck).
    """
    from cvxopt import matrix, solvers

    saved = dict(solvers.options)
    solvers.options.update(_QP_OPTIONS)
    try:
        args = [matrix(np.asarray(P, dtype=float)),
                matrix(np.asarray(q, dtype=float))]
        if G is not None:
            args += [matrix(np.asarray(G, dtype=float)),
                     matrix(np.asarray(h, dtype=float))]
        else:
            args += [None, None]
        if A is not None:
            args += [matrix(np.asarray(A, dtype=float)),
                     matrix(np.asarray(b, dtype=float))]
        try:
            sol = solvers.qp(*args)
        except (ValueError, ZeroDivisionError, ArithmeticError):
            return None
    finally:
        solvers.options.clear()
        solvers.options.update(saved)
    if sol["status"] != "optimal":
        return None
    return np.asarray(sol["x"], dtype=float).ravel()


def _kkt_polish(v, z, A_in, b_in, A_eq=None, b_eq=None):
    """Active-set refinement of an approximate least-distance solution.

    Interior-point duality gaps only bound the distance to the true
    minimizer of ||z - v|| by the square root of the gap, so raw QP output
    is ~1e-6 accurate at best.  Starting from the working set identified by
    z, this solves the equality-constrained projection in closed form
    (dropping rows whose multiplier comes out negative, adding the worst
    violated row), which is machine-accurate when the final active set is
    correct.  Falls back to z when no certified refinement is found.
    """
    n_in = A_in.shape[0] if A_in is not None else 0
    if n_in == 0 and A_eq is None:
        return v.copy()
    A_in = np.zeros((0, v.shape[0])) if A_in is None else A_in
    b_in = np.zeros(0) if b_in is None else b_in
    scale_in = 1.0 + np.abs(b_in)
    act = np.flatnonzero(b_in - A_in @ z <= 1e-5 * scale_in)
    best = z
    for _ in range(n_in + 3):
        W_rows = [A_in[act]] if act.size else []
        r_rows = [b_in[act]] if act.size else []
        if A_eq is not None:
            W_rows.append(A_eq)
            r_rows.append(b_eq)
        if not W_rows:
            cand = v.copy()
        else:
            W = np.vstack(W_rows)
            r = np.concatenate(r_rows)
            y = np.linalg.lstsq(W @ W.T, W @ v - r, rcond=None)[0]
            mu = y[:act.size]
            neg = mu < -1e-10
            if np.any(neg):
                act = act[~neg]
                continue
            cand = v - W.T @ y
        feas_in = n_in == 0 or np.all(A_in @ cand - b_in <= 1e-9 * scale_in)
        feas_eq = A_eq is None or np.all(
            np.abs(A_eq @ cand - b_eq) <= 1e-9 * (1.0 + np.abs(b_eq)))
        if feas_in and feas_eq \
                and np.linalg.norm(cand - v) <= np.linalg.norm(best - v) + 1e-9:
            return cand
        if not feas_in:
            worst = int(np.argmax((A_in @ cand - b_in) / scale_in))
            if worst in act:
                return best
            act = np.sort(np.append(act, worst))
            continue
        return best
    return best


def min_norm_affine_cone(M, d, G=None):
    """Minimum-norm z with M z = d and G z <= 0.

    Returns None when the system is infeasible.  Used by the interiority
    margin: by homogeneity, the largest rho with rho*d reachable from the
    unit ball intersected with the cone is 1/||z*||.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    d = np.asarray(d, dtype=float).ravel()
    dim = M.shape[1]
    if G is not None and G.shape[0] == 0:
        G = None
    h = None if G is None else np.zeros(G.shape[0])
    z = _solve_qp(np.eye(dim), np.zeros(dim), G, h, M, d)
    if z is None:
        return None
    return _kkt_polish(np.zeros(dim), z, G, h, M, d)
