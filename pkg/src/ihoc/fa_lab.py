"""Finite-dimensional probes of the uniform-boundedness arguments.

The multiplier construction leans on three facts about families of
subadditive functionals: pointwise bounds upgrade to uniform bounds on a
ball, operator norms are pointwise suprema over probes, and a pointwise
domination p_n(z) <= C_z lambda_n on a convex body K upgrades to a single
witness pair (b, R) with

    sup_{h in B} p_n(h - a) <= R (lambda_n + p_n(b - a))   for all n.

This module makes those statements checkable on concrete finite families:
estimates are maxima over probe sets, operator norms come from exact SVD
cross-checked against probe suprema, and the witness pair is searched over
an axis grid for b and a doubling ladder for R.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteValue, PointNotInSet
from .sets import Box, ConvexControlSet


@dataclass(frozen=True)
class SubadditiveFamily:
    """Finite family of subadditive functionals p_n with weights lambda_n >= 0.

    sublinear=True records that the p_n are additionally positively
    homogeneous; check_* methods sample the declared inequalities and return
    the worst violation (nonpositive means the property held on the sample).
    """

    dim: int
    evaluators: tuple
    lambdas: np.ndarray
    sublinear: bool = False

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        if lam.shape[0] != len(self.evaluators):
            raise DimensionMismatch("one lambda per evaluator required")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise DimensionMismatch("lambdas must be finite and nonnegative")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "evaluators", tuple(self.evaluators))

    @property
    def size(self) -> int:
        return len(self.evaluators)

    def value(self, i: int, z) -> float:
        v = float(self.evaluators[i](np.asarray(z, dtype=float)))
        if not np.isfinite(v):
            raise NonFiniteValue(f"evaluator {i} returned a non-finite value")
        return v

    def values(self, z) -> np.ndarray:
        return np.array([self.value(i, z) for i in range(self.size)])

    def check_subadditivity(self, points_a, points_b) -> float:
        """max over n and sampled pairs of p(a+b) - p(a) - p(b)."""
        worst = -np.inf
        for za, zb in zip(np.atleast_2d(points_a), np.atleast_2d(points_b)):
            va, vb = self.values(za), self.values(zb)
            worst = max(worst, float(np.max(self.values(za + zb) - va - vb)))
        return worst

    def check_homogeneity(self, points, alphas) -> float:
        """max over n, sampled z and alpha >= 0 of |p(alpha z) - alpha p(z)|;
        meaningful only for sublinear families."""
        worst = 0.0
        for z in np.atleast_2d(points):
            v = self.values(z)
            for al in np.atleast_1d(alphas):
                worst = max(worst,
                            float(np.max(np.abs(self.values(al * z) - al * v))))
        return worst


def linear_family(vectors, lambdas=None) -> SubadditiveFamily:
    """p_n(z) = <v_n, z> (linear, hence sublinear)."""
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    lam = np.ones(V.shape[0]) if lambdas is None else lambdas
    evs = tuple((lambda z, v=v: float(v @ z)) for v in V)
    return SubadditiveFamily(V.shape[1], evs, lam, sublinear=True)


def relu_linear_family(vectors, lambdas=None) -> SubadditiveFamily:
    """p_n(z) = max(<v_n, z>, 0) (sublinear, nonnegative)."""
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    lam = np.ones(V.shape[0]) if lambdas is None else lambdas
    evs = tuple((lambda z, v=v: float(max(v @ z, 0.0))) for v in V)
    return SubadditiveFamily(V.shape[1], evs, lam, sublinear=True)


def seminorm_family(matrices, lambdas=None) -> SubadditiveFamily:
    """p_n(z) = ||M_n z|| (seminorms, sublinear)."""
    Ms = [np.atleast_2d(np.asarray(M, dtype=float)) for M in matrices]
    lam = np.ones(len(Ms)) if lambdas is None else lambdas
    evs = tuple((lambda z, M=M: float(np.linalg.norm(M @ z))) for M in Ms)
    return SubadditiveFamily(Ms[0].shape[1], evs, lam, sublinear=True)


@dataclass(frozen=True)
class ConvexBody:
    """A convex set K, a base point a in K, and a bounded probe set B."""

    region: ConvexControlSet
    a: np.ndarray
    probe: np.ndarray = field(default=None)

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        if not self.region.contains(a, tol=1e-9):
            raise PointNotInSet("ConvexBody: base point a is not in K")
        object.__setattr__(self, "a", a)
        if self.probe is not None:
            probe = np.atleast_2d(np.asarray(self.probe, dtype=float))
            if not np.all(np.isfinite(probe)):
                raise NonFiniteValue("ConvexBody: probe set must be bounded")
            object.__setattr__(self, "probe", probe)

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def probe_radius(self) -> float:
        if self.probe is None:
            return 0.0
        return float(np.max(np.linalg.norm(self.probe - self.a, axis=1)))

    def with_grid_probe(self, resolution: int = 9) -> "ConvexBody":
        return ConvexBody(self.region, self.a,
                          _region_grid(self.region, resolution))


def _region_bounding_box(region: ConvexControlSet):
    if isinstance(region, Box):
        return region.lo, region.hi
    # Generic: support function along the axes.
    d = region.dim
    lo, hi = np.zeros(d), np.zeros(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        hi[i] = region.support(e)
        lo[i] = -region.support(-e)
    return lo, hi


def _region_grid(region: ConvexControlSet, resolution: int) -> np.ndarray:
    """Axis-product grid over the bounding box, filtered to K.  Degenerate
    axes collapse to a single coordinate, so the grid lives in Aff(K)."""
    lo, hi = _region_bounding_box(region)
    axes = [np.linspace(lo[i], hi[i], resolution) if hi[i] > lo[i]
            else np.array([lo[i]]) for i in range(region.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    keep = [p for p in pts if region.contains(p, tol=1e-9)]
    return np.array(keep) if keep else np.zeros((0, region.dim))


def uniform_bound_estimate(family: SubadditiveFamily, body: ConvexBody,
                           samples: Optional[int] = None, rng=None) -> float:
    """max over the family and over probe points z of p_n(z - a).

    When the body carries no probe set, `samples` grid/random points of K
    are generated (seeded) first.  Raises NonFiniteValue when an evaluation
    is not finite.
    """
    if family.dim != body.dim:
        raise DimensionMismatch("family and body dimensions differ")
    probe = body.probe
    if probe is None:
        count = 64 if samples is None else int(samples)
        rng = np.random.default_rng(0) if rng is None else rng
        lo, hi = _region_bounding_box(body.region)
        raw = rng.uniform(lo, hi, size=(count, body.dim))
        probe = np.array([body.region.project(p) for p in raw])
    best = -np.inf
    for z in probe:
        best = max(best, float(np.max(family.values(z - body.a))))
    return best


@dataclass(frozen=True)
class OperatorNormAudit:
    """Pointwise suprema sup_n ||A_n x|| over probes versus exact norms."""

    pointwise: np.ndarray        # per probe point
    per_operator: np.ndarray     # exact 2-norms via SVD
    uniform: float               # max_n ||A_n||_2

    def consistent(self, tol: float = 1e-9) -> bool:
        """Every pointwise supremum is dominated by uniform * ||x||; probes
        are packed with their norms on construction so this is immediate."""
        return bool(np.all(self.pointwise <= self.uniform + tol))


def operator_norm_audit(operators: Sequence[np.ndarray],
                        probes: np.ndarray) -> OperatorNormAudit:
    """Exact operator 2-norms (SVD) against probe suprema.

    pointwise[j] = max_n ||A_n x_j|| / ||x_j|| over the probe points x_j
    (zero probes are skipped); uniform = max_n sigma_max(A_n).  The audit
    is the inequality pointwise <= uniform, tight as probes approach the
    leading right singular vectors.
    """
    ops = [np.atleast_2d(np.asarray(A, dtype=float)) for A in operators]
    norms = np.array([float(np.linalg.norm(A, 2)) for A in ops])
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    point = []
    for x in probes:
        nx = float(np.linalg.norm(x))
        if nx <= 0.0:
            continue
        point.append(max(float(np.linalg.norm(A @ x)) for A in ops) / nx)
    return OperatorNormAudit(pointwise=np.array(point), per_operator=norms,
                             uniform=float(np.max(norms)))


@dataclass(frozen=True)
class WitnessResult:
    """Outcome of the domination-witness search.

    found=False (NoWitnessFound) is reported, not fatal: the witness is
    only guaranteed to exist somewhere in Aff(K), and the grid may miss it
    at the given resolution.
    """

    found: bool
    witness_b: Optional[np.ndarray]
    ratio_R: float
    margins: np.ndarray
    premise_ok: bool
    premise_worst: float
    grid_points: int
    ladder: tuple


def domination_witness_search(family: SubadditiveFamily, body: ConvexBody,
                              grid_resolution: int = 33,
                              ladder: Optional[Sequence[float]] = None,
                              tol: float = 1e-12) -> WitnessResult:
    """Search for (b, R) with sup_B p_n(h - a) <= R (lambda_n + p_n(b - a)).

    b ranges over an axis grid of K (degenerate axes collapse, so the grid
    sits inside Aff(K)); R over {0} followed by doubling powers.  The first
    (R, b) pair in scan order that dominates every member is returned with
    its per-member margins R (lambda_n + p_n(b-a)) - sup_B p_n(h-a).

    The premise (each grid z admits a finite C_z with p_n(z) <= C_z
    lambda_n) is sampled on the same grid: a member with lambda_n = 0 and
    p_n(z) > 0 breaks it, which is reported via premise_ok.
    """
    if body.probe is None:
        body = body.with_grid_probe(9)
    sup_h = np.array([
        max(float(family.value(i, h - body.a)) for h in body.probe)
        for i in range(family.size)])
    grid = _region_grid(body.region, grid_resolution)
    ladder = tuple(ladder) if ladder is not None \
        else (0.0,) + tuple(float(2 ** k) for k in range(21))

    premise_worst = 0.0
    for z in grid:
        vals = family.values(z)
        zero_lam = family.lambdas <= 0.0
        if np.any(zero_lam):
            premise_worst = max(premise_worst,
                                float(np.max(vals[zero_lam], initial=0.0)))
    premise_ok = bool(premise_worst <= 1e-9)

    for R in ladder:
        for bpt in grid:
            rhs = R * (family.lambdas + family.values(bpt - body.a))
            margins = rhs - sup_h
            if np.all(margins >= -tol):
                return WitnessResult(True, bpt.copy(), float(R), margins,
                                     premise_ok, premise_worst,
                                     grid.shape[0], ladder)
    return WitnessResult(False, None, float("nan"),
                         np.full(family.size, -np.inf), premise_ok,
                         premise_worst, grid.shape[0], ladder)
