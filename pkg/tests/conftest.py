"""Shared fixtures: catalog instances and one reusable truncation solve."""

import numpy as np
import pytest

from ihoc import (
    SolverConfig,
    TruncatedProblem,
    extract_multipliers,
    lq_oracle,
    make_lq_problem,
    make_ramsey_problem,
    ramsey_reference,
    solve_truncation,
)

# Positive root of P^2 = P + 1, the stationary Riccati value of the
# scalar instance A = B = Q = R = 1 with no discounting.
GOLDEN_RATIO = (1.0 + np.sqrt(5.0)) / 2.0


def spectral_norm_squaring(A, squarings=60):
    """Largest singular value via repeated squaring of A'A.

    Renormalizes by the Frobenius norm at each squaring and accumulates the
    log of the scaling, so no SVD or eigensolver is involved; agreement with
    the exact 2-norm is the cross-check the audits lean on.
    """
    M = np.asarray(A, dtype=float)
    M = M.T @ M
    logacc = 0.0
    for _ in range(squarings):
        f = float(np.linalg.norm(M, "fro"))
        if f == 0.0:
            return 0.0
        logacc = 2.0 * (logacc + np.log(f))
        M = M / f
        M = M @ M
    lam = np.exp((logacc + np.log(float(np.linalg.norm(M, "fro"))))
                 / 2.0 ** squarings)
    return float(np.sqrt(lam))

# Two-state instance with distinct open-loop modes (0.9, 0.8).
LQ2_PARAMS = {
    "A": [[0.9, 0.1], [0.0, 0.8]],
    "B": [[1.0, 0.0], [0.0, 1.0]],
    "Q": [[1.0, 0.0], [0.0, 1.0]],
    "R": [[1.0, 0.0], [0.0, 1.0]],
    "discount": 0.95,
    "sigma": [1.0, -1.0],
    "u_bound": 10.0,
}


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def golden_problem():
    return make_lq_problem()


@pytest.fixture(scope="session")
def golden_oracle():
    """(process, multipliers, riccati solution) for the scalar instance."""
    return lq_oracle(None, 60)


@pytest.fixture(scope="session")
def lq2_problem():
    return make_lq_problem(LQ2_PARAMS)


@pytest.fixture(scope="session")
def lq2_oracle():
    return lq_oracle(LQ2_PARAMS, 60)


@pytest.fixture(scope="session")
def golden_solve():
    """One T=12 truncation of the scalar instance, anchored at the
    closed-loop trajectory, solved cold, with extracted multipliers."""
    problem = make_lq_problem()
    proc, _, _ = lq_oracle(None, 12)
    tp = TruncatedProblem(problem, 12, proc.x[13])
    cfg = SolverConfig()
    kkt = solve_truncation(tp, cfg=cfg)
    path = extract_multipliers(tp, kkt, cfg)
    return problem, tp, kkt, path


@pytest.fixture(scope="session")
def ramsey_pair():
    problem = make_ramsey_problem()
    proc, path = ramsey_reference(None, 40)
    return problem, proc, path
