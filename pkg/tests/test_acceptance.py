"""Top-level acceptance checks, one test per shipped guarantee.

Each test states a user-facing promise: solver/adjoint agreement, the
scalar Riccati limit, scale invariance of verdicts, exact variational
residuals on boxes, abnormality detection, costate norm chains, the
growth-model oracle, anchor normalization, uniform-boundedness audits,
and derivative hygiene across the catalog.
"""

import itertools
import time

import numpy as np
import pytest

from ihoc import (
    Box,
    CATALOG,
    ControlProblem,
    ConvexBody,
    MultiplierPath,
    Process,
    SolverConfig,
    StageDynamics,
    StageReward,
    TruncatedProblem,
    abnormal_reference,
    adjoint_sweep,
    bound_audit,
    check_derivatives,
    degeneracy_monitor,
    domination_witness_search,
    extract_multipliers,
    get_entry,
    linear_family,
    lq_oracle,
    make_abnormal_problem,
    make_ramsey_problem,
    operator_norm_audit,
    ramsey_reference,
    relu_linear_family,
    run_continuation,
    solve_truncation,
    stationary_stages,
    verify_certificate,
    vi_residual,
)

from conftest import GOLDEN_RATIO, LQ2_PARAMS, spectral_norm_squaring

SCHEDULE = (5, 10, 20, 40, 80)


@pytest.fixture(scope="module")
def abnormal_trace():
    problem = make_abnormal_problem()
    candidate, _ = abnormal_reference(None, SCHEDULE[-1])
    return problem, run_continuation(problem, SCHEDULE, 1, SolverConfig(),
                                     mode="verify", candidate=candidate)


@pytest.fixture(scope="module")
def verify_traces(lq2_problem, lq2_oracle, ramsey_pair, abnormal_trace):
    lq2_trace = run_continuation(lq2_problem, (5, 10, 20), 1, SolverConfig(),
                                 mode="verify", candidate=lq2_oracle[0])
    ramsey_problem, ramsey_proc, _ = ramsey_pair
    ramsey_trace = run_continuation(ramsey_problem, (5, 10), 1,
                                    SolverConfig(), mode="verify",
                                    candidate=ramsey_proc)
    return [lq2_trace, ramsey_trace, abnormal_trace[1]]


def test_01_lq_solver_costates_match_adjoint_sweep(lq2_problem, lq2_oracle):
    cfg = SolverConfig()
    oracle_proc = lq2_oracle[0]
    started = time.monotonic()
    for T in (5, 10, 20):
        tp = TruncatedProblem(lq2_problem, T, oracle_proc.x[T + 1])
        kkt = solve_truncation(tp, cfg=cfg)
        path = extract_multipliers(tp, kkt, cfg)
        swept = adjoint_sweep(lq2_problem, kkt.primal, path.p_at(T + 1),
                              path.lambda0, T)
        gap = max(np.max(np.abs(path.p_at(t) - swept.p_at(t)))
                  for t in range(1, T + 2))
        assert gap <= 1e-6, f"T={T}: solver/adjoint gap {gap:.2e}"
    assert time.monotonic() - started < 10.0


def test_02_scalar_lq_riccati_limit_reached_by_t40(golden_problem):
    cfg = SolverConfig()
    tp = TruncatedProblem(golden_problem, 40, np.zeros(1))
    kkt = solve_truncation(tp, cfg=cfg)
    path = extract_multipliers(tp, kkt, cfg)
    assert path.lambda0 == 1.0
    p_equiv = -path.p_at(1)[0] / (2.0 * kkt.primal.x[1][0])
    assert abs(p_equiv - GOLDEN_RATIO) <= 1e-4


def test_03_certificate_verdicts_scale_invariant(golden_solve):
    problem, _, kkt, path = golden_solve
    proc = kkt.primal
    flipped = MultiplierPath(path.lambda0, -path.p)
    cases = []
    for cand in (path, flipped):
        cert = verify_certificate(problem, proc, cand, 1, 1e-6)
        cases.append((cand, dict(cert.verdicts), cert.passed))
    assert cases[0][2] and not cases[1][2]  # one passing, one failing base
    rng = np.random.default_rng(3)
    for _ in range(500):
        c = float(10.0 ** rng.uniform(-3.0, 3.0))
        for cand, verdicts, passed in cases:
            cert = verify_certificate(problem, proc, cand.scaled(c), 1, 1e-6)
            assert dict(cert.verdicts) == verdicts
            assert cert.passed == passed


def test_04_vi_residual_equals_box_vertex_enumeration():
    rng = np.random.default_rng(4)
    for _ in range(500):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 11))
        lo = rng.uniform(-2.0, 0.0, size=m)
        hi = lo + rng.uniform(0.1, 2.0, size=m)
        B = rng.normal(size=(n, m))
        c = rng.normal(size=m)
        cset = Box(lo, hi)
        dyn = StageDynamics(n, m, lambda x, u, B=B: B @ u,
                            lambda x, u, n=n: np.zeros((n, n)),
                            lambda x, u, B=B: B.copy())
        rew = StageReward(n, m, lambda x, u, c=c: float(c @ u),
                          lambda x, u, n=n: np.zeros(n),
                          lambda x, u, c=c: c.copy())
        problem = ControlProblem(stationary_stages(dyn, rew, cset),
                                 np.zeros(n))
        u_hat = cset.project(rng.uniform(lo - 0.5, hi + 0.5))
        proc = Process(np.vstack([np.zeros(n), B @ u_hat, 2.0 * (B @ u_hat)]),
                       np.vstack([u_hat, u_hat]))
        lam0 = float(10.0 ** rng.uniform(-1.0, 1.0))
        p1 = rng.normal(size=n)
        vi = vi_residual(problem, proc, 0, p1, lam0)
        q = lam0 * c + B.T @ p1
        brute = max(q @ np.array(v) for v in itertools.product(*zip(lo, hi)))
        assert abs(vi - (brute - q @ u_hat)) <= 1e-12


def test_05_abnormal_instance_flags_degeneracy(abnormal_trace):
    problem, trace = abnormal_trace
    assert [r.T for r in trace.records] == list(SCHEDULE)
    for rec in trace.records:
        assert rec.status == "abnormal"
        assert rec.path.lambda0 == 0.0
        assert np.linalg.norm(rec.path.p_at(trace.s)) == 1.0
    mon = degeneracy_monitor(trace, problem)
    assert mon.abnormal
    assert abs(mon.limit_margin - 1.0) <= 1e-9


def test_06_costate_norm_chain_slacks_nonnegative(ramsey_pair):
    cases = []
    proc, path, _ = lq_oracle(LQ2_PARAMS, SCHEDULE[-1])
    cases.append((get_entry("lq").make_problem(LQ2_PARAMS), proc, path))
    rproc, rpath = ramsey_reference(None, SCHEDULE[-1])
    cases.append((ramsey_pair[0], rproc, rpath))
    for problem, proc, path in cases:
        paths = {T: MultiplierPath(path.lambda0,
                                   path.p[:T + 1]).normalized(1)
                 for T in SCHEDULE}
        audit = bound_audit(problem, proc, paths, s=1)
        assert audit.flagged_stages == ()  # all margins r_t > 0
        assert audit.min_slack >= -1e-8
        assert audit.passed


def test_07_ramsey_solver_attains_closed_form_objective(ramsey_pair):
    problem, oracle_proc, _ = ramsey_pair
    cfg = SolverConfig()
    tp = TruncatedProblem(problem, 30, oracle_proc.x[31])
    kkt = solve_truncation(tp, cfg=cfg)
    closed = tp.objective(tp.pack_process(oracle_proc.restricted(30)))
    assert closed - kkt.objective <= 1e-6
    path = extract_multipliers(tp, kkt, cfg)
    assert path.lambda0 == 1.0
    cert = verify_certificate(problem, kkt.primal, path, 1, 1e-6)
    assert cert.passed


def test_08_all_trace_paths_normalized_at_anchor(verify_traces):
    checked = 0
    for trace in verify_traces:
        for rec in trace.records:
            assert rec.status in ("normal", "abnormal")
            margin = rec.path.lambda0 + np.linalg.norm(rec.path.p_at(trace.s))
            assert abs(margin - 1.0) <= 1e-12
            checked += 1
    assert checked == 3 + 2 + len(SCHEDULE)


def test_09_operator_norm_audit_and_witness_search():
    rng = np.random.default_rng(9)
    for _ in range(100):
        ops = list(rng.normal(size=(int(rng.integers(1, 6)), 3, 3)))
        audit = operator_norm_audit(ops, np.eye(3))
        oracle = max(spectral_norm_squaring(A) for A in ops)
        assert abs(audit.uniform - oracle) <= 1e-10

    square = Box(np.zeros(2), np.ones(2))
    lambdas = np.array([1.0, 0.5, 0.25])
    weighted = relu_linear_family(np.column_stack([lambdas, np.zeros(3)]),
                                  lambdas=lambdas)
    examples = [
        (linear_family([[0.0, 0.0]], lambdas=[1.0]),
         ConvexBody(square, np.zeros(2)), 0.0),
        (weighted, ConvexBody(square, np.zeros(2)).with_grid_probe(9), 1.0),
        (linear_family([[-1.0, 0.0]], lambdas=[0.0]),
         ConvexBody(square, np.array([1.0, 0.0])), 1.0),
    ]
    for family, body, ratio in examples:
        result = domination_witness_search(family, body, grid_resolution=9)
        assert result.found
        assert result.premise_ok
        assert result.ratio_R == ratio
        assert np.min(result.margins) >= -1e-12


def test_10_catalog_derivative_checks_pass():
    for name in sorted(CATALOG):
        entry = get_entry(name)
        problem = entry.make_problem(None)
        proc = entry.oracle(None, 8)[0]
        report = check_derivatives(problem, proc)
        assert report.worst() <= 1e-5, f"{name}: {report.worst():.2e}"
