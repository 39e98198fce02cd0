"""Command-line interface.

    ihoc solve    --config cfg.json --out reports/
    ihoc verify   --config cfg.json --out reports/
    ihoc continue --config cfg.json --out reports/
    ihoc audit    --config cfg.json --out reports/
    ihoc falab    --config cfg.json --out reports/

solve runs the horizon schedule against a steady-state (or explicit)
terminal anchor; verify certifies a candidate process (or explicit
multipliers) across the schedule; continue adds limit detection and the
degeneracy monitor on top; audit runs the assumption checkers along a
window; falab runs the uniform-boundedness probes.

Exit codes: 0 all requested certificates pass; 2 certificate failure;
3 solver non-convergence; 4 configuration error.  Reports are
deterministic: sorted keys, no timestamps, floats in shortest round-trip
form, and the config's sha256 embedded.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import catalog as _catalog
from .config import (SCHEMA_VERSION, RunConfig, control_set_from_dict,
                     load_run_config)
from .continuation import (OPTIMALITY_NOTE, degeneracy_monitor, detect_limit,
                           run_continuation, write_trace_csv)
from .errors import ConfigError, IhocError
from .fa_lab import (ConvexBody, SubadditiveFamily, domination_witness_search,
                     linear_family, operator_norm_audit, relu_linear_family,
                     seminorm_family, uniform_bound_estimate)
from .model import (anchor_check, check_derivatives, feasibility_residual,
                    interiority_margin, rank_codim)
from .pontryagin import verify_certificate

EXIT_OK = 0
EXIT_CERTIFICATE = 2
EXIT_SOLVER = 3
EXIT_CONFIG = 4


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_summary(outdir: Path, payload: dict) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n"
    (outdir / "summary.json").write_text(text, encoding="utf-8")


def _envelope(cfg: RunConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": cfg.command,
        "config_sha256": cfg.fingerprint,
        "seed": cfg.seed,
        "optimality_notion": OPTIMALITY_NOTE,
    }


def _record_payload(rec) -> dict:
    out = {
        "T": rec.T,
        "status": rec.status,
        "message": rec.message,
        "diagnostics": rec.diagnostics,
    }
    if rec.path is not None:
        out["lambda0"] = rec.path.lambda0
        out["p_anchor_norm"] = float(np.linalg.norm(
            rec.path.p_at(rec.path.normalized_at)))
    if rec.certificate is not None:
        out["certificate"] = rec.certificate.to_json_dict()
    return out


def _trace_exit_code(trace) -> int:
    solver_fail = cert_fail = False
    for rec in trace.records:
        if rec.status != "failed":
            continue
        diag = rec.diagnostics
        if "error" in diag or diag.get("converged") is False:
            solver_fail = True
        else:
            cert_fail = True
    if solver_fail:
        return EXIT_SOLVER
    if cert_fail:
        return EXIT_CERTIFICATE
    return EXIT_OK


def _run_trace_command(cfg: RunConfig, outdir: Path, with_limit: bool) -> int:
    rng = np.random.default_rng(cfg.seed)
    horizon = cfg.schedule[-1]
    if cfg.multipliers is not None:
        # Direct certificate on explicit multipliers, no solve.
        proc = cfg.resolved_process(cfg.multipliers.horizon)
        cert = verify_certificate(cfg.problem, proc, cfg.multipliers,
                                  cfg.anchor_s, cfg.certificate_tol)
        failures = [t + cfg.anchor_s for t, mg in
                    enumerate(cert.margins[cfg.anchor_s - 1:])
                    if mg < cfg.certificate_tol]
        payload = _envelope(cfg)
        payload.update({
            "mode": "direct",
            "certificate": cert.to_json_dict(cfg.fingerprint),
            "nontriviality_failures": failures,
            "passed": cert.passed,
        })
        payload["exit_code"] = EXIT_OK if cert.passed else EXIT_CERTIFICATE
        _write_summary(outdir, payload)
        return payload["exit_code"]

    wants_candidate = cfg.command == "verify" or (
        cfg.command == "continue"
        and (cfg.process is not None or cfg.use_oracle_process))
    if wants_candidate:
        candidate = cfg.resolved_process(horizon)
        trace = run_continuation(
            cfg.problem, cfg.schedule, cfg.anchor_s, cfg.solver,
            mode="verify", candidate=candidate,
            certificate_tol=cfg.certificate_tol)
    else:
        trace = run_continuation(
            cfg.problem, cfg.schedule, cfg.anchor_s, cfg.solver,
            mode="solve", terminal=cfg.terminal,
            terminal_fallback=cfg.terminal_fallback(),
            certificate_tol=cfg.certificate_tol)

    payload = _envelope(cfg)
    payload.update({
        "mode": trace.mode,
        "problem": trace.problem_name,
        "anchor_s": trace.s,
        "schedule": list(trace.schedule),
        "records": [_record_payload(r) for r in trace.records],
    })
    if with_limit:
        limit = detect_limit(trace, cfg.window, cfg.limit_tol)
        payload["limit"] = {
            "converged": limit.converged,
            "lambda0": limit.lambda0,
            "p": limit.p,
            "worst_oscillation": limit.worst_oscillation,
            "message": limit.message,
        }
        try:
            mon = degeneracy_monitor(trace, cfg.problem, window=cfg.window,
                                     tol=cfg.limit_tol, rng=rng)
            payload["degeneracy"] = {
                "normalization_ok": mon.normalization_ok,
                "normalization_worst": mon.normalization_worst,
                "bound_audit_passed": mon.audit.passed,
                "bound_audit_min_slack": mon.audit.min_slack,
                "flagged_stages": list(mon.audit.flagged_stages),
                "cone_ok": mon.cone_ok,
                "abnormal": mon.abnormal,
                "limit_margin": mon.limit_margin,
                "margin_ok": mon.margin_ok,
                "premises_ok": mon.premises_ok,
                "note": mon.note,
            }
        except IhocError as exc:
            payload["degeneracy"] = {"error": str(exc)}
    code = _trace_exit_code(trace)
    payload["exit_code"] = code
    _write_summary(outdir, payload)
    write_trace_csv(trace, outdir / "trace.csv")
    return code


def _run_audit(cfg: RunConfig, outdir: Path) -> int:
    rng = np.random.default_rng(cfg.seed)
    proc = cfg.resolved_process(cfg.audit_horizon)
    report = check_derivatives(cfg.problem, proc)
    flagged = [e.stage for e in report.stages if e.worst() > 1e-5]
    stages = []
    for t in range(proc.horizon + 1):
        rank, codim = rank_codim(cfg.problem, proc, t)
        entry = {"stage": t, "rank": rank, "codim": codim,
                 "derivative_errors": {
                     "d1f": report.stages[t].d1f,
                     "d2f": report.stages[t].d2f,
                     "d1phi": report.stages[t].d1phi,
                     "d2phi": report.stages[t].d2phi}}
        if t >= 1:
            entry["interiority_margin"] = interiority_margin(
                cfg.problem, proc, t, rng=rng)
        stages.append(entry)
    anchor = anchor_check(cfg.problem, proc, cfg.anchor_s, rng=rng)
    payload = _envelope(cfg)
    payload.update({
        "window_horizon": proc.horizon,
        "feasibility_residual": feasibility_residual(cfg.problem, proc),
        "derivative_h": report.h,
        "derivative_worst": report.worst(),
        "derivative_flagged_stages": flagged,
        "stages": stages,
        "anchor": {"stage": anchor.stage, "span_rank": anchor.span_rank,
                   "affine_codim": anchor.affine_codim,
                   "relative_interior_nonempty":
                       anchor.relative_interior_nonempty},
    })
    code = EXIT_OK if not flagged else EXIT_CERTIFICATE
    payload["exit_code"] = code
    _write_summary(outdir, payload)
    return code


def _falab_family(d: dict) -> SubadditiveFamily:
    kind = d.get("kind", "linear")
    lam = d.get("lambdas")
    if kind == "linear":
        return linear_family(d["vectors"], lam)
    if kind == "relu_linear":
        return relu_linear_family(d["vectors"], lam)
    if kind == "seminorm":
        return seminorm_family(d["matrices"], lam)
    raise ConfigError("falab.family.kind", f"unknown family kind '{kind}'")


def _run_falab(cfg: RunConfig, outdir: Path) -> int:
    d = cfg.falab or {}
    try:
        family = _falab_family(d.get("family", {}))
        body_d = d.get("body", {})
        region = control_set_from_dict(body_d["region"], "falab.body.region")
        body = ConvexBody(region, np.asarray(body_d["a"], dtype=float))
        body = body.with_grid_probe(int(body_d.get("probe_resolution", 9)))
    except (KeyError, TypeError) as exc:
        raise ConfigError("falab", f"missing or malformed field: {exc}") \
            from None
    payload = _envelope(cfg)
    payload["uniform_bound"] = uniform_bound_estimate(family, body)
    if "operators" in d:
        ops = [np.asarray(A, dtype=float) for A in d["operators"]]
        audit = operator_norm_audit(ops, body.probe - body.a)
        payload["operator_norms"] = {
            "per_operator": audit.per_operator,
            "uniform": audit.uniform,
            "pointwise_max": float(np.max(audit.pointwise))
            if audit.pointwise.size else 0.0,
            "consistent": audit.consistent(),
        }
    witness = domination_witness_search(
        family, body, int(d.get("grid_resolution", 33)))
    payload["witness"] = {
        "found": witness.found,
        "b": witness.witness_b,
        "R": witness.ratio_R,
        "premise_ok": witness.premise_ok,
        "min_margin": float(np.min(witness.margins))
        if witness.found else None,
        "grid_points": witness.grid_points,
    }
    payload["exit_code"] = EXIT_OK
    _write_summary(outdir, payload)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ihoc",
        description="Certify first-order optimality for infinite-horizon "
                    "discrete-time control problems via finite truncations.")
    parser.add_argument("command", choices=["solve", "verify", "continue",
                                            "falab", "audit"])
    parser.add_argument("--config", required=True, help="JSON run config")
    parser.add_argument("--out", default="ihoc_out",
                        help="output directory for reports")
    parser.add_argument("--schedule",
                        help="comma-separated horizons, e.g. 5,10,20,40")
    parser.add_argument("--tol", type=float, help="certificate tolerance")
    parser.add_argument("--seed", type=int, help="seed for sampled checks")
    parser.add_argument("--mode", choices=["equation", "inequation"],
                        help="override the problem's constraint mode")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.schedule is not None:
        try:
            overrides["schedule"] = [int(s) for s in
                                     args.schedule.split(",") if s.strip()]
        except ValueError:
            print("config error: schedule: not a comma-separated integer "
                  "list", file=sys.stderr)
            return EXIT_CONFIG
    if args.tol is not None:
        overrides["tol"] = args.tol
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode is not None:
        overrides["mode"] = args.mode
    try:
        cfg = load_run_config(args.config, args.command, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = Path(args.out)
    try:
        if cfg.command in ("solve", "verify"):
            return _run_trace_command(cfg, outdir, with_limit=False)
        if cfg.command == "continue":
            return _run_trace_command(cfg, outdir, with_limit=True)
        if cfg.command == "audit":
            return _run_audit(cfg, outdir)
        return _run_falab(cfg, outdir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IhocError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    raise SystemExit(main())
