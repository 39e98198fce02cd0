"""Run configuration: JSON problem descriptions and CLI plumbing.

A problem block is either a catalog reference

    {"catalog": "lq", "params": {...}, "mode": "equation"}

or an inline description

    {"n": 1, "m": 1, "sigma": [1.0], "mode": "equation", "anchor_s": 1,
     "stages": {"kind": "stationary",
                "dynamics": {"name": "linear", "params": {"A": ..., "B": ...}},
                "reward": {"name": "negative_quadratic", "params": {...}},
                "control_set": {"kind": "box", "lo": [...], "hi": [...]},
                "discount": 1.0}}

Stage kinds: stationary, periodic (blocks: [...]), tabulated (entries +
tail).  All validation failures raise ConfigError with a dotted field path.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import catalog as _catalog
from .errors import ConfigError, IhocError
from .finite_horizon import SolverConfig
from .model import (ControlProblem, Process, StageData, Tail,
                    periodic_stages, stationary_stages, tabulated_stages)
from .pontryagin import MultiplierPath
from .sets import Ball, Box, Polytope

SCHEMA_VERSION = 1

COMMANDS = ("solve", "verify", "continue", "falab", "audit")


def config_hash(raw: dict) -> str:
    """sha256 of the canonical JSON form (sorted keys, compact separators)."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}.{key}", "missing required field")
    return d[key]


def _array(v, where: str) -> np.ndarray:
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(where, f"not numeric: {exc}") from None
    if not np.all(np.isfinite(a)):
        raise ConfigError(where, "contains non-finite entries")
    return a


def control_set_from_dict(d: dict, where: str = "control_set"):
    kind = _require(d, "kind", where)
    try:
        if kind == "box":
            return Box(_array(_require(d, "lo", where), f"{where}.lo"),
                       _array(_require(d, "hi", where), f"{where}.hi"))
        if kind == "ball":
            return Ball(_array(_require(d, "center", where), f"{where}.center"),
                        float(_require(d, "radius", where)))
        if kind == "polytope":
            return Polytope(_array(_require(d, "A", where), f"{where}.A"),
                            _array(_require(d, "b", where), f"{where}.b"))
    except IhocError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(where, str(exc)) from None
    raise ConfigError(f"{where}.kind", f"unknown control set kind '{kind}'")


def _stage_block(d: dict, n: int, m: int, where: str) -> StageData:
    dyn_d = _require(d, "dynamics", where)
    rew_d = _require(d, "reward", where)
    cs_d = _require(d, "control_set", where)
    dyn_name = _require(dyn_d, "name", f"{where}.dynamics")
    rew_name = _require(rew_d, "name", f"{where}.reward")
    try:
        dyn = _catalog.build_dynamics(dyn_name, n, m,
                                      dyn_d.get("params", {}))
    except KeyError:
        raise ConfigError(f"{where}.dynamics.name",
                          f"unknown dynamics family '{dyn_name}'; known: "
                          f"{sorted(_catalog.DYNAMICS_FAMILIES)}") from None
    except IhocError as exc:
        raise ConfigError(f"{where}.dynamics.params", str(exc)) from None
    try:
        rew = _catalog.build_reward(rew_name, n, m, rew_d.get("params", {}))
    except KeyError:
        raise ConfigError(f"{where}.reward.name",
                          f"unknown reward family '{rew_name}'; known: "
                          f"{sorted(_catalog.REWARD_FAMILIES)}") from None
    except IhocError as exc:
        raise ConfigError(f"{where}.reward.params", str(exc)) from None
    cset = control_set_from_dict(cs_d, f"{where}.control_set")
    if dyn.n != n or dyn.m != m:
        raise ConfigError(f"{where}.dynamics",
                          f"family produces ({dyn.n},{dyn.m}), "
                          f"problem declares ({n},{m})")
    if cset.dim != m:
        raise ConfigError(f"{where}.control_set",
                          f"dimension {cset.dim} != m={m}")
    return StageData(dyn, rew, cset)


def problem_from_dict(d: dict, where: str = "problem") -> ControlProblem:
    if "catalog" in d:
        name = d["catalog"]
        try:
            entry = _catalog.get_entry(name)
        except KeyError as exc:
            raise ConfigError(f"{where}.catalog", str(exc)) from None
        try:
            prob = entry.make_problem(d.get("params"))
        except IhocError as exc:
            raise ConfigError(f"{where}.params", str(exc)) from None
        if "mode" in d and d["mode"] != prob.mode:
            prob = ControlProblem(prob.stages, prob.sigma, mode=d["mode"],
                                  anchor_s=d.get("anchor_s", prob.anchor_s),
                                  name=prob.name)
        elif "anchor_s" in d:
            prob = ControlProblem(prob.stages, prob.sigma, mode=prob.mode,
                                  anchor_s=int(d["anchor_s"]), name=prob.name)
        return prob
    try:
        n = int(_require(d, "n", where))
        m = int(_require(d, "m", where))
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.n", "n and m must be integers") from None
    stages_d = _require(d, "stages", where)
    kind = _require(stages_d, "kind", f"{where}.stages")
    discount = float(stages_d.get("discount", 1.0))
    if kind == "stationary":
        blk = _stage_block(stages_d, n, m, f"{where}.stages")
        stages = stationary_stages(blk.dynamics, blk.reward, blk.control_set,
                                   discount)
    elif kind == "periodic":
        blocks_d = _require(stages_d, "blocks", f"{where}.stages")
        blocks = [_stage_block(b, n, m, f"{where}.stages.blocks[{i}]")
                  for i, b in enumerate(blocks_d)]
        stages = periodic_stages(blocks, discount)
    elif kind == "tabulated":
        entries_d = _require(stages_d, "entries", f"{where}.stages")
        tail_d = _require(stages_d, "tail", f"{where}.stages")
        entries = [_stage_block(b, n, m, f"{where}.stages.entries[{i}]")
                   for i, b in enumerate(entries_d)]
        stages = tabulated_stages(entries,
                                  _stage_block(tail_d, n, m,
                                               f"{where}.stages.tail"),
                                  discount)
    else:
        raise ConfigError(f"{where}.stages.kind",
                          f"unknown stage kind '{kind}'")
    sigma = _array(_require(d, "sigma", where), f"{where}.sigma")
    mode = d.get("mode", "equation")
    if mode not in ("equation", "inequation"):
        raise ConfigError(f"{where}.mode", f"unknown mode '{mode}'")
    try:
        return ControlProblem(stages, sigma, mode=mode,
                              anchor_s=int(d.get("anchor_s", 1)),
                              name=d.get("name", ""))
    except IhocError as exc:
        raise ConfigError(where, str(exc)) from None


def process_from_dict(d: dict, where: str = "process") -> Process:
    x = _array(_require(d, "x", where), f"{where}.x")
    u = _array(_require(d, "u", where), f"{where}.u")
    tail = None
    if "tail" in d:
        tail = Tail(_array(d["tail"]["x_ss"], f"{where}.tail.x_ss"),
                    _array(d["tail"]["u_ss"], f"{where}.tail.u_ss"))
    try:
        return Process(np.atleast_2d(x), np.atleast_2d(u), tail)
    except IhocError as exc:
        raise ConfigError(where, str(exc)) from None


def multipliers_from_dict(d: dict, where: str = "multipliers") -> MultiplierPath:
    lam = float(_require(d, "lambda0", where))
    p = _array(_require(d, "p", where), f"{where}.p")
    try:
        return MultiplierPath(lam, np.atleast_2d(p))
    except IhocError as exc:
        raise ConfigError(where, str(exc)) from None


@dataclass
class RunConfig:
    """Everything one CLI invocation needs, already validated."""

    command: str
    raw: dict
    problem: Optional[ControlProblem] = None
    catalog_name: Optional[str] = None
    catalog_params: Optional[dict] = None
    process: Optional[Process] = None
    use_oracle_process: bool = False
    multipliers: Optional[MultiplierPath] = None
    schedule: tuple = (5, 10, 20, 40)
    anchor_s: Optional[int] = None
    certificate_tol: float = 1e-6
    solver: SolverConfig = field(default_factory=SolverConfig)
    terminal: object = "steady_state"
    seed: int = 0
    window: int = 3
    limit_tol: float = 1e-6
    falab: Optional[dict] = None
    audit_horizon: int = 10
    fingerprint: str = ""

    def resolved_process(self, horizon: int) -> Process:
        """The process to verify/audit: explicit, or the catalog oracle."""
        if self.process is not None:
            if self.process.horizon < horizon:
                return self.process.extended(self.problem, horizon)
            return self.process
        if self.use_oracle_process and self.catalog_name:
            entry = _catalog.get_entry(self.catalog_name)
            proc, _ = entry.oracle(self.catalog_params, horizon)
            return proc
        raise ConfigError("process",
                          "no process given and no catalog oracle available")

    def terminal_fallback(self):
        if self.catalog_name:
            entry = _catalog.get_entry(self.catalog_name)
            return entry.steady_state(self.catalog_params).x_ss
        return None


def load_run_config(path, command: str, overrides: Optional[dict] = None
                    ) -> RunConfig:
    """Parse and validate a JSON run configuration for the given command.

    overrides (from CLI flags) may carry schedule, tol, seed, and mode.
    """
    p = Path(path)
    if not p.exists():
        raise ConfigError("config", f"no such file: {path}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"malformed JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be an object")
    overrides = overrides or {}
    if command not in COMMANDS:
        raise ConfigError("command", f"unknown command '{command}'")

    cfg = RunConfig(command=command, raw=raw)
    cfg.fingerprint = config_hash(raw)
    if command == "falab":
        cfg.falab = _require(raw, "falab", "config") if "falab" in raw else raw
        cfg.seed = int(overrides.get("seed", raw.get("seed", 0)))
        return cfg

    prob_d = _require(raw, "problem", "config")
    if "mode" in overrides:
        prob_d = dict(prob_d)
        prob_d["mode"] = overrides["mode"]
    cfg.problem = problem_from_dict(prob_d)
    if "catalog" in prob_d:
        cfg.catalog_name = prob_d["catalog"]
        cfg.catalog_params = prob_d.get("params")

    proc_d = raw.get("process")
    if proc_d == "oracle":
        if not cfg.catalog_name:
            raise ConfigError("process",
                              "'oracle' needs a catalog problem reference")
        cfg.use_oracle_process = True
    elif isinstance(proc_d, dict):
        cfg.process = process_from_dict(proc_d)
    elif proc_d is not None:
        raise ConfigError("process", "must be 'oracle' or an object")

    if "multipliers" in raw:
        cfg.multipliers = multipliers_from_dict(raw["multipliers"])

    sched = overrides.get("schedule", raw.get("schedule", [5, 10, 20, 40]))
    try:
        cfg.schedule = tuple(int(T) for T in sched)
    except (TypeError, ValueError):
        raise ConfigError("schedule", "must be a list of integers") from None
    if not cfg.schedule or any(b <= a for a, b in
                               zip(cfg.schedule, cfg.schedule[1:])) \
            or cfg.schedule[0] < 2:
        raise ConfigError("schedule",
                          "must be strictly increasing with entries >= 2")
    cfg.anchor_s = int(raw.get("anchor_s", cfg.problem.anchor_s))
    if cfg.anchor_s < 1 or cfg.anchor_s > cfg.schedule[0]:
        raise ConfigError("anchor_s",
                          "anchor must satisfy 1 <= s <= min(schedule)")
    cfg.certificate_tol = float(overrides.get("tol",
                                              raw.get("certificate_tol", 1e-6)))
    if cfg.certificate_tol <= 0:
        raise ConfigError("certificate_tol", "must be positive")
    try:
        cfg.solver = SolverConfig.from_dict(raw.get("solver", {}))
    except TypeError as exc:
        raise ConfigError("solver", f"unknown solver option: {exc}") from None
    cfg.seed = int(overrides.get("seed", raw.get("seed", 0)))
    cfg.window = int(raw.get("window", 3))
    cfg.limit_tol = float(raw.get("limit_tol", cfg.certificate_tol))
    cfg.audit_horizon = int(raw.get("audit_horizon", 10))
    term = raw.get("terminal", "steady_state")
    if isinstance(term, str):
        if term not in ("steady_state", "oracle"):
            raise ConfigError("terminal",
                              "must be 'steady_state', 'oracle', or a vector")
        if term == "oracle":
            fb = cfg.terminal_fallback()
            if fb is None:
                raise ConfigError("terminal",
                                  "'oracle' needs a catalog problem")
            cfg.terminal = fb
        else:
            cfg.terminal = "steady_state"
    else:
        cfg.terminal = _array(term, "terminal")
    return cfg
