"""Design-space exploration driver.

Walks an array-partitioning ladder crossed with the two parallelism modes;
each step rebuilds and solves the optimization problem, and a candidate is
sent to the (pluggable) evaluator only when its analytic floor beats the
best latency seen so far — a sound prune because the floor never exceeds
any achievable latency.  Duplicate candidates are never re-evaluated.
"""
from __future__ import annotations

import json
import math
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .ir import KernelError, KernelIR, PropertyVector
from .config import Configuration, config_from_dict
from .latency import program_bound
from .nlp import NlpProblem, build_problem, solve
from .resources import CalibrationTable, dsp_lower_bound, onchip_usage
from .analysis import footprint_elements

SCHEMA_VERSION = 1
DEFAULT_LADDER: tuple[Optional[int], ...] = (
    None, 2048, 1024, 512, 256, 128, 64, 32, 16, 8, 1)
MODES = ("coarse", "fine")


@dataclass(frozen=True)
class DseConfig:
    partition_ladder: tuple[Optional[int], ...] = DEFAULT_LADDER
    timeout_hls: Optional[float] = None
    timeout_nlp: Optional[float] = None
    parallel_evaluations: int = 1

    def __post_init__(self):
        if not self.partition_ladder:
            raise KernelError("partition ladder must be non-empty")
        vals = [v for v in self.partition_ladder if v is not None]
        if any(a <= b for a, b in zip(vals, vals[1:])):
            raise KernelError("partition ladder must strictly decrease")
        if self.partition_ladder.count(None) > 1 or (
            None in self.partition_ladder and self.partition_ladder[0] is not None
        ):
            raise KernelError("unbounded ladder entry must come first")


@dataclass(frozen=True)
class Evaluation:
    latency: Optional[int]
    valid: bool
    applied: dict = field(default_factory=dict)
    reason: str = ""


class ModelEvaluator:
    """Perfect evaluator: reports the analytic floor itself, every pragma
    applied.  Useful for driver tests and as the no-toolchain default."""

    def __init__(self, calib: CalibrationTable, resources: Optional[dict] = None):
        self.calib = calib
        self.resources = dict(resources or {})

    def evaluate(self, kernel: KernelIR, config: Configuration,
                 deadline: Optional[float] = None) -> Evaluation:
        lat = program_bound(kernel, config, self.calib,
                            resources=self.resources).total
        applied = {f"{p.loop_id}.{name}": True
                   for p in config.pvs
                   for name in ("pipeline", "unroll", "tile")}
        return Evaluation(latency=lat, valid=True, applied=applied)


class SimulatedHlsEvaluator:
    """Scripted toolchain stand-in driven by a declarative rule list."""

    def __init__(self, calib: CalibrationTable, rules: list,
                 resources: Optional[dict] = None):
        self.calib = calib
        self.rules = rules
        self.resources = dict(resources or {})
        for r in rules:
            if "predicate" not in r or "effect" not in r:
                raise KernelError("rule needs 'predicate' and 'effect' keys")

    def evaluate(self, kernel: KernelIR, config: Configuration,
                 deadline: Optional[float] = None) -> Evaluation:
        return simulated_hls_evaluate(kernel, config, self.rules,
                                      self.calib, self.resources)


def simulated_hls_evaluate(kernel: KernelIR, config: Configuration,
                           rules: list, calib: CalibrationTable,
                           resources: Optional[dict] = None) -> Evaluation:
    """Deterministic scripted evaluation.

    Rules are checked in order; `reject` rules reset the matched pragmas to
    their defaults before the latency is recomputed, `inflate` rules
    multiply the final latency, `timeout` and `overutilize` rules abort
    with the corresponding status.  See docs/evaluator-rules.md for the
    rule schema.
    """
    effective = config
    applied: dict = {}
    for p in config.pvs:
        applied[f"{p.loop_id}.pipeline"] = p.ispipelined
        applied[f"{p.loop_id}.unroll"] = p.uf > 1
        applied[f"{p.loop_id}.tile"] = p.tile > 1
    inflation = 1.0

    for rule in rules:
        pred = rule["predicate"]
        effect = rule["effect"]
        matches = _match_rule(kernel, effective, pred)
        if not matches:
            continue
        action = effect.get("action")
        if action == "timeout":
            return Evaluation(latency=None, valid=False, applied=applied,
                              reason="timeout")
        if action == "overutilize":
            return Evaluation(latency=None, valid=False, applied=applied,
                              reason="over-utilization")
        if action == "inflate":
            inflation *= float(effect.get("factor", 1.0))
        elif action == "reject":
            for loop_id, pragma in matches:
                applied[f"{loop_id}.{pragma}"] = False
                effective = _strip_pragma(effective, loop_id, pragma)
        else:
            raise KernelError(f"unknown rule action {action!r}")

    lat = program_bound(kernel, effective, calib,
                        resources=dict(resources or {})).total
    lat = math.ceil(lat * inflation)
    return Evaluation(latency=lat, valid=True, applied=applied)


def _match_rule(kernel: KernelIR, config: Configuration, pred: dict):
    """Matched (loop, pragma) pairs; global predicates match as [("", "")]."""
    if "uf_product_gt" in pred:
        product = math.prod(p.uf for p in config.pvs)
        return [("", "")] if product > pred["uf_product_gt"] else []
    pragma = pred.get("pragma")
    want_loop = pred.get("loop")
    below: set[str] = set()
    for p in config.pvs:
        if p.ispipelined:
            below |= {l.loop_id for l in kernel.loops_under(p.loop_id)}
    out = []
    for p in config.pvs:
        if want_loop and p.loop_id != want_loop:
            continue
        if pragma == "pipeline" and p.ispipelined:
            out.append((p.loop_id, "pipeline"))
        elif pragma == "unroll" and p.uf > 1:
            out.append((p.loop_id, "unroll"))
        elif pragma == "coarse" and p.uf > 1 and not p.ispipelined \
                and p.loop_id not in below:
            out.append((p.loop_id, "unroll"))
        elif pragma == "tile" and p.tile > 1:
            out.append((p.loop_id, "tile"))
    if pragma == "cache":
        for a, pts in config.caches:
            for pt in pts:
                if want_loop in (None, pt):
                    out.append((pt, "cache"))
    return out


def _strip_pragma(config: Configuration, loop_id: str, pragma: str) -> Configuration:
    if pragma == "cache":
        caches = tuple(
            (a, tuple(pt for pt in pts if pt != loop_id))
            for a, pts in config.caches
        )
        caches = tuple((a, pts) for a, pts in caches if pts)
        return Configuration(pvs=config.pvs, caches=caches)
    pv = config.pv(loop_id)
    repl = {
        "pipeline": dict(ispipelined=False, ii=1),
        "unroll": dict(uf=1),
        "tile": dict(tile=1),
    }[pragma]
    new = PropertyVector(
        loop_id=pv.loop_id,
        ispipelined=repl.get("ispipelined", pv.ispipelined),
        ii=repl.get("ii", pv.ii),
        uf=repl.get("uf", pv.uf),
        tile=repl.get("tile", pv.tile),
        tc_min=pv.tc_min, tc_max=pv.tc_max, tc_avg=pv.tc_avg,
    )
    return config.replace_pv(new)


class CommandEvaluator:
    """Runs a user command per candidate; the command gets the kernel path
    and a config JSON path and must print one JSON line:
    {"latency": <int>, "valid": <bool>}."""

    def __init__(self, template: str, kernel_path: str):
        self.template = template
        self.kernel_path = kernel_path

    def evaluate(self, kernel: KernelIR, config: Configuration,
                 deadline: Optional[float] = None) -> Evaluation:
        with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as f:
            json.dump(config.as_dict(), f)
            cfg_path = f.name
        cmd = self.template.format(kernel=self.kernel_path, config=cfg_path)
        try:
            proc = subprocess.run(
                shlex.split(cmd), capture_output=True, text=True,
                timeout=deadline)
        except subprocess.TimeoutExpired:
            return Evaluation(latency=None, valid=False, reason="timeout")
        if proc.returncode != 0:
            return Evaluation(latency=None, valid=False,
                              reason=f"command failed: {proc.stderr.strip()}")
        try:
            doc = json.loads(proc.stdout.strip().splitlines()[-1])
            return Evaluation(latency=int(doc["latency"]),
                              valid=bool(doc.get("valid", True)))
        except (ValueError, KeyError, IndexError) as e:
            return Evaluation(latency=None, valid=False,
                              reason=f"bad evaluator output: {e}")


# ---------------------------------------------------------------------------
# Algorithm
# ---------------------------------------------------------------------------

@dataclass
class DseRecord:
    ladder: Optional[int]
    mode: str
    lower_bound: Optional[int]
    action: str  # evaluated | pruned | duplicate | infeasible | timeout | invalid
    latency: Optional[int] = None
    reason: str = ""
    config: Optional[dict] = None
    applied: Optional[dict] = None

    def as_dict(self) -> dict:
        return {
            "ladder": "inf" if self.ladder is None else self.ladder,
            "mode": self.mode,
            "lower_bound": self.lower_bound,
            "action": self.action,
            "latency": self.latency,
            "reason": self.reason,
            "config": self.config,
            "applied": self.applied,
        }


@dataclass
class DseReport:
    kernel: str
    records: list[DseRecord] = field(default_factory=list)
    best_config: Optional[dict] = None
    best_latency: Optional[int] = None

    def as_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kernel": self.kernel,
            "records": [r.as_dict() for r in self.records],
            "best_config": self.best_config,
            "best_latency": self.best_latency,
        }


def run_dse(k: KernelIR, dse_config: DseConfig, evaluator,
            calib: Optional[CalibrationTable] = None,
            resources: Optional[dict] = None) -> DseReport:
    """Ladder x mode sweep with lower-bound pruning (strict `<` gate, so
    ties are pruned) and duplicate suppression by canonical config key."""
    calib = calib or CalibrationTable()
    report = DseReport(kernel=k.name)

    # Solve every step up front (solves are deterministic and unaffected
    # by evaluation results).
    steps = []
    for ladder in dse_config.partition_ladder:
        for mode in MODES:
            problem = build_problem(k, calib, mode=mode, max_partition=ladder,
                                    resources=resources)
            sol = solve(problem)
            steps.append((ladder, mode, sol))

    # Speculative concurrent evaluation: results are deterministic, so
    # evaluating ahead of the gate cannot change the sequential outcome.
    eval_cache: dict = {}
    if dse_config.parallel_evaluations > 1:
        distinct = {}
        for _, _, sol in steps:
            if sol is not None:
                distinct.setdefault(sol.config.key(), sol.config)
        with ThreadPoolExecutor(dse_config.parallel_evaluations) as pool:
            futures = {
                key: pool.submit(evaluator.evaluate, k, cfg,
                                 dse_config.timeout_hls)
                for key, cfg in distinct.items()
            }
            eval_cache = {key: f.result() for key, f in futures.items()}

    min_lat = math.inf
    seen: set = set()
    for ladder, mode, sol in steps:
        if sol is None:
            report.records.append(DseRecord(ladder, mode, None, "infeasible"))
            continue
        key = sol.config.key()
        if not (sol.objective < min_lat):
            report.records.append(DseRecord(
                ladder, mode, sol.objective, "pruned",
                config=sol.config.as_dict()))
            continue
        if key in seen:
            report.records.append(DseRecord(
                ladder, mode, sol.objective, "duplicate",
                config=sol.config.as_dict()))
            continue
        seen.add(key)
        ev = eval_cache.get(key)
        if ev is None:
            ev = evaluator.evaluate(k, sol.config, dse_config.timeout_hls)
        if ev.latency is None:
            action = "timeout" if ev.reason == "timeout" else "invalid"
            report.records.append(DseRecord(
                ladder, mode, sol.objective, action, reason=ev.reason,
                config=sol.config.as_dict(), applied=ev.applied))
            continue
        if not ev.valid:
            report.records.append(DseRecord(
                ladder, mode, sol.objective, "invalid", latency=ev.latency,
                reason=ev.reason or "over-utilization",
                config=sol.config.as_dict(), applied=ev.applied))
            continue
        report.records.append(DseRecord(
            ladder, mode, sol.objective, "evaluated", latency=ev.latency,
            config=sol.config.as_dict(), applied=ev.applied))
        if ev.latency < min_lat:
            min_lat = ev.latency
            report.best_config = sol.config.as_dict()
            report.best_latency = ev.latency
    return report


def persist_report(report: DseReport, path: str) -> None:
    with open(path, "w") as f:
        json.dump(report.as_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_report(path: str) -> DseReport:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise KernelError(
            f"report schema version {doc.get('schema_version')!r}, "
            f"expected {SCHEMA_VERSION}")
    records = [
        DseRecord(
            ladder=None if r["ladder"] == "inf" else r["ladder"],
            mode=r["mode"],
            lower_bound=r["lower_bound"],
            action=r["action"],
            latency=r["latency"],
            reason=r["reason"],
            config=r["config"],
            applied=r["applied"],
        )
        for r in doc["records"]
    ]
    return DseReport(
        kernel=doc["kernel"],
        records=records,
        best_config=doc["best_config"],
        best_latency=doc["best_latency"],
    )
