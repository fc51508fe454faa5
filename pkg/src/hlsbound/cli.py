"""Command-line interface.

Exit codes: 0 success, 1 domain error (bad kernel/config/calibration),
2 usage error.
"""
from __future__ import annotations

import functools
import json
import random
import sys
from typing import Optional

import click

from .ir import KernelError, parse_kernel, summarize, to_json
from .analysis import (
    dependences,
    footprint_elements,
    liveness,
    min_ii,
    reduction_loops,
    trip_counts,
)
from .config import config_from_dict, default_config
from .latency import program_bound
from .nlp import build_problem, check_config, count_space, objective, solve
from .export import export_model
from .oracle import simulate_config
from .resources import CalibrationTable, load_calibration
from . import dse as dse_mod


def _read_kernel(path: str):
    with open(path) as f:
        return parse_kernel(f.read())


def _read_config(kernel, path: Optional[str]):
    tc = trip_counts(kernel)
    if path is None:
        return default_config(kernel, tc)
    with open(path) as f:
        return config_from_dict(kernel, tc, json.load(f))


def _domain_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (KernelError, FileNotFoundError, json.JSONDecodeError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(1)

    return wrapper


@click.group()
@click.option("--calibration", type=click.Path(), default=None,
              help="Device calibration file (INI format).")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.option("--seed", type=int, default=0, help="Seed for randomized demos.")
@click.pass_context
def main(ctx, calibration, as_json, seed):
    """Latency lower bounds, pragma optimization and DSE for affine kernels."""
    ctx.ensure_object(dict)
    try:
        ctx.obj["calib"] = load_calibration(calibration)
    except KernelError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    ctx.obj["json"] = as_json
    ctx.obj["seed"] = seed


@main.command()
@click.argument("kernel", type=click.Path())
@click.pass_context
@_domain_errors
def parse(ctx, kernel):
    """Parse a kernel file and print its structure."""
    k = _read_kernel(kernel)
    if ctx.obj["json"]:
        click.echo(to_json(k))
    else:
        click.echo(f"kernel {k.name}: {summarize(k)}")
        for a in k.arrays:
            dims = "x".join(map(str, a.dims))
            click.echo(f"  array {a.name}[{dims}] {a.element_bits}b {a.direction}")


@main.command()
@click.argument("kernel", type=click.Path())
@click.pass_context
@_domain_errors
def analyze(ctx, kernel):
    """Trip counts, dependences, reductions and footprints."""
    k = _read_kernel(kernel)
    calib = ctx.obj["calib"]
    tc = trip_counts(k)
    deps = dependences(k)
    reds = sorted(reduction_loops(k, deps))
    live = liveness(k, tc)
    doc = {
        "kernel": k.name,
        "trip_counts": {
            l: {"min": t.tc_min, "max": t.tc_max, "avg": float(t.tc_avg)}
            for l, t in sorted(tc.items())
        },
        "dependences": [
            {"kind": d.kind, "src": d.src_stmt, "dst": d.dst_stmt,
             "array": d.array, "carrier": d.carrier, "distance": d.distance}
            for d in deps
        ],
        "reduction_loops": reds,
        "min_ii": {l.loop_id: min_ii(k, l.loop_id, calib.op_latency, deps)
                   for l in k.loops()},
        "footprints": {a.name: footprint_elements(k, a.name, None, tc)
                       for a in k.arrays},
        "liveness": {a.name: {"in": live[a.name].live_in,
                              "out": live[a.name].live_out}
                     for a in k.arrays},
    }
    if ctx.obj["json"]:
        click.echo(json.dumps(doc, indent=2, sort_keys=True))
    else:
        click.echo(f"kernel {k.name}")
        for l, t in sorted(tc.items()):
            red = " (reduction)" if l in reds else ""
            click.echo(f"  loop {l}: tc [{t.tc_min}, {t.tc_max}]{red}")
        for d in deps:
            click.echo(f"  {d.kind} {d.src_stmt}->{d.dst_stmt} on {d.array} "
                       f"@ {d.carrier or 'none'} d={d.distance}")


@main.command()
@click.argument("kernel", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Configuration JSON (defaults: no pragmas).")
@click.pass_context
@_domain_errors
def bound(ctx, kernel, config_path):
    """Latency lower bound of a configuration."""
    k = _read_kernel(kernel)
    cfg = _read_config(k, config_path)
    rep = program_bound(k, cfg, ctx.obj["calib"])
    if ctx.obj["json"]:
        click.echo(json.dumps(rep.as_dict(), indent=2, sort_keys=True))
    else:
        click.echo(f"computation   {rep.computation}")
        click.echo(f"communication {rep.communication}")
        click.echo(f"total         {rep.total}")


@main.command("solve")
@click.argument("kernel", type=click.Path())
@click.option("--max-partition", type=int, default=None)
@click.option("--fine-grained-only", is_flag=True)
@click.option("--timeout-nlp", type=float, default=None,
              help="Accepted for interface parity; the solver is exact.")
@click.option("--export-model", "export_path", type=click.Path(), default=None)
@click.pass_context
@_domain_errors
def solve_cmd(ctx, kernel, max_partition, fine_grained_only, timeout_nlp,
              export_path):
    """Optimal pragma configuration for a kernel."""
    k = _read_kernel(kernel)
    mode = "fine" if fine_grained_only else "coarse"
    problem = build_problem(k, ctx.obj["calib"], mode=mode,
                            max_partition=max_partition)
    if export_path:
        with open(export_path, "w") as f:
            f.write(export_model(problem))
    sol = solve(problem)
    if sol is None:
        click.echo("no valid configuration", err=True)
        sys.exit(1)
    if ctx.obj["json"]:
        click.echo(json.dumps({"status": "optimal", **sol.as_dict()},
                              indent=2, sort_keys=True))
    else:
        click.echo(f"objective {sol.objective}")
        for lid, spec in sol.config.as_dict()["loops"].items():
            click.echo(f"  loop {lid}: pipeline={spec['pipeline']} "
                       f"ii={spec['ii']} uf={spec['uf']} tile={spec['tile']}")
        for a, pts in sol.config.as_dict()["caches"].items():
            click.echo(f"  cache {a} at {', '.join(map(str, pts))}")


@main.command("count-space")
@click.argument("kernel", type=click.Path())
@click.option("--max-partition", type=int, default=None)
@click.option("--fine-grained-only", is_flag=True)
@click.pass_context
@_domain_errors
def count_space_cmd(ctx, kernel, max_partition, fine_grained_only):
    """Size of the raw candidate grid."""
    k = _read_kernel(kernel)
    mode = "fine" if fine_grained_only else "coarse"
    problem = build_problem(k, ctx.obj["calib"], mode=mode,
                            max_partition=max_partition)
    n = count_space(problem)
    if ctx.obj["json"]:
        click.echo(json.dumps({"kernel": k.name, "configurations": n}))
    else:
        click.echo(f"{n}")


@main.command("export-model")
@click.argument("kernel", type=click.Path())
@click.option("--max-partition", type=int, default=None)
@click.option("--fine-grained-only", is_flag=True)
@click.option("-o", "--output", type=click.Path(), default=None)
@click.pass_context
@_domain_errors
def export_model_cmd(ctx, kernel, max_partition, fine_grained_only, output):
    """Write the optimization problem as a standalone text document."""
    k = _read_kernel(kernel)
    mode = "fine" if fine_grained_only else "coarse"
    problem = build_problem(k, ctx.obj["calib"], mode=mode,
                            max_partition=max_partition)
    text = export_model(problem)
    if output:
        with open(output, "w") as f:
            f.write(text)
    else:
        click.echo(text)


@main.command("dse")
@click.argument("kernel", type=click.Path())
@click.option("--ladder", default=None,
              help="Comma-separated partition limits, e.g. inf,1024,64,1.")
@click.option("--evaluator", "evaluator_spec", default="model",
              help="model | simulated:<rules.json> | command:<template>")
@click.option("--timeout-hls", type=float, default=None)
@click.option("--timeout-nlp", type=float, default=None)
@click.option("--jobs", type=int, default=1)
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.pass_context
@_domain_errors
def dse_cmd(ctx, kernel, ladder, evaluator_spec, timeout_hls, timeout_nlp,
            jobs, report_path):
    """Ladder-driven design space exploration."""
    k = _read_kernel(kernel)
    calib = ctx.obj["calib"]
    if ladder:
        rungs = tuple(
            None if part.strip() in ("inf", "") else int(part)
            for part in ladder.split(",")
        )
    else:
        rungs = dse_mod.DEFAULT_LADDER
    cfg = dse_mod.DseConfig(partition_ladder=rungs, timeout_hls=timeout_hls,
                            timeout_nlp=timeout_nlp, parallel_evaluations=jobs)
    if evaluator_spec == "model":
        evaluator = dse_mod.ModelEvaluator(calib)
    elif evaluator_spec.startswith("simulated:"):
        with open(evaluator_spec.split(":", 1)[1]) as f:
            rules = json.load(f)
        evaluator = dse_mod.SimulatedHlsEvaluator(calib, rules)
    elif evaluator_spec.startswith("command:"):
        evaluator = dse_mod.CommandEvaluator(
            evaluator_spec.split(":", 1)[1], kernel)
    else:
        raise click.UsageError(f"unknown evaluator {evaluator_spec!r}")
    report = dse_mod.run_dse(k, cfg, evaluator, calib)
    if report_path:
        dse_mod.persist_report(report, report_path)
    if ctx.obj["json"]:
        click.echo(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    else:
        for r in report.records:
            lad = "inf" if r.ladder is None else r.ladder
            extra = f" latency={r.latency}" if r.latency is not None else ""
            click.echo(f"  [{lad:>4} {r.mode:6}] lb={r.lower_bound} "
                       f"{r.action}{extra}")
        click.echo(f"best latency: {report.best_latency}")


@main.command("oracle")
@click.argument("kernel", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--resources", "resources_path", type=click.Path(), default=None,
              help="JSON map of op kind to unit count.")
@click.pass_context
@_domain_errors
def oracle_cmd(ctx, kernel, config_path, resources_path):
    """Feasible latency of a configuration (list-scheduled simulation)."""
    k = _read_kernel(kernel)
    cfg = _read_config(k, config_path)
    resources = None
    if resources_path:
        with open(resources_path) as f:
            resources = json.load(f)
    result = simulate_config(k, cfg, ctx.obj["calib"], resources)
    model = program_bound(k, cfg, ctx.obj["calib"], resources=resources or {})
    doc = {
        "oracle": {"computation": result.computation,
                   "communication": result.communication,
                   "total": result.total},
        "bound": model.as_dict(),
        "sound": model.total <= result.total,
    }
    if ctx.obj["json"]:
        click.echo(json.dumps(doc, indent=2, sort_keys=True))
    else:
        click.echo(f"oracle total {result.total}, bound total {model.total} "
                   f"({'ok' if doc['sound'] else 'VIOLATION'})")


@main.command("report")
@click.argument("path", type=click.Path())
@click.pass_context
@_domain_errors
def report_cmd(ctx, path):
    """Pretty-print a persisted exploration report."""
    rep = dse_mod.load_report(path)
    if ctx.obj["json"]:
        click.echo(json.dumps(rep.as_dict(), indent=2, sort_keys=True))
    else:
        click.echo(f"kernel {rep.kernel}: {len(rep.records)} steps, "
                   f"best latency {rep.best_latency}")
        for r in rep.records:
            lad = "inf" if r.ladder is None else r.ladder
            click.echo(f"  [{lad:>4} {r.mode:6}] lb={r.lower_bound} {r.action}")


if __name__ == "__main__":
    main()
