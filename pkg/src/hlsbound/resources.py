"""Device calibration data and resource lower bounds.

The calibration file is a plain INI text file:

    [device]
    dsp = 6840
    bram_bits = 308674560
    max_partition = 1024
    port_bits = 512

    [op.add]
    latency = 5
    dsp = 2

    [op.mul]
    latency = 4
    dsp = 3

Unlisted ops fall back to built-in defaults.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from typing import Optional

from .ir import OP_KINDS, KernelError, KernelIR
from .analysis import TripCount, dependences, statements_dependent

DEFAULT_OP_LATENCY = {"add": 5, "sub": 5, "mul": 4, "div": 15}
DEFAULT_OP_DSP = {"add": 2, "sub": 2, "mul": 3, "div": 8}


@dataclass(frozen=True)
class CalibrationTable:
    op_latency: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_OP_LATENCY))
    op_dsp: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_OP_DSP))
    dsp_budget: int = 6840
    bram_bits: int = 308_674_560
    max_partition: int = 1024
    port_bits: int = 512

    def latency(self, op: str) -> int:
        return self.op_latency[op]

    def dsp(self, op: str) -> int:
        return self.op_dsp[op]


def load_calibration(path: Optional[str] = None) -> CalibrationTable:
    if path is None:
        return CalibrationTable()
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise KernelError(f"calibration file not found: {path}")
    lat = dict(DEFAULT_OP_LATENCY)
    dsp = dict(DEFAULT_OP_DSP)
    dev: dict[str, int] = {}
    for section in cp.sections():
        if section == "device":
            for key in cp["device"]:
                dev[key] = int(cp["device"][key])
        elif section.startswith("op."):
            op = section[3:]
            if op not in OP_KINDS:
                raise KernelError(f"calibration: unknown op {op!r}")
            if "latency" in cp[section]:
                lat[op] = int(cp[section]["latency"])
            if "dsp" in cp[section]:
                dsp[op] = int(cp[section]["dsp"])
        else:
            raise KernelError(f"calibration: unknown section [{section}]")
    if any(v <= 0 for v in lat.values()) or any(v < 0 for v in dsp.values()):
        raise KernelError("calibration: latencies must be positive, dsp non-negative")
    return CalibrationTable(
        op_latency=lat,
        op_dsp=dsp,
        dsp_budget=dev.get("dsp", 6840),
        bram_bits=dev.get("bram_bits", 308_674_560),
        max_partition=dev.get("max_partition", 1024),
        port_bits=dev.get("port_bits", 512),
    )


# ---------------------------------------------------------------------------
# Compute-unit replication and DSP lower bound
# ---------------------------------------------------------------------------

def effective_unroll(k: KernelIR, stmt_id: str, config) -> tuple[int, int]:
    """(replication factor, II) for one statement under a configuration.

    Replication multiplies the unroll factor of every enclosing loop; a
    pipelined enclosing loop fully unrolls everything beneath it, so loops
    inside the pipeline contribute their whole trip count.  II is the
    pipelined ancestor's initiation interval (1 when none: each replica
    issues every cycle only if pipelined, otherwise II is irrelevant and
    taken as 1 for peak pressure).
    """
    loops = k.enclosing_loops(stmt_id)
    pip_depth = None
    for i, l in enumerate(loops):
        if config.pv(l.loop_id).ispipelined:
            pip_depth = i
            break
    mcu = 1
    for i, l in enumerate(loops):
        pv = config.pv(l.loop_id)
        if pip_depth is not None and i > pip_depth:
            mcu *= pv.tc_max  # fully unrolled beneath the pipeline
        else:
            mcu *= pv.uf
    ii = config.pv(loops[pip_depth].loop_id).ii if pip_depth is not None else 1
    return mcu, ii


def dsp_lower_bound(k: KernelIR, config, calib: CalibrationTable,
                    deps=None) -> float:
    """Optimistic DSP demand of a configuration.

    Per op kind, compute-unit demand is summed over statements that run
    concurrently and maxed over groups that run at different times; a
    statement needs #ops * dsp_per_op * replication / II units.  Groups
    mirror latency composition: sibling subtrees with no dependence
    between them overlap, dependent ones are serialized.
    """
    if deps is None:
        deps = dependences(k)

    def node_demand(node) -> dict[str, float]:
        from .ir import Loop, Statement
        if isinstance(node, Statement):
            mcu, ii = effective_unroll(k, node.stmt_id, config)
            d: dict[str, float] = {}
            for op in node.ops:
                d[op.kind] = d.get(op.kind, 0.0) + calib.dsp(op.kind) * mcu / ii
            return d
        return children_demand(node.body)

    def children_demand(children) -> dict[str, float]:
        comps = dependence_components(k, list(children), deps)
        total: dict[str, float] = {}
        for comp in comps:  # parallel components: concurrent, so sum
            comp_max: dict[str, float] = {}
            for child in comp:  # serialized within: max
                d = node_demand(child)
                for op, v in d.items():
                    comp_max[op] = max(comp_max.get(op, 0.0), v)
            for op, v in comp_max.items():
                total[op] = total.get(op, 0.0) + v
        return total

    demand = children_demand(k.root)
    return sum(demand.values())


def dependence_components(k: KernelIR, children: list, deps) -> list[list]:
    """Partition sibling AST nodes into dependence-connected components.

    Nodes in one component must execute in order (summed latency, maxed
    resource); distinct components may overlap (maxed latency, summed
    resource).
    """
    groups = [[s.stmt_id for s in k.statements_under(c)] for c in children]
    n = len(children)
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            if statements_dependent(k, deps, groups[i], groups[j]):
                parent[find(i)] = find(j)
    comps: dict[int, list] = {}
    for i, c in enumerate(children):
        comps.setdefault(find(i), []).append(c)
    # Preserve program order within and across components.
    return [comps[r] for r in sorted(comps, key=lambda r: min(
        i for i in range(n) if find(i) == r))]


# ---------------------------------------------------------------------------
# Array partitioning and on-chip storage
# ---------------------------------------------------------------------------

def partition_factors(k: KernelIR, array: str, config) -> dict[int, int]:
    """Per-dimension partition factor an array needs to feed the
    configured parallelism without port conflicts.

    For each dimension, the factor is the least common multiple over
    accesses of the effective unroll of the loop indexing that dimension
    (1 for constant subscripts).
    """
    decl = k.array(array)
    factors = {d: 1 for d in range(len(decl.dims))}
    for s in k.statements():
        for acc in (s.write, *s.reads):
            if acc.array != array:
                continue
            chain = k.enclosing_loops(s.stmt_id)
            loops = {l.loop_id for l in chain}
            # Loops strictly below a pipeline are fully unrolled.
            under_pipe: set[str] = set()
            seen_pipe = False
            for l in chain:
                if seen_pipe:
                    under_pipe.add(l.loop_id)
                if config.pv(l.loop_id).ispipelined:
                    seen_pipe = True
            for d, e in enumerate(acc.subscripts):
                if d >= len(decl.dims):
                    break
                if e.iterator is None or e.iterator not in loops:
                    continue
                pv = config.pv(e.iterator)
                eff = pv.tc_max if e.iterator in under_pipe else pv.uf
                factors[d] = _lcm(factors[d], max(1, eff))
    return factors


def _lcm(a: int, b: int) -> int:
    return a * b // math.gcd(a, b)


def onchip_usage(k: KernelIR, config, tc: dict[str, TripCount],
                 footprint_fn) -> int:
    """Total bits buffered on chip by the configuration's cache choices."""
    total = 0
    for a in k.arrays:
        for loop_id in config.cache_points(a.name):
            fp = footprint_fn(k, a.name, loop_id, tc, config.tiles())
            total += fp * a.element_bits
    return total
