"""Latency lower bounds for pragma configurations.

A configuration's latency floor is computed recursively over the loop
nest: statements contribute their op-chain latency, loops scale their
body through the iteration operator, and siblings compose by summing
dependence-connected components and overlapping independent ones.
Communication adds a port-bandwidth floor for off-chip transfers; the
model assumes no compute/transfer overlap, so the two floors add.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .ir import KernelIR, Loop, PropertyVector, Statement
from .analysis import (
    Dependence,
    TripCount,
    dependences,
    footprint_elements,
    liveness,
    min_ii,
    reduction_loops,
    trip_counts,
)
from .config import Configuration
from .opgraph import build_graph, region_bound, unroll_instances
from .resources import CalibrationTable, dependence_components

UNROLL_INSTANCE_LIMIT = 1 << 14


# ---------------------------------------------------------------------------
# Core operators
# ---------------------------------------------------------------------------

def apply_i(pv: PropertyVector, body_latency: int) -> int:
    """Iteration operator: lift a body latency through one loop.

    Pipelined loops overlap iterations II cycles apart, so the loop adds
    floor(II * (TC/uf - 1)) cycles to one body's latency; sequential loops
    repeat the body floor(TC/uf) times.
    """
    tc_over_uf = Fraction(pv.tc_avg, pv.uf)
    factor = math.floor(pv.ii * (tc_over_uf - (1 if pv.ispipelined else 0)))
    factor = max(0, factor)
    if pv.ispipelined:
        return factor + body_latency
    return factor * body_latency


def compose_c(k: KernelIR, children: list, child_latency, deps) -> int:
    """Composition operator for sibling subtrees.

    Dependence-connected siblings execute in order (latencies sum);
    mutually independent groups may overlap (latencies max).
    """
    comps = dependence_components(k, children, deps)
    return max(
        (sum(child_latency(c) for c in comp) for comp in comps),
        default=0,
    )


def lat_sequential(tc: int, body_latency: int) -> int:
    """No pragmas: every iteration runs back to back."""
    return tc * body_latency


def lat_coarse_grained(tc: int, uf: int, body_latency: int) -> int:
    """uf independent iteration groups run side by side."""
    return (tc // uf) * body_latency


def lat_reduction_unroll(tc: int, uf: int, step_latency: int) -> int:
    """Unrolled reduction with tree rebalancing.

    Each group of uf partial results combines in a tree of depth at least
    floor(log2 uf) steps; floor(tc/uf) groups remain serialized through
    the recirculated accumulator.
    """
    if uf <= 1:
        return tc * step_latency
    return (tc // uf) * max(1, math.floor(math.log2(uf))) * step_latency


def lat_full_unroll(k: KernelIR, nodes, tc: dict[str, TripCount],
                    calib: CalibrationTable,
                    resources: Optional[dict[str, int]] = None,
                    replicate_loop: Optional[tuple[str, int]] = None,
                    tree_reduction: bool = False) -> int:
    """Latency floor of an AST region with every loop fully unrolled.

    Builds the region's operation graph when the expansion stays under
    the instance cap and takes max(critical path, work/units); otherwise
    falls back to a coarser closed form that is still a valid floor.
    `replicate_loop` = (loop_id, uf) expands only uf iterations of that
    loop — the iteration body of a pipelined, partially unrolled loop.
    """
    resources = resources or {}
    node_list = list(nodes) if isinstance(nodes, (list, tuple)) else [nodes]

    instances = None
    if replicate_loop is None:
        instances = unroll_instances(k, node_list, tc, UNROLL_INSTANCE_LIMIT)
    else:
        loop_id, uf = replicate_loop
        loop = node_list[0]
        assert isinstance(loop, Loop) and loop.loop_id == loop_id
        instances = []
        base = loop.lower.const if loop.lower.iterator is None else 0
        for v in range(base, base + uf):
            part = unroll_instances(k, list(loop.body), tc,
                                    UNROLL_INSTANCE_LIMIT - len(instances),
                                    env={loop_id: v})
            if part is None:
                instances = None
                break
            instances.extend(part)

    if instances is not None:
        g = build_graph(instances, calib.op_latency, tree_reduction=tree_reduction)
        return region_bound(g, resources)
    return _full_unroll_fallback(k, node_list, tc, calib, resources,
                                 replicate_loop, tree_reduction)


def _full_unroll_fallback(k, node_list, tc, calib, resources,
                          replicate_loop, tree_reduction) -> int:
    """Closed-form floor when the region is too large to expand.

    Critical-path part: the heaviest statement chain, extended by the
    combining depth of any enclosing reductions inside the region.  Work
    part: per op kind with finite units, total ops * latency / units.
    """
    reds = reduction_loops(k)
    inside = {l.loop_id for n in node_list if isinstance(n, Loop)
              for l in [n, *k.loops_under(n.loop_id)]}

    def stmt_reps(stmt_id: str) -> int:
        reps = 1
        for l in k.enclosing_loops(stmt_id):
            if l.loop_id not in inside:
                continue
            if replicate_loop and l.loop_id == replicate_loop[0]:
                reps *= replicate_loop[1]
            else:
                reps *= tc[l.loop_id].tc_min
        return reps

    cp = 0
    work_ops: dict[str, int] = {}
    for n in node_list:
        for s in k.statements_under(n):
            chain = sum(calib.latency(op.kind) for op in s.ops)
            depth_extra = 0
            for l in k.enclosing_loops(s.stmt_id):
                if l.loop_id in inside and l.loop_id in reds and s.accum_op:
                    n_contrib = tc[l.loop_id].tc_min
                    if replicate_loop and l.loop_id == replicate_loop[0]:
                        n_contrib = replicate_loop[1]
                    if n_contrib > 1:
                        depth_extra += (math.floor(math.log2(n_contrib))
                                        * calib.latency(s.accum_op))
            cp = max(cp, chain + depth_extra)
            reps = stmt_reps(s.stmt_id)
            for op in s.ops:
                work_ops[op.kind] = work_ops.get(op.kind, 0) + reps
    work = 0
    for kind, count in work_ops.items():
        units = resources.get(kind)
        if units:
            work = max(work, math.ceil(count * calib.latency(kind) / units))
    return max(cp, work)


# ---------------------------------------------------------------------------
# Whole-program bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundReport:
    computation: int
    communication: int
    details: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.computation + self.communication

    def as_dict(self) -> dict:
        return {
            "computation": self.computation,
            "communication": self.communication,
            "total": self.total,
            "details": self.details,
        }


def statement_latency(s: Statement, calib: CalibrationTable) -> int:
    return sum(calib.latency(op.kind) for op in s.ops)


def program_bound(k: KernelIR, config: Configuration, calib: CalibrationTable,
                  resources: Optional[dict[str, int]] = None,
                  deps: Optional[list[Dependence]] = None,
                  tc: Optional[dict[str, TripCount]] = None) -> BoundReport:
    """Latency floor of the whole kernel under a configuration.

    Computation recurses over the nest; communication sums per-level port
    floors; the two add because the model grants no overlap between them.
    """
    if deps is None:
        deps = dependences(k)
    if tc is None:
        tc = trip_counts(k)
    resources = resources or {}
    reds = reduction_loops(k, deps)
    tree_mode = k.options.tree_reduction_enabled

    def node_lat(node) -> int:
        if isinstance(node, Statement):
            return statement_latency(node, calib)
        pv = config.pv(node.loop_id)
        if pv.ispipelined:
            ii = max(pv.ii, min_ii(k, node.loop_id, calib.op_latency, deps))
            sl = lat_full_unroll(
                k, [node], tc, calib, resources,
                replicate_loop=(node.loop_id, pv.uf),
                tree_reduction=tree_mode,
            )
            eff = PropertyVector(
                loop_id=pv.loop_id, ispipelined=True, ii=ii, uf=pv.uf,
                tile=pv.tile, tc_min=pv.tc_min, tc_max=pv.tc_max,
                tc_avg=pv.tc_avg,
            )
            return apply_i(eff, sl)
        body = compose_c(k, list(node.body), node_lat, deps)
        if node.loop_id in reds:
            if tree_mode and pv.uf > 1:
                combine = max(
                    (calib.latency(s.accum_op)
                     for s in k.statements_under(node) if s.accum_op),
                    default=body,
                )
                return lat_reduction_unroll(math.floor(pv.tc_avg), pv.uf, combine)
            # Recirculated accumulator: unrolling cannot shorten the chain.
            return math.floor(pv.tc_avg * body)
        eff = PropertyVector(
            loop_id=pv.loop_id, ispipelined=False, ii=1, uf=pv.uf,
            tile=pv.tile, tc_min=pv.tc_min, tc_max=pv.tc_max, tc_avg=pv.tc_avg,
        )
        return apply_i(eff, body)

    computation = compose_c(k, list(k.root), node_lat, deps)
    communication, levels = memory_bound(k, config, tc, calib)
    return BoundReport(
        computation=computation,
        communication=communication,
        details={"levels": levels},
    )


def memory_bound(k: KernelIR, config: Configuration, tc: dict[str, TripCount],
                 calib: CalibrationTable) -> tuple[int, dict]:
    """Port-bandwidth floor for off-chip transfers.

    Each array transfers at its cache points (top level when none is
    chosen); a transfer moves ceil(footprint_bits / port_bits) beats, twice
    when the array is both live-in and live-out.  Transfers at one level
    may overlap (max); distinct levels serialize (sum).
    """
    live = liveness(k, tc)
    levels: dict[Optional[str], int] = {}
    for a in k.arrays:
        pts = config.cache_points(a.name) or (None,)
        for pt in pts:
            tiles = config.tiles() if pt is not None else {}
            fp = footprint_elements(k, a.name, pt, tc, tiles)
            beats = math.ceil(fp * a.element_bits / calib.port_bits)
            term = live[a.name].transfer_count * beats
            key = pt
            levels[key] = max(levels.get(key, 0), term)
    total = sum(levels.values())
    return total, {str(pt): v for pt, v in levels.items()}
