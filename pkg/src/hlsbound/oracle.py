"""Feasible-schedule oracle.

Produces *achievable* latencies for a configuration by constructing
explicit schedules: a resource-constrained list scheduler for
straight-line regions and a recursive simulator for full configurations.
Every number it returns corresponds to a schedule that respects
dependences and unit counts, so analytic lower bounds must never exceed
it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .ir import KernelIR, Loop, Statement
from .analysis import dependences, footprint_elements, liveness, min_ii, \
    reduction_loops, trip_counts
from .config import Configuration
from .opgraph import OperationGraph, unroll_instances
from .resources import CalibrationTable, dependence_components


def list_schedule(g: OperationGraph, resources: Optional[dict[str, int]] = None) -> int:
    """Greedy cycle-by-cycle schedule of an operation graph.

    A node becomes ready when all predecessors finished; ready nodes are
    issued by descending remaining-path priority while units of the
    node's op kind are free, and occupy one unit for their whole latency.
    Returns the makespan of the resulting (feasible) schedule.
    """
    resources = dict(resources or {})
    order = g.topo_order()
    # Priority: longest latency path from node to any sink.
    tail: dict[int, int] = {}
    for n in reversed(order):
        tail[n] = g.nodes[n].latency + max(
            (tail[s] for s in g.succs[n]), default=0)

    finish: dict[int, int] = {}
    unscheduled = set(range(len(g.nodes)))
    busy: dict[str, list[int]] = {}  # op kind -> unit-free times
    t = 0
    while unscheduled:
        progressed = True
        while progressed:
            progressed = False
            ready = [n for n in unscheduled
                     if all(p in finish and finish[p] <= t for p in g.preds[n])]
            for n in sorted(ready, key=lambda m: (-tail[m], m)):
                node = g.nodes[n]
                kind = node.kind.split(":", 1)[-1]
                cap = resources.get(kind) if node.op_count else None
                if cap is not None:
                    busy[kind] = [f for f in busy.get(kind, []) if f > t]
                    if len(busy[kind]) >= cap:
                        continue
                    busy[kind].append(t + max(1, node.latency))
                finish[n] = t + node.latency
                unscheduled.discard(n)
                progressed = True
        if not unscheduled:
            break
        events = [f for f in finish.values() if f > t]
        events += [f for fs in busy.values() for f in fs if f > t]
        t = min(events) if events else t + 1
    # Sanity: precedence respected.
    for n, f in finish.items():
        for p in g.preds[n]:
            assert finish[p] <= f - g.nodes[n].latency
    return max(finish.values(), default=0)


def build_exec_graph(instances, op_latency: dict[str, int],
                     tree_mode: bool) -> OperationGraph:
    """Executable graph: like the analytic builder but reduction runs are
    expanded into explicit balanced combining trees (one node per op)."""
    g = OperationGraph()
    g.root = g.add_node("root")
    producer: dict[object, int] = {}
    inputs: dict[object, int] = {}

    def value_node(key) -> int:
        if key in producer:
            return producer[key]
        if key not in inputs:
            nid = g.add_node("input", label=str(key))
            g.add_edge(g.root, nid)
            inputs[key] = nid
        return inputs[key]

    def emit_chain(inst) -> None:
        read_nodes = [value_node(r) for r in inst["reads"]]
        if not inst["ops"]:
            producer[inst["write"]] = (read_nodes[0] if read_nodes
                                       else value_node(("const", inst["stmt_id"])))
            return
        prev = None
        for ci, kind in enumerate(inst["ops"]):
            nid = g.add_node(kind, latency=op_latency[kind], op_count=1)
            for j, entry in enumerate(inst["read_entry"]):
                if entry == ci:
                    g.add_edge(read_nodes[j], nid)
            if prev is not None:
                g.add_edge(prev, nid)
            prev = nid
        producer[inst["write"]] = prev

    def emit_prefix(inst) -> int:
        pending = [value_node(r) for r in inst["reads"] if r != inst["write"]]
        last = None
        for kind in inst["ops"][:-1]:
            nid = g.add_node(kind, latency=op_latency[kind], op_count=1)
            for p in pending:
                g.add_edge(p, nid)
            pending = [nid]
            last = nid
        if last is None:
            return pending[0] if pending else value_node(("const", inst["stmt_id"]))
        return last

    open_groups: dict[object, list] = {}

    def close(key) -> None:
        op, init, contribs = open_groups.pop(key)
        # Balanced binary combine over accumulator + contributions.
        level = [init, *contribs]
        while len(level) > 1:
            nxt = []
            for j in range(0, len(level) - 1, 2):
                nid = g.add_node(op, latency=op_latency[op], op_count=1)
                g.add_edge(level[j], nid)
                g.add_edge(level[j + 1], nid)
                nxt.append(nid)
            if len(level) % 2:
                nxt.append(level[-1])
            level = nxt
        producer[key] = level[0]

    for inst in instances:
        key = inst["write"]
        accum = inst.get("accum_op") if tree_mode else None
        for r in inst["reads"]:
            if r in open_groups and not (accum and r == key):
                close(r)
        if key in open_groups and (not accum or open_groups[key][0] != accum):
            close(key)
        if accum:
            if key not in open_groups:
                open_groups[key] = [accum, value_node(key), []]
            open_groups[key][2].append(emit_prefix(inst))
        else:
            emit_chain(inst)
    for key in list(open_groups):
        close(key)

    for key, nid in producer.items():
        out = g.add_node("output", label=str(key))
        g.add_edge(nid, out)
    return g


# ---------------------------------------------------------------------------
# Full-configuration simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleResult:
    computation: int
    communication: int

    @property
    def total(self) -> int:
        return self.computation + self.communication


def simulate_config(k: KernelIR, config: Configuration,
                    calib: CalibrationTable,
                    resources: Optional[dict[str, int]] = None) -> OracleResult:
    """Latency of one concrete, feasible implementation of `config`.

    Sequential loops run iterations back to back; unrolled non-reduction
    loops run replica waves as wide as the units allow; pipelined loops
    run a list-scheduled iteration body at a legal initiation interval.
    Communication issues all configured transfers without overlap.
    """
    resources = dict(resources or {})
    tc = trip_counts(k)
    deps = dependences(k)
    reds = reduction_loops(k, deps)
    tree_mode = k.options.tree_reduction_enabled

    def sub(e, env):
        return e.const if e.iterator is None else env[e.iterator] + e.const

    def node_lat(node, env) -> int:
        if isinstance(node, Statement):
            return sum(calib.latency(op.kind) for op in node.ops)
        pv = config.pv(node.loop_id)
        lo, hi = sub(node.lower, env), sub(node.upper, env)
        n_iter = max(0, hi - lo)
        if n_iter == 0:
            return 0
        if pv.ispipelined:
            return pipelined_lat(node, pv, lo, n_iter, env)
        if node.loop_id in reds:
            return reduction_lat(node, pv, lo, hi, env)
        if pv.uf > 1:
            return coarse_lat(node, pv, lo, hi, env)
        return sum(body_lat(node, {**env, node.loop_id: v}) for v in range(lo, hi))

    def body_lat(loop: Loop, env) -> int:
        return compose(list(loop.body), env)

    def compose(children, env) -> int:
        comps = dependence_components(k, children, deps)
        return max((sum(node_lat(c, env) for c in comp) for comp in comps),
                   default=0)

    def pipelined_lat(loop: Loop, pv, lo, n_iter, env) -> int:
        instances = []
        for v in range(lo, lo + pv.uf):
            part = unroll_instances(k, list(loop.body), tc, 1 << 16,
                                    env={**env, loop.loop_id: v})
            assert part is not None, "pipelined body too large to simulate"
            instances.extend(part)
        g = build_exec_graph(instances, calib.op_latency, tree_mode)
        sl = list_schedule(g, resources)
        rec = min_ii(k, loop.loop_id, calib.op_latency, deps)
        ii = max(pv.ii, rec)
        for kind, count in g.op_counts().items():
            cap = resources.get(kind)
            if cap:
                ii = max(ii, math.ceil(count * calib.latency(kind) / cap))
        waves = math.ceil(n_iter / pv.uf)
        return sl + ii * (waves - 1)

    def reduction_lat(loop: Loop, pv, lo, hi, env) -> int:
        if not (tree_mode and pv.uf > 1):
            # Plain sequential accumulation.
            return sum(body_lat(loop, {**env, loop.loop_id: v})
                       for v in range(lo, hi))
        # Tree mode: schedule each uf-group's body instances as a region
        # (reduction runs combine in balanced trees), groups sequential.
        total = 0
        v = lo
        while v < hi:
            group = list(range(v, min(hi, v + pv.uf)))
            instances = []
            for gv in group:
                part = unroll_instances(k, list(loop.body), tc, 1 << 16,
                                        env={**env, loop.loop_id: gv})
                assert part is not None
                instances.extend(part)
            g = build_exec_graph(instances, calib.op_latency, tree_mode=True)
            total += list_schedule(g, resources)
            v += pv.uf
        return total

    def coarse_lat(loop: Loop, pv, lo, hi, env) -> int:
        # Replica waves: width limited by the scarcest unit kind.
        body_demand: dict[str, int] = {}
        for s in k.statements_under(loop):
            for op in s.ops:
                body_demand[op.kind] = body_demand.get(op.kind, 0) + 1
        width = pv.uf
        for kind, need in body_demand.items():
            cap = resources.get(kind)
            if cap:
                width = min(width, max(1, cap // max(1, need)))
        total = 0
        v = lo
        while v < hi:
            group = list(range(v, min(hi, v + pv.uf)))
            waves = math.ceil(len(group) / width)
            wave_lat = max(body_lat(loop, {**env, loop.loop_id: gv})
                           for gv in group)
            total += waves * wave_lat
            v += pv.uf
        return total

    computation = compose(list(k.root), {})
    communication = _oracle_communication(k, config, tc, calib)
    return OracleResult(computation=computation, communication=communication)


def _oracle_communication(k: KernelIR, config: Configuration,
                          tc, calib: CalibrationTable) -> int:
    """Transfer schedule cost: per cache level, arrays stream
    concurrently over the port (the widest one dominates); levels issue
    one after another."""
    live = liveness(k, tc)
    per_level: dict[Optional[str], int] = {}
    for a in k.arrays:
        pts = config.cache_points(a.name) or (None,)
        for pt in pts:
            tiles = config.tiles() if pt is not None else {}
            fp = footprint_elements(k, a.name, pt, tc, tiles)
            beats = math.ceil(fp * a.element_bits / calib.port_bits)
            cost = live[a.name].transfer_count * beats
            per_level[pt] = max(per_level.get(pt, 0), cost)
    return sum(per_level.values())
