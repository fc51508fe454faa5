"""Operation graphs for straight-line regions.

A region's graph has a virtual root, input nodes (zero latency), one node
per arithmetic operation, reduction supernodes for rebalanced
accumulations, and output nodes (zero latency).  Two quantities drive the
latency floor of the region:

* the weighted critical path: the heaviest dependence chain, and
* the work bound: per op kind, ceil(#ops * latency / #units).

The region cannot finish before the larger of the two.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional


@dataclass
class OpNode:
    node_id: int
    kind: str  # op kind, "input", "output", "root", or "reduce:<op>"
    latency: int = 0
    op_count: int = 0  # arithmetic ops this node accounts for
    label: str = ""


@dataclass
class OperationGraph:
    nodes: list[OpNode] = field(default_factory=list)
    succs: dict[int, set[int]] = field(default_factory=dict)
    preds: dict[int, set[int]] = field(default_factory=dict)
    root: int = -1

    def add_node(self, kind: str, latency: int = 0, op_count: int = 0,
                 label: str = "") -> int:
        nid = len(self.nodes)
        self.nodes.append(OpNode(nid, kind, latency, op_count, label))
        self.succs[nid] = set()
        self.preds[nid] = set()
        return nid

    def add_edge(self, src: int, dst: int) -> None:
        self.succs[src].add(dst)
        self.preds[dst].add(src)

    def topo_order(self) -> list[int]:
        indeg = {n.node_id: len(self.preds[n.node_id]) for n in self.nodes}
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order = []
        while ready:
            n = ready.pop()
            order.append(n)
            for s in sorted(self.succs[n]):
                indeg[s] -= 1
                if indeg[s] == 0:
                    ready.append(s)
        if len(order) != len(self.nodes):
            raise ValueError("operation graph has a cycle")
        return order

    def op_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for n in self.nodes:
            if n.op_count:
                base = n.kind.split(":", 1)[-1]
                counts[base] = counts.get(base, 0) + n.op_count
        return counts


def critical_path(g: OperationGraph) -> int:
    """Heaviest dependence chain: the longest path by node latency.

    Every legal schedule must finish each chain in order, so the heaviest
    one is a latency floor for the whole region.
    """
    dist: dict[int, int] = {}
    best = 0
    for n in g.topo_order():
        d = max((dist[p] for p in g.preds[n]), default=0) + g.nodes[n].latency
        dist[n] = d
        best = max(best, d)
    return best


def region_bound(g: OperationGraph, resources: dict[str, int]) -> int:
    """Latency floor of a straight-line region under finite op units.

    max(critical path, per-op-kind ceil(count * latency / units)); op
    kinds absent from `resources` are unconstrained.  Each resource term
    holds because `count` executions of a unit-exclusive op, each busy for
    `latency` cycles, need count*latency unit-cycles spread over `units`
    units.
    """
    cp = critical_path(g)
    work = 0
    for kind, count in g.op_counts().items():
        units = resources.get(kind)
        if not units:
            continue
        unit_lat = _unit_latency(g, kind)
        work = max(work, math.ceil(count * unit_lat / units))
    return max(cp, work)


def _unit_latency(g: OperationGraph, kind: str) -> int:
    for n in g.nodes:
        base = n.kind.split(":", 1)[-1]
        if base == kind and n.op_count:
            if n.kind.startswith("reduce:"):
                # Supernode latency is floor(log2(n)) * unit latency.
                depth = max(1, math.floor(math.log2(n.op_count))) if n.op_count > 1 else 0
                if depth:
                    return n.latency // depth
                # Single-op group: latency is the unit latency directly.
                return n.latency
            return n.latency
    return 0


# ---------------------------------------------------------------------------
# Graph construction from a fully unrolled region
# ---------------------------------------------------------------------------

def build_graph(instances, op_latency: dict[str, int],
                tree_reduction: bool = False) -> OperationGraph:
    """Build the operation graph of a straight-line region.

    `instances` is a list of statement instances, each a dict with:
      stmt_id, ops (list of op kinds), write (value key produced),
      reads (list of value keys consumed), read_entry (chain index per read).

    Value keys are hashable tokens naming array elements; a read whose key
    no instance has produced becomes an input node.  When `tree_reduction`
    is set, accumulation instances that keep re-targeting one key (with no
    interleaved foreign access to that key) collapse into a reduction
    supernode: n ops of latency L contribute n to the work bound but only
    floor(log2 n) * L to the critical path, the depth of a balanced
    combining tree.
    """
    g = OperationGraph()
    g.root = g.add_node("root")
    producer: dict[object, int] = {}  # value key -> node producing it
    inputs: dict[object, int] = {}

    def input_node(key) -> int:
        if key not in inputs:
            nid = g.add_node("input", label=str(key))
            g.add_edge(g.root, nid)
            inputs[key] = nid
        return inputs[key]

    def value_node(key) -> int:
        if key in producer:
            return producer[key]
        return input_node(key)

    # Open accumulation groups: key -> [op, init node, contribution nodes].
    open_groups: dict[object, list] = {}

    def close(key) -> None:
        op, init, contribs = open_groups.pop(key)
        lat = op_latency[op]
        if len(contribs) == 1:
            nid = g.add_node(op, latency=lat, op_count=1, label=str(key))
            g.add_edge(init, nid)
            g.add_edge(contribs[0], nid)
        else:
            depth = math.floor(math.log2(len(contribs)))
            nid = g.add_node(f"reduce:{op}", latency=depth * lat,
                             op_count=len(contribs), label=str(key))
            g.add_edge(init, nid)
            for cn in contribs:
                g.add_edge(cn, nid)
        producer[key] = nid

    for inst in instances:
        key = inst["write"]
        accum = inst.get("accum_op") if tree_reduction else None
        # Any access that is not this key's own accumulation seals the
        # touched key's group.
        for r in inst["reads"]:
            if r in open_groups and not (accum and r == key):
                close(r)
        if key in open_groups and (not accum or open_groups[key][0] != accum):
            close(key)
        if accum:
            if key not in open_groups:
                open_groups[key] = [accum, value_node(key), []]
            contrib = _emit_prefix(g, inst, op_latency, value_node, producer)
            open_groups[key][2].append(contrib)
        else:
            _emit_full(g, inst, op_latency, value_node, producer)
    for key in list(open_groups):
        close(key)

    # Output nodes: last producer of each key that is externally visible.
    for key, nid in producer.items():
        out = g.add_node("output", label=str(key))
        g.add_edge(nid, out)
    return g


def _emit_prefix(g, inst, op_latency, value_node, producer) -> Optional[int]:
    """Emit the non-accumulating prefix of an instance's op chain (the
    contribution computation, e.g. the multiply of a multiply-accumulate).
    Returns the node producing the contribution, or None when the
    contribution is a plain read."""
    ops = inst["ops"][:-1]  # final op is the accumulation itself
    last = None
    pending = [value_node(r) for r in inst["reads"] if r != inst["write"]]
    for kind in ops:
        nid = g.add_node(kind, latency=op_latency[kind], op_count=1,
                         label=inst["stmt_id"])
        for p in pending:
            g.add_edge(p, nid)
        pending = [nid]
        if last is not None:
            g.add_edge(last, nid)
        last = nid
    if last is None:
        return pending[0] if pending else value_node(("const", inst["stmt_id"]))
    return last


def _emit_full(g, inst, op_latency, value_node, producer) -> None:
    """Emit an instance's whole op chain as a linear chain of op nodes."""
    read_nodes = [value_node(r) for r in inst["reads"]]
    if not inst["ops"]:
        # Pure copy: route the read straight to the written key.
        src = read_nodes[0] if read_nodes else value_node(("const", inst["stmt_id"]))
        producer[inst["write"]] = src
        return
    prev = None
    for ci, kind in enumerate(inst["ops"]):
        nid = g.add_node(kind, latency=op_latency[kind], op_count=1,
                         label=inst["stmt_id"])
        for j, entry in enumerate(inst["read_entry"]):
            if entry == ci:
                g.add_edge(read_nodes[j], nid)
        if prev is not None:
            g.add_edge(prev, nid)
        prev = nid
    producer[inst["write"]] = prev


# ---------------------------------------------------------------------------
# Unrolling a kernel subtree into statement instances
# ---------------------------------------------------------------------------

def unroll_instances(k, node, tc, limit: int = 1 << 14,
                     env: Optional[dict[str, int]] = None) -> Optional[list]:
    """Fully unroll an AST subtree into statement instances.

    Returns None when the expansion would exceed `limit` instances.
    `env` binds enclosing iterators for subscript evaluation.
    """
    from .ir import Loop, Statement

    out: list = []
    env = dict(env or {})

    def subval(e, env):
        if e.iterator is None:
            return e.const
        return env.get(e.iterator, 0) + e.const

    def key(acc, env):
        return (acc.array, tuple(subval(s, env) for s in acc.subscripts))

    def rec(n, env) -> bool:
        if isinstance(n, Statement):
            out.append({
                "stmt_id": n.stmt_id,
                "ops": [op.kind for op in n.ops],
                "write": key(n.write, env),
                "reads": [key(r, env) for r in n.reads],
                "read_entry": [n.read_entry_index(j) for j in range(len(n.reads))],
                "accum_op": n.accum_op,
            })
            return len(out) <= limit
        lo = subval(n.lower, env)
        hi = subval(n.upper, env)
        for v in range(lo, hi):
            env2 = {**env, n.loop_id: v}
            for c in n.body:
                if not rec(c, env2):
                    return False
        return True

    nodes = node if isinstance(node, (list, tuple)) else [node]
    for n in nodes:
        if not rec(n, env):
            return None
    return out
