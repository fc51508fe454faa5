"""Static analysis over the kernel IR.

Covers loop trip counts, pairwise data dependences with carrier loops and
distances, reduction-loop detection, recurrence-limited initiation
intervals, array footprints under tiling, and live-in/live-out
classification.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Optional

from .ir import (
    AffineExpr,
    ArrayAccess,
    AstNode,
    KernelError,
    KernelIR,
    Loop,
    Statement,
)


# ---------------------------------------------------------------------------
# Trip counts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TripCount:
    tc_min: int
    tc_max: int
    tc_avg: Fraction

    @property
    def constant(self) -> bool:
        return self.tc_min == self.tc_max


def trip_counts(k: KernelIR) -> dict[str, TripCount]:
    """Min/max/average trip count per loop.

    Bounds may reference enclosing iterators (triangular nests); the
    extremes are taken over the enclosing iteration space and the average
    is exact (arithmetic mean over enclosing iterations).
    """
    result: dict[str, TripCount] = {}

    def bound_range(e: AffineExpr, env: dict[str, tuple[int, int]]) -> tuple[int, int]:
        if e.iterator is None:
            return e.const, e.const
        lo, hi = env[e.iterator]
        return lo + e.const, hi + e.const

    def rec(nodes, env: dict[str, tuple[int, int]]):
        for n in nodes:
            if not isinstance(n, Loop):
                continue
            lb_lo, lb_hi = bound_range(n.lower, env)
            ub_lo, ub_hi = bound_range(n.upper, env)
            tc_min = max(0, ub_lo - lb_hi)
            tc_max = max(0, ub_hi - lb_lo)
            if tc_max <= 0:
                raise KernelError(f"loop {n.loop_id}: trip count is never positive")
            if n.lower.iterator is None and n.upper.iterator is None:
                tc_avg = Fraction(tc_max)
            else:
                # One bound depends linearly on an enclosing iterator with
                # unit coefficient: tc varies linearly, so the mean is the
                # midpoint of the extremes.
                tc_avg = Fraction(tc_min + tc_max, 2)
            result[n.loop_id] = TripCount(tc_min, tc_max, tc_avg)
            # Iterator value range for inner bound evaluation.
            it_lo = lb_lo
            it_hi = ub_hi - 1
            rec(n.body, {**env, n.loop_id: (it_lo, it_hi)})

    rec(k.root, {})
    return result


# ---------------------------------------------------------------------------
# Dependences
# ---------------------------------------------------------------------------

DEP_KINDS = ("RaW", "WaR", "WaW")


@dataclass(frozen=True)
class Dependence:
    kind: str  # RaW | WaR | WaW
    src_stmt: str
    dst_stmt: str
    array: str
    carrier: Optional[str]  # loop id, or None for loop-independent
    distance: Optional[int]  # None when statically unknown (treated as 1)


def _common_loops(k: KernelIR, s1: str, s2: str) -> list[Loop]:
    l1 = k.enclosing_loops(s1)
    l2 = k.enclosing_loops(s2)
    common = []
    for a, b in zip(l1, l2):
        if a.loop_id != b.loop_id:
            break
        common.append(a)
    return common


def _stmt_order(k: KernelIR) -> dict[str, int]:
    return {s.stmt_id: i for i, s in enumerate(k.statements())}


def _delta_for_loop(
    loop_id: str, a: ArrayAccess, b: ArrayAccess
) -> tuple[str, Optional[int]]:
    """Constraint the dependence distance along `loop_id` must satisfy
    for iterations of a (source) and b (sink) to touch the same element.

    Returns ("fixed", d), ("free", None) when unconstrained, or
    ("unknown", None) when the subscript pattern is out of scope.
    """
    deltas: list[int] = []
    free = True
    for sa, sb in zip(a.subscripts, b.subscripts):
        uses_a = sa.iterator == loop_id
        uses_b = sb.iterator == loop_id
        if not uses_a and not uses_b:
            continue
        free = False
        if uses_a and uses_b:
            # sink iter + cb == src iter + ca  =>  d = sink - src = ca - cb
            deltas.append(sa.const - sb.const)
        else:
            return "unknown", None  # iterator vs constant/other-iterator mix
    if free:
        return "free", None
    if all(d == deltas[0] for d in deltas):
        return "fixed", deltas[0]
    return "none", None  # inconsistent: no dependence via this pair


def _subscripts_may_alias(a: ArrayAccess, b: ArrayAccess, common: set[str]) -> bool:
    """Constant-dimension feasibility filter for accesses to one array."""
    if len(a.subscripts) != len(b.subscripts):
        return True  # mismatched ranks: be conservative
    for sa, sb in zip(a.subscripts, b.subscripts):
        if sa.iterator is None and sb.iterator is None and sa.const != sb.const:
            return False
    return True


def dependences(k: KernelIR) -> list[Dependence]:
    """All pairwise RaW/WaR/WaW dependences with carrier and distance.

    Subscripts are single-iterator-plus-constant; for anything the
    distance test cannot resolve the dependence is kept with unknown
    distance (conservatively treated downstream as distance 1).
    """
    order = _stmt_order(k)
    stmts = k.statements()
    deps: list[Dependence] = []

    def pair_deps(src: Statement, dst: Statement, a: ArrayAccess, b: ArrayAccess, kind: str):
        common = _common_loops(k, src.stmt_id, dst.stmt_id)
        common_ids = {l.loop_id for l in common}
        if not _subscripts_may_alias(a, b, common_ids):
            return
        # Per-common-loop delta constraints, outermost first.
        kinds_dists = []
        unknown = False
        for l in common:
            how, d = _delta_for_loop(l.loop_id, a, b)
            if how == "none":
                return
            if how == "unknown":
                unknown = True
                kinds_dists.append(("free", None))
            else:
                kinds_dists.append((how, d))
        # A loop-independent dependence needs all deltas == 0 (or free) and
        # src textually before dst.
        src_first = order[src.stmt_id] < order[dst.stmt_id] or (
            src.stmt_id == dst.stmt_id and kind == "RaW"
        )
        zero_ok = all(how == "free" or d == 0 for how, d in kinds_dists)
        if zero_ok and order[src.stmt_id] < order[dst.stmt_id]:
            deps.append(
                Dependence(kind, src.stmt_id, dst.stmt_id, a.array, None,
                           0 if not unknown else None)
            )
        # Loop-carried: outermost common loop where a strictly positive
        # distance is possible, with zero/free at all outer levels.
        for i, l in enumerate(common):
            outer_zero = all(
                how == "free" or d == 0 for how, d in kinds_dists[:i]
            )
            if not outer_zero:
                break
            how, d = kinds_dists[i]
            if how == "free":
                deps.append(
                    Dependence(kind, src.stmt_id, dst.stmt_id, a.array,
                               l.loop_id, None if unknown else 1)
                )
            elif d is not None and d > 0:
                deps.append(
                    Dependence(kind, src.stmt_id, dst.stmt_id, a.array,
                               l.loop_id, d)
                )
            elif d is not None and d < 0 and src.stmt_id != dst.stmt_id:
                # Negative delta: dependence runs the other way; handled
                # when the pair is visited in the opposite order.
                pass
        # Same statement, all-fixed-zero self dependence is not a dependence.

    for s1 in stmts:
        for s2 in stmts:
            # RaW: s1 writes, s2 reads
            for r in s2.reads:
                if r.array == s1.write.array:
                    pair_deps(s1, s2, s1.write, r, "RaW")
            # WaW
            if s2.write.array == s1.write.array and (
                s1.stmt_id != s2.stmt_id
                or _self_carried_possible(k, s1)
            ):
                pair_deps(s1, s2, s1.write, s2.write, "WaW")
            # WaR: s1 reads, s2 writes
            for r in s1.reads:
                if r.array == s2.write.array:
                    pair_deps(s1, s2, r, s2.write, "WaR")
    # Deduplicate.
    seen = set()
    out = []
    for d in deps:
        key = (d.kind, d.src_stmt, d.dst_stmt, d.array, d.carrier, d.distance)
        if key not in seen:
            seen.add(key)
            out.append(d)
    return out


def _self_carried_possible(k: KernelIR, s: Statement) -> bool:
    return bool(k.enclosing_loops(s.stmt_id))


def statements_dependent(k: KernelIR, deps: list[Dependence],
                         g1: list[str], g2: list[str]) -> bool:
    """True if any dependence connects a statement in g1 with one in g2."""
    a, b = set(g1), set(g2)
    for d in deps:
        if (d.src_stmt in a and d.dst_stmt in b) or (
            d.src_stmt in b and d.dst_stmt in a
        ):
            return True
    return False


# ---------------------------------------------------------------------------
# Reduction loops
# ---------------------------------------------------------------------------

def _is_accum_dep(k: KernelIR, d: Dependence) -> bool:
    """Self accumulation: S reads and writes the same element each
    iteration through an associative op (value written at i is consumed
    at i+1)."""
    if d.src_stmt != d.dst_stmt:
        return False
    if d.distance not in (1, None):
        # Strided self-accumulation (distance > 1) still recirculates a
        # value; treat any positive fixed distance as accumulation.
        if d.distance is None or d.distance < 1:
            return False
    s = k.statement(d.src_stmt)
    if s.accum_op not in ("add", "mul"):
        return False
    return any(str(r) == str(s.write) for r in s.reads)


def reduction_loops(k: KernelIR, deps: Optional[list[Dependence]] = None) -> set[str]:
    """Loops whose every carried dependence is a self-accumulation.

    Such loops recirculate partial results and admit tree-rebalancing;
    they do not admit plain coarse-grained parallelization.
    """
    if deps is None:
        deps = dependences(k)
    carried: dict[str, list[Dependence]] = {}
    for d in deps:
        if d.carrier is not None:
            carried.setdefault(d.carrier, []).append(d)
    out = set()
    for l in k.loops():
        ds = carried.get(l.loop_id, [])
        if ds and all(_is_accum_dep(k, d) for d in ds):
            out.add(l.loop_id)
    return out


# ---------------------------------------------------------------------------
# Recurrence-constrained initiation interval
# ---------------------------------------------------------------------------

def min_ii(k: KernelIR, loop_id: str, op_latency: dict[str, int],
           deps: Optional[list[Dependence]] = None) -> int:
    """Smallest initiation interval the loop's recurrences permit.

    II >= max over carried dependence cycles of ceil(delay / distance),
    where delay is the operation latency along the recirculation path.
    Resource pressure never pushes the floor below 1.
    """
    if deps is None:
        deps = dependences(k)
    best = 1
    loop = k.loop(loop_id)
    inner_stmts = {s.stmt_id for s in k.statements_under(loop)}
    for d in deps:
        if d.carrier != loop_id or d.kind != "RaW":
            continue
        if d.src_stmt not in inner_stmts or d.dst_stmt not in inner_stmts:
            continue
        if d.src_stmt != d.dst_stmt:
            # Cross-statement recurrences: conservative single-op delay of
            # the consuming statement's chain from the read entry onward.
            dst = k.statement(d.dst_stmt)
            delay = _delay_from_read(dst, d.array, op_latency)
        else:
            s = k.statement(d.src_stmt)
            delay = _delay_from_read(s, d.array, op_latency)
        dist = d.distance if d.distance else 1
        best = max(best, math.ceil(delay / dist))
    return best


def _delay_from_read(s: Statement, array: str, op_latency: dict[str, int]) -> int:
    """Latency from where a read of `array` enters s's op chain to its end."""
    entry = None
    for i, r in enumerate(s.reads):
        if r.array == array:
            e = s.read_entry_index(i)
            if e is not None and (entry is None or e < entry):
                entry = e
    if entry is None:
        entry = 0
    return sum(op_latency[op.kind] for op in s.ops[entry:])


# ---------------------------------------------------------------------------
# Footprints and liveness
# ---------------------------------------------------------------------------

def _subscript_extent(e: AffineExpr, extents: dict[str, int]) -> int:
    if e.iterator is None:
        return 1
    return extents.get(e.iterator, 1)


def footprint_elements(k: KernelIR, array: str, at_loop: Optional[str],
                       tc: dict[str, TripCount],
                       tiles: Optional[dict[str, int]] = None) -> int:
    """Distinct elements of `array` touched per execution of `at_loop`
    (whole kernel when None).

    Iterators inside the cache point contribute their (possibly tiled)
    extent; iterators outside contribute a single value.  Per-dimension
    access ranges are merged by coordinate-compressed box union.
    """
    tiles = tiles or {}
    inside: set[str] = set()
    if at_loop is None:
        inside = {l.loop_id for l in k.loops()}
        stmts = k.statements()
    else:
        top = k.loop(at_loop)
        inside = {at_loop} | {l.loop_id for l in k.loops_under(at_loop)}
        stmts = k.statements_under(top)

    def iter_extent(it: str) -> int:
        if it not in inside:
            return 1
        t = tiles.get(it)
        full = tc[it].tc_max
        return min(t, full) if t else full

    boxes: list[tuple[tuple[int, int], ...]] = []
    rank = len(k.array(array).dims)
    for s in stmts:
        for acc in (s.write, *s.reads):
            if acc.array != array:
                continue
            box = []
            for e in acc.subscripts:
                if e.iterator is None:
                    box.append((e.const, e.const + 1))
                else:
                    ext = iter_extent(e.iterator)
                    box.append((e.const, e.const + ext))
            while len(box) < rank:
                box.append((0, 1))
            boxes.append(tuple(box))
    if not boxes:
        return 0
    return _box_union_volume(boxes)


def _box_union_volume(boxes: list[tuple[tuple[int, int], ...]]) -> int:
    rank = len(boxes[0])
    cuts = [sorted({b[d][0] for b in boxes} | {b[d][1] for b in boxes})
            for d in range(rank)]
    total = 0
    cells = [list(zip(c, c[1:])) for c in cuts]
    for cell in product(*cells):
        if any(
            all(b[d][0] <= cell[d][0] and cell[d][1] <= b[d][1] for d in range(rank))
            for b in boxes
        ):
            total += math.prod(hi - lo for lo, hi in cell)
    return total


@dataclass(frozen=True)
class Liveness:
    live_in: bool
    live_out: bool

    @property
    def transfer_count(self) -> int:
        return 2 if (self.live_in and self.live_out) else 1


def liveness(k: KernelIR, tc: dict[str, TripCount]) -> dict[str, Liveness]:
    """Whether each array carries data into / out of the kernel.

    An array is live-out if any statement writes it.  It is live-in if
    some read may see a value not produced by an earlier write in the
    kernel: a read box not contained in the union of write boxes that are
    guaranteed to execute first.
    """
    order = _stmt_order(k)
    out: dict[str, Liveness] = {}
    for a in k.arrays:
        writes = []
        reads = []
        for s in k.statements():
            if s.write.array == a.name:
                writes.append((order[s.stmt_id], s))
            for i, r in enumerate(s.reads):
                if r.array == a.name:
                    reads.append((order[s.stmt_id], s, r, i))
        live_out = bool(writes)
        live_in = False
        for ridx, s, r, i in reads:
            # Accumulation self-read of an element first zero-initialized
            # by an earlier write still needs that earlier write check.
            covered = False
            for widx, ws in writes:
                if widx > ridx or (widx == ridx):
                    # Same statement: the write happens after the read.
                    continue
                if _write_covers_read(k, ws, s, r, tc):
                    covered = True
                    break
            if not covered:
                live_in = True
                break
        out[a.name] = Liveness(live_in=live_in, live_out=live_out)
    return out


def _write_covers_read(k: KernelIR, wstmt: Statement, rstmt: Statement,
                       racc: ArrayAccess, tc: dict[str, TripCount]) -> bool:
    """True when every element racc may read was previously written by
    wstmt (textually earlier).  Uses per-dimension range containment plus
    an ordering check: either the write nest has fully completed before
    the read nest starts, or the two statements share their full common
    nest and use identical subscripts there (the write precedes the read
    in every shared iteration)."""
    wacc = wstmt.write
    if len(wacc.subscripts) != len(racc.subscripts):
        return False
    wloops = {l.loop_id for l in k.enclosing_loops(wstmt.stmt_id)}
    rloops = {l.loop_id for l in k.enclosing_loops(rstmt.stmt_id)}
    common = {l.loop_id for l in _common_loops(k, wstmt.stmt_id, rstmt.stmt_id)}

    def rng(e: AffineExpr, loops: set[str], exclude: set[str]) -> tuple[int, int]:
        if e.iterator is None or e.iterator in exclude:
            # Excluded iterators are "same value" dims handled separately.
            return (e.const, e.const)
        ext = tc[e.iterator].tc_max if e.iterator in loops else 1
        return (e.const, e.const + ext - 1)

    same_iteration_ok = True
    for we, re_ in zip(wacc.subscripts, racc.subscripts):
        if we.iterator is not None and we.iterator == re_.iterator and we.iterator in common:
            if we.const != re_.const:
                same_iteration_ok = False
            continue  # matched on the shared iterator: covered pointwise
        wlo, whi = rng(we, wloops, set())
        rlo, rhi = rng(re_, rloops, set())
        if not (wlo <= rlo and rhi <= whi):
            return False
        # Cross-iterator coverage requires the write nest to have finished:
        # only sound when the statements share no loop that the write's
        # coverage depends on being complete.
        if common and we.iterator is not None and we.iterator not in common:
            pass  # inner non-shared write loop completes within each shared iter
        elif common and we.iterator is not None and we.iterator in common:
            return False  # write sweeps this dim across shared iters: not done yet
    return same_iteration_ok
