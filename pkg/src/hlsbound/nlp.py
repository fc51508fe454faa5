"""Pragma-insertion optimization problem.

Variables are per-loop pipeline/II/unroll/tile choices plus per-array
cache placements; the objective is the analytic latency floor.  The
solver enumerates pipeline placements, then branches on unroll factors,
tiles and cache points, pruning with an optimistic completion bound that
never exceeds the objective of any completion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

from .ir import KernelError, KernelIR, Loop, PropertyVector, Statement
from .analysis import (
    dependences,
    footprint_elements,
    liveness,
    min_ii,
    reduction_loops,
    trip_counts,
)
from .config import Configuration, default_config
from .latency import (
    apply_i,
    lat_full_unroll,
    lat_reduction_unroll,
    program_bound,
    statement_latency,
)
from .opgraph import unroll_instances
from .resources import (
    CalibrationTable,
    dependence_components,
    dsp_lower_bound,
    onchip_usage,
    partition_factors,
)


def divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


@dataclass(frozen=True)
class Violation:
    tag: str
    message: str


@dataclass(frozen=True)
class CacheSlot:
    """One cache decision: the array and the ancestor chain of loops that
    enclose all of its accesses within one top-level nest.  The choice is
    a loop from the chain or None (transfer at the top level)."""

    array: str
    nest: str  # loop id of the top-level nest (or statement id at root)
    chain: tuple[str, ...]


@dataclass
class NlpProblem:
    kernel: KernelIR
    calib: CalibrationTable
    mode: str = "coarse"  # "coarse" (+fine) or "fine" only
    max_partition: Optional[int] = None  # None: device default
    resources: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("coarse", "fine"):
            raise KernelError(f"unknown parallelism mode {self.mode!r}")
        k = self.kernel
        self.tc = trip_counts(k)
        self.deps = dependences(k)
        self.reds = reduction_loops(k, self.deps)
        self.min_ii = {
            l.loop_id: min_ii(k, l.loop_id, self.calib.op_latency, self.deps)
            for l in k.loops()
        }
        self.dist_cap = self._distance_caps()
        self.slots = self._cache_slots()
        self._sl_cache: dict = {}
        self._fp_cache: dict = {}

    # -- derived structure ---------------------------------------------

    def _distance_caps(self) -> dict[str, Optional[int]]:
        caps: dict[str, Optional[int]] = {}
        for l in self.kernel.loops():
            dists = []
            for d in self.deps:
                if d.carrier != l.loop_id:
                    continue
                if _is_accum_self(self.kernel, d):
                    continue
                dists.append(d.distance if d.distance else 1)
            caps[l.loop_id] = min(dists) if dists else None
        return caps

    def _cache_slots(self) -> list[CacheSlot]:
        k = self.kernel
        slots = []
        for a in k.arrays:
            for top in k.root:
                stmts = [s for s in k.statements_under(top)
                         if any(acc.array == a.name
                                for acc in (s.write, *s.reads))]
                if not stmts:
                    continue
                if isinstance(top, Statement):
                    slots.append(CacheSlot(a.name, top.stmt_id, ()))
                    continue
                # Loops in this nest enclosing every access to the array.
                chain = []
                for l in [top, *k.loops_under(top.loop_id)]:
                    under = {s.stmt_id for s in k.statements_under(l)}
                    if all(s.stmt_id in under for s in stmts):
                        chain.append(l.loop_id)
                slots.append(CacheSlot(a.name, top.loop_id, tuple(chain)))
        return slots

    def effective_max_partition(self) -> float:
        if self.max_partition is None:
            return float(self.calib.max_partition)
        return float(self.max_partition)

    def footprint(self, array: str, pt: Optional[str],
                  tiles: dict[str, int]) -> int:
        """Memoized footprint; the cache key keeps only tile choices that
        can affect the result (loops inside the cache point)."""
        if pt is None:
            key = (array, None, ())
        else:
            inside = {pt} | {l.loop_id for l in self.kernel.loops_under(pt)}
            key = (array, pt, tuple(sorted(
                (l, t) for l, t in tiles.items() if t > 1 and l in inside)))
        if key not in self._fp_cache:
            self._fp_cache[key] = footprint_elements(
                self.kernel, array, pt, self.tc, dict(key[2]))
        return self._fp_cache[key]

    # -- pipeline placements ---------------------------------------------

    def pipelineable(self, loop_id: str) -> bool:
        inner = self.kernel.loops_under(loop_id)
        return all(self.tc[l.loop_id].constant for l in inner)

    def placements(self) -> list[tuple[str, ...]]:
        """All sets of loops pipelined together: at most one per nesting
        path, each with constant-trip-count inner loops."""
        k = self.kernel
        eligible = [l.loop_id for l in k.loops() if self.pipelineable(l.loop_id)]
        ancestors = {
            l.loop_id: {a.loop_id for a in _ancestors(k, l.loop_id)}
            for l in k.loops()
        }
        out: list[tuple[str, ...]] = [()]

        def compatible(sel: tuple[str, ...], cand: str) -> bool:
            for s in sel:
                if s in ancestors[cand] or cand in ancestors[s]:
                    return False
            return True

        def rec(idx: int, sel: tuple[str, ...]):
            for i in range(idx, len(eligible)):
                cand = eligible[i]
                if compatible(sel, cand):
                    out.append(sel + (cand,))
                    rec(i + 1, sel + (cand,))

        rec(0, ())
        return out

    def below_pipeline(self, placement: tuple[str, ...]) -> set[str]:
        below: set[str] = set()
        for p in placement:
            below |= {l.loop_id for l in self.kernel.loops_under(p)}
        return below

    # -- variable domains --------------------------------------------------

    def uf_domain(self, loop_id: str, placement: tuple[str, ...]) -> list[int]:
        t = self.tc[loop_id]
        below = self.below_pipeline(placement)
        if loop_id in below:
            return [t.tc_max] if t.constant else [1]
        if not t.constant:
            return [1]
        dom = divisors(t.tc_max)
        cap = self.dist_cap[loop_id]
        if cap is not None:
            dom = [u for u in dom if u <= cap]
        if self.mode == "fine" and loop_id not in placement:
            dom = [1]
        return dom

    def tile_domain(self, loop_id: str, placement: tuple[str, ...]) -> list[int]:
        t = self.tc[loop_id]
        if loop_id in self.below_pipeline(placement) or not t.constant:
            return [1]
        return divisors(t.tc_max)

    def slot_domain(self, slot: CacheSlot,
                    placement: tuple[str, ...]) -> list[Optional[str]]:
        below = self.below_pipeline(placement)
        pts: list[Optional[str]] = [None]
        pts += [c for c in slot.chain if c not in below]
        return pts

    # -- pieces shared by solver and exporter ------------------------------

    def straight_line(self, loop_id: str, uf: int) -> int:
        key = (loop_id, uf)
        if key not in self._sl_cache:
            loop = self.kernel.loop(loop_id)
            self._sl_cache[key] = lat_full_unroll(
                self.kernel, [loop], self.tc, self.calib, self.resources,
                replicate_loop=(loop_id, uf),
                tree_reduction=self.kernel.options.tree_reduction_enabled,
            )
        return self._sl_cache[key]


def _ancestors(k: KernelIR, loop_id: str) -> list[Loop]:
    out = []
    cur = k.parent_of(loop_id)
    while cur is not None:
        out.append(cur)
        cur = k.parent_of(cur.loop_id)
    return out


def _is_accum_self(k: KernelIR, d) -> bool:
    if d.src_stmt != d.dst_stmt:
        return False
    s = k.statement(d.src_stmt)
    return s.accum_op in ("add", "mul") and any(
        str(r) == str(s.write) for r in s.reads)


def build_problem(k: KernelIR, calib: Optional[CalibrationTable] = None,
                  mode: str = "coarse",
                  max_partition: Optional[int] = None,
                  resources: Optional[dict] = None) -> NlpProblem:
    return NlpProblem(
        kernel=k,
        calib=calib or CalibrationTable(),
        mode=mode,
        max_partition=max_partition,
        resources=dict(resources or {}),
    )


# ---------------------------------------------------------------------------
# Feasibility checking
# ---------------------------------------------------------------------------

def check_config(problem: NlpProblem, config: Configuration) -> list[Violation]:
    """All constraint violations of a configuration (empty when valid)."""
    k = problem.kernel
    v: list[Violation] = []
    pipelined = [p.loop_id for p in config.pvs if p.ispipelined]
    below: set[str] = set()
    for p in pipelined:
        below |= {l.loop_id for l in k.loops_under(p)}

    for pv in config.pvs:
        t = problem.tc[pv.loop_id]
        if not (1 <= pv.uf <= t.tc_max):
            v.append(Violation("eq1", f"{pv.loop_id}: uf {pv.uf} outside [1, {t.tc_max}]"))
        if not (1 <= pv.tile <= t.tc_max):
            v.append(Violation("eq2", f"{pv.loop_id}: tile {pv.tile} outside [1, {t.tc_max}]"))
        if pv.ispipelined:
            need = problem.min_ii[pv.loop_id]
            if pv.ii < need:
                v.append(Violation("eq3", f"{pv.loop_id}: II {pv.ii} below recurrence floor {need}"))
            if not problem.pipelineable(pv.loop_id):
                v.append(Violation("eq3", f"{pv.loop_id}: pipelining needs constant inner trip counts"))
        if pv.loop_id in below:
            want = t.tc_max if t.constant else None
            if want is None or pv.uf != want:
                v.append(Violation("eq5", f"{pv.loop_id}: loops inside a pipeline must fully unroll (uf={pv.uf}, tc={t.tc_max})"))
        if t.constant and t.tc_max % pv.uf:
            v.append(Violation("eq12", f"{pv.loop_id}: uf {pv.uf} does not divide trip count {t.tc_max}"))
        if not t.constant and pv.uf != 1:
            v.append(Violation("eq12", f"{pv.loop_id}: variable trip count requires uf 1"))
        if t.constant and t.tc_max % pv.tile:
            v.append(Violation("eq13", f"{pv.loop_id}: tile {pv.tile} does not divide trip count {t.tc_max}"))
        cap = problem.dist_cap[pv.loop_id]
        if cap is not None and pv.uf > cap:
            v.append(Violation("eq8", f"{pv.loop_id}: uf {pv.uf} exceeds carried-dependence distance {cap}"))
        if problem.mode == "fine" and pv.uf > 1 and not pv.ispipelined \
                and pv.loop_id not in below:
            v.append(Violation("eq14", f"{pv.loop_id}: fine mode forbids coarse unrolling"))

    # One pipeline per nesting path.
    for p in pipelined:
        inner = {l.loop_id for l in k.loops_under(p)}
        for q in pipelined:
            if q != p and q in inner:
                v.append(Violation("eq6", f"nested pipelines {p} and {q}"))

    # Cache placement legality.
    slot_chains = {(s.array, s.nest): set(s.chain) for s in problem.slots}
    legal_points = {a.name: set() for a in k.arrays}
    for s in problem.slots:
        legal_points[s.array] |= set(s.chain)
    for a in k.arrays:
        for pt in config.cache_points(a.name):
            if pt is None:
                continue
            if pt not in legal_points.get(a.name, set()):
                v.append(Violation("eq4", f"{a.name}: cache point {pt} does not enclose its accesses"))
            elif pt in below:
                v.append(Violation("eq7", f"{a.name}: cache point {pt} sits inside a pipeline"))

    # Partition pressure.
    limit = problem.effective_max_partition()
    for a in k.arrays:
        factors = partition_factors(k, a.name, config)
        product = math.prod(factors.values())
        if product > limit:
            v.append(Violation("eq9", f"{a.name}: partition factor {product} exceeds limit {limit:g}"))

    # Device budgets.
    dsp = dsp_lower_bound(k, config, problem.calib, problem.deps)
    if dsp > problem.calib.dsp_budget:
        v.append(Violation("dsp_budget", f"needs {dsp:.0f} DSP units, budget {problem.calib.dsp_budget}"))
    bits = onchip_usage(k, config, problem.tc, footprint_elements)
    if bits > problem.calib.bram_bits:
        v.append(Violation("bram_budget", f"buffers {bits} bits on chip, budget {problem.calib.bram_bits}"))
    return v


def objective(problem: NlpProblem, config: Configuration) -> int:
    """Latency floor of a configuration; the quantity the solver minimizes."""
    return program_bound(
        problem.kernel, config, problem.calib,
        resources=problem.resources, deps=problem.deps, tc=problem.tc,
    ).total


# ---------------------------------------------------------------------------
# Enumeration and solving
# ---------------------------------------------------------------------------

def enumerate_configs(problem: NlpProblem) -> Iterator[Configuration]:
    """Canonical candidate stream: every pipeline placement crossed with
    unroll, tile and cache choices.  Tiles on loops not covered by any
    chosen cache point stay 1 (they cannot change the objective).
    Budget constraints are not filtered here."""
    k = problem.kernel
    loops = [l.loop_id for l in k.loops()]
    for placement in problem.placements():
        uf_doms = [problem.uf_domain(l, placement) for l in loops]
        for ufs in _product(uf_doms):
            for config in _cache_tile_choices(problem, placement,
                                              dict(zip(loops, ufs))):
                yield config


def _product(domains):
    if not domains:
        yield ()
        return
    for head in domains[0]:
        for rest in _product(domains[1:]):
            yield (head,) + rest


def _cache_tile_choices(problem: NlpProblem, placement, ufs) -> Iterator[Configuration]:
    k = problem.kernel
    slot_doms = [problem.slot_domain(s, placement) for s in problem.slots]
    for points in _product(slot_doms):
        covered: set[str] = set()
        for pt in points:
            if pt is not None:
                covered.add(pt)
                covered |= {l.loop_id for l in k.loops_under(pt)}
        tile_loops = sorted(covered)
        tile_doms = [problem.tile_domain(l, placement) for l in tile_loops]
        for tiles in _product(tile_doms):
            tile_map = dict(zip(tile_loops, tiles))
            yield _make_config(problem, placement, ufs, tile_map, points)


def _make_config(problem: NlpProblem, placement, ufs, tiles, points) -> Configuration:
    pvs = []
    for l in problem.kernel.loops():
        lid = l.loop_id
        t = problem.tc[lid]
        pvs.append(PropertyVector(
            loop_id=lid,
            ispipelined=lid in placement,
            ii=problem.min_ii[lid] if lid in placement else 1,
            uf=ufs[lid],
            tile=tiles.get(lid, 1),
            tc_min=t.tc_min, tc_max=t.tc_max, tc_avg=t.tc_avg,
        ))
    caches: dict[str, list] = {}
    for slot, pt in zip(problem.slots, points):
        if pt is not None:
            caches.setdefault(slot.array, []).append(pt)
    return Configuration(
        pvs=tuple(pvs),
        caches=tuple(sorted((a, tuple(pts)) for a, pts in caches.items())),
    )


@dataclass
class Solution:
    config: Configuration
    objective: int
    explored: int = 0
    pruned: int = 0

    def as_dict(self) -> dict:
        return {
            "objective": self.objective,
            "config": self.config.as_dict(),
            "explored": self.explored,
            "pruned": self.pruned,
        }


def count_space(problem: NlpProblem) -> int:
    """Size of the raw candidate grid (before budget filtering): every
    placement crossed with full unroll, tile and cache-point domains."""
    total = 0
    loops = [l.loop_id for l in problem.kernel.loops()]
    for placement in problem.placements():
        n = 1
        for l in loops:
            n *= len(problem.uf_domain(l, placement))
            n *= len(problem.tile_domain(l, placement))
        for s in problem.slots:
            n *= len(problem.slot_domain(s, placement))
        total += n
    return total


def solve(problem: NlpProblem) -> Optional[Solution]:
    """Exact minimizer of the latency floor over valid configurations.

    Branch and bound: loops are assigned in nesting order; a partial
    assignment is discarded when an optimistic completion (each open loop
    takes its locally best value, communication at its cheapest) already
    meets the incumbent.  Ties keep the lexicographically smallest
    configuration key, making the result deterministic.
    """
    k = problem.kernel
    loops = [l.loop_id for l in k.loops()]
    best: Optional[Solution] = None
    best_key = None
    stats = {"explored": 0, "pruned": 0}

    for placement in problem.placements():
        comm_floor = _comm_floor(problem)
        uf_doms = {l: problem.uf_domain(l, placement) for l in loops}

        def comp_bound(assigned: dict[str, int]) -> int:
            return _optimistic_computation(problem, placement, assigned, uf_doms)

        def rec(idx: int, assigned: dict[str, int]):
            nonlocal best, best_key
            if best is not None:
                lb = comp_bound(assigned) + comm_floor
                if lb > best.objective:
                    stats["pruned"] += 1
                    return
            if idx == len(loops):
                _close_leaf(assigned)
                return
            lid = loops[idx]
            for uf in uf_doms[lid]:
                rec(idx + 1, {**assigned, lid: uf})

        def _close_leaf(ufs: dict[str, int]):
            nonlocal best, best_key
            # Computation and every uf/placement-level constraint are
            # independent of cache and tile choices: settle them once.
            rep = _make_config(problem, placement, ufs,
                               {}, tuple(None for _ in problem.slots))
            if check_config(problem, rep):
                stats["explored"] += 1
                return
            comp = program_bound(
                k, rep, problem.calib, resources=problem.resources,
                deps=problem.deps, tc=problem.tc).computation
            live = _liveness(problem)
            slot_doms = [problem.slot_domain(s, placement)
                         for s in problem.slots]
            for points in _product(slot_doms):
                covered: set[str] = set()
                for pt in points:
                    if pt is not None:
                        covered.add(pt)
                        covered |= {l.loop_id
                                    for l in k.loops_under(pt)}
                tile_loops = sorted(covered)
                tile_doms = [problem.tile_domain(l, placement)
                             for l in tile_loops]
                for tiles in _product(tile_doms):
                    stats["explored"] += 1
                    tile_map = dict(zip(tile_loops, tiles))
                    comm, bits = _fast_comm_and_bits(
                        problem, points, tile_map, live)
                    if bits > problem.calib.bram_bits:
                        continue
                    val = comp + comm
                    if best is not None and val > best.objective:
                        continue
                    config = _make_config(problem, placement, ufs,
                                          tile_map, points)
                    key = (val, config.key())
                    if best is None or key < (best.objective, best_key):
                        best = Solution(config=config, objective=val)
                        best_key = config.key()

        rec(0, {})

    if best is not None:
        best.explored = stats["explored"]
        best.pruned = stats["pruned"]
    return best


def _liveness(problem: NlpProblem):
    if not hasattr(problem, "_live"):
        problem._live = liveness(problem.kernel, problem.tc)
    return problem._live


def _fast_comm_and_bits(problem: NlpProblem, points, tile_map, live):
    """(communication, on-chip bits) of one cache/tile assignment.

    Mirrors the full memory model but works from raw slot choices with
    memoized footprints, so leaf enumeration never builds configurations
    or recomputes box unions."""
    calib = problem.calib
    k = problem.kernel
    chosen: dict[str, list] = {}
    for slot, pt in zip(problem.slots, points):
        if pt is not None:
            chosen.setdefault(slot.array, []).append(pt)
    levels: dict[Optional[str], int] = {}
    bits = 0
    for a in k.arrays:
        pts = chosen.get(a.name) or [None]
        for pt in pts:
            fp = problem.footprint(a.name, pt, tile_map)
            beats = math.ceil(fp * a.element_bits / calib.port_bits)
            term = live[a.name].transfer_count * beats
            levels[pt] = max(levels.get(pt, 0), term)
            if pt is not None:
                bits += fp * a.element_bits
    return sum(levels.values()), bits


def _comm_floor(problem: NlpProblem) -> int:
    """Cheapest possible communication: every array still moves at least
    one port beat per transfer direction."""
    live = _liveness(problem)
    return max(
        (live[a.name].transfer_count for a in problem.kernel.arrays),
        default=0,
    )


def _optimistic_computation(problem: NlpProblem, placement,
                            assigned: dict[str, int],
                            uf_doms: dict[str, list[int]]) -> int:
    """Computation floor over all completions of a partial uf assignment.

    Recursion mirrors the latency model; an unassigned loop takes the
    domain value minimizing its local contribution, which never exceeds
    any consistent completion because every local formula is monotone in
    its body latency.
    """
    k = problem.kernel
    calib = problem.calib
    tree_mode = k.options.tree_reduction_enabled

    def node_lb(node) -> int:
        if isinstance(node, Statement):
            return statement_latency(node, calib)
        lid = node.loop_id
        t = problem.tc[lid]
        choices = [assigned[lid]] if lid in assigned else uf_doms[lid]
        if lid in placement:
            ii = problem.min_ii[lid]
            vals = []
            for uf in choices:
                sl = problem.straight_line(lid, uf)
                factor = max(0, math.floor(ii * (t.tc_avg / uf - 1)))
                vals.append(factor + sl)
            return min(vals)
        body = _compose_lb(node.body)
        if lid in problem.reds:
            if tree_mode:
                vals = []
                for uf in choices:
                    if uf > 1:
                        combine = max(
                            (calib.latency(s.accum_op)
                             for s in k.statements_under(node) if s.accum_op),
                            default=body)
                        vals.append(lat_reduction_unroll(
                            math.floor(t.tc_avg), uf, combine))
                    else:
                        vals.append(math.floor(t.tc_avg * body))
                return min(vals)
            return math.floor(t.tc_avg * body)
        return min(math.floor(t.tc_avg / uf) * body for uf in choices)

    def _compose_lb(children) -> int:
        comps = dependence_components(k, list(children), problem.deps)
        return max((sum(node_lb(c) for c in comp) for comp in comps), default=0)

    return _compose_lb(k.root)
