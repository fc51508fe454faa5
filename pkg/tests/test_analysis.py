"""Dependence, trip-count, recurrence and footprint analysis tests.

Frozen values here were cross-checked against exhaustive instance-level
simulation of the small kernels (see test_dependences_complete_*).
"""
import random
from fractions import Fraction
from itertools import product

import pytest

from hlsbound import parse_kernel
from hlsbound.analysis import (
    Liveness,
    dependences,
    footprint_elements,
    liveness,
    min_ii,
    reduction_loops,
    statements_dependent,
    trip_counts,
)
from hlsbound.resources import CalibrationTable

from conftest import atax_kernel, bicg_kernel, gen_kernel, mv_kernel, stencil_kernel


# ---------------------------------------------------------------------------
# Trip counts
# ---------------------------------------------------------------------------

def test_trip_counts_rectangular(mv4):
    tc = trip_counts(mv4)
    for lid in ("i", "j"):
        assert (tc[lid].tc_min, tc[lid].tc_max) == (4, 4)
        assert tc[lid].tc_avg == 4
        assert tc[lid].constant


def test_trip_counts_triangular():
    k = parse_kernel("""kernel tri { array y[8][8]: f32 out;
      loop i 0 8 { loop j i 8 { S0: y[i][j] = 1; } } }""")
    tc = trip_counts(k)
    assert (tc["j"].tc_min, tc["j"].tc_max) == (1, 8)
    # Exact mean of 8,7,...,1.
    assert tc["j"].tc_avg == Fraction(sum(range(1, 9)), 8)
    assert not tc["j"].constant


# ---------------------------------------------------------------------------
# Dependences
# ---------------------------------------------------------------------------

def test_reduction_self_dependence(mv4):
    deps = dependences(mv4)
    raw = [d for d in deps
           if d.kind == "RaW" and d.src_stmt == d.dst_stmt == "S0"
           and d.array == "y"]
    assert any(d.carrier == "j" and d.distance == 1 for d in raw)


def test_strided_recurrence_distance():
    k = parse_kernel(stencil_kernel(16))
    d = next(d for d in dependences(k) if d.kind == "RaW" and d.array == "y")
    assert (d.carrier, d.distance) == ("j", 2)


def test_bicg_cross_statement_dependences():
    k = parse_kernel(bicg_kernel(4, 4))
    deps = dependences(k)
    # s initialized by S0, accumulated by S2: a RaW into S2 exists.
    assert any(d.kind == "RaW" and d.src_stmt == "S0" and d.dst_stmt == "S2"
               and d.array == "s" for d in deps)
    # S2 and S3 touch disjoint arrays apart from shared reads of A.
    assert not statements_dependent(k, deps, ["S2"], ["S3"])
    assert statements_dependent(k, deps, ["S1"], ["S3"])


def _simulate_instance_deps(k):
    """Observed (kind, src, dst, array) tuples from running every statement
    instance in program order with last-writer / reader tracking."""
    tc = trip_counts(k)

    instances = []  # (stmt, env) in execution order

    def rec(nodes, env):
        for n in nodes:
            if hasattr(n, "loop_id"):
                lo = n.lower.const + (env.get(n.lower.iterator, 0)
                                      if n.lower.iterator else 0)
                hi = n.upper.const + (env.get(n.upper.iterator, 0)
                                      if n.upper.iterator else 0)
                for v in range(lo, hi):
                    rec(n.body, {**env, n.loop_id: v})
            else:
                instances.append((n, dict(env)))

    rec(k.root, {})

    def addr(acc, env):
        return (acc.array, tuple(s.const + (env.get(s.iterator, 0)
                                            if s.iterator else 0)
                                 for s in acc.subscripts))

    last_write = {}
    readers = {}
    observed = set()
    for stmt, env in instances:
        for r in stmt.reads:
            a = addr(r, env)
            if a in last_write and last_write[a] != (stmt.stmt_id, env):
                observed.add(("RaW", last_write[a][0], stmt.stmt_id, a[0]))
            readers.setdefault(a, []).append((stmt.stmt_id, env))
        a = addr(stmt.write, env)
        for rsid, renv in readers.get(a, []):
            if (rsid, renv) != (stmt.stmt_id, env):
                observed.add(("WaR", rsid, stmt.stmt_id, a[0]))
        if a in last_write and last_write[a] != (stmt.stmt_id, env):
            observed.add(("WaW", last_write[a][0], stmt.stmt_id, a[0]))
        last_write[a] = (stmt.stmt_id, env)
        readers[a] = []
    return observed


@pytest.mark.parametrize("seed", range(12))
def test_dependences_complete_random(seed):
    """Every dependence observable in an exhaustive execution trace is
    reported by the static analysis (soundness of the dependence set)."""
    rnd = random.Random(seed)
    k = parse_kernel(gen_kernel(rnd))
    reported = {(d.kind, d.src_stmt, d.dst_stmt, d.array)
                for d in dependences(k)}
    # Self RaW at distance d also implies the WaR/WaW pair is reported or
    # subsumed; require exact kind coverage regardless.
    for obs in _simulate_instance_deps(k):
        assert obs in reported, f"missed dependence {obs} in:\n{k.name}"


def test_dependences_complete_stencil():
    k = parse_kernel(stencil_kernel(8))
    reported = {(d.kind, d.src_stmt, d.dst_stmt, d.array)
                for d in dependences(k)}
    for obs in _simulate_instance_deps(k):
        assert obs in reported


# ---------------------------------------------------------------------------
# Reduction loops and recurrence-limited II
# ---------------------------------------------------------------------------

def test_reduction_loops_matvec(mv4):
    assert reduction_loops(mv4) == {"j"}


def test_reduction_loops_atax():
    k = parse_kernel(atax_kernel(6, 4))
    red = reduction_loops(k)
    assert "j1" in red       # t[i] += ... carried by j1
    assert "i" in red        # y accumulation across i is self-accumulation
    assert "i0" not in red
    assert "j2" not in red   # y[j2] carried by i, not j2


def test_reduction_loops_bicg():
    k = parse_kernel(bicg_kernel(4, 4))
    # j accumulates both s and q; i also only carries the s[j] += ...
    # self-accumulation (q writes are disjoint across i).
    assert reduction_loops(k) == {"i", "j"}


def test_min_ii_strided_stencil(calib):
    # y[j] = y[j-2] + c[j]: delay L(add) = 5 over distance 2 -> ceil(5/2) = 3.
    k = parse_kernel(stencil_kernel(16))
    assert min_ii(k, "j", calib.op_latency) == 3


def test_min_ii_reduction(calib, mv4):
    # Accumulation recirculates at distance 1 -> II = L(add) = 5.
    assert min_ii(mv4, "j", calib.op_latency) == 5


def test_min_ii_independent(calib):
    k = parse_kernel("""kernel p { array a[8]: f32 in; array c[8]: f32 out;
      loop i 0 8 { S0: c[i] = a[i] * 2; } }""")
    assert min_ii(k, "i", calib.op_latency) == 1


def test_min_ii_scales_with_latency(mv4):
    assert min_ii(mv4, "j", {"add": 9, "sub": 9, "mul": 4, "div": 15}) == 9


# ---------------------------------------------------------------------------
# Footprints
# ---------------------------------------------------------------------------

def test_footprint_whole_kernel(mv8):
    tc = trip_counts(mv8)
    assert footprint_elements(mv8, "A", None, tc) == 64
    assert footprint_elements(mv8, "x", None, tc) == 8
    assert footprint_elements(mv8, "y", None, tc) == 8


def test_footprint_at_loop(mv8):
    tc = trip_counts(mv8)
    # Inside i, one row of A and all of x are touched per iteration.
    assert footprint_elements(mv8, "A", "i", tc) == 64
    assert footprint_elements(mv8, "A", "j", tc) == 8
    assert footprint_elements(mv8, "x", "j", tc) == 8
    assert footprint_elements(mv8, "y", "j", tc) == 1


def test_footprint_tiled(mv8):
    tc = trip_counts(mv8)
    assert footprint_elements(mv8, "A", "j", tc, tiles={"j": 2}) == 2
    assert footprint_elements(mv8, "x", "j", tc, tiles={"j": 4}) == 4


def test_footprint_overlapping_boxes():
    # y[j] and y[j-2] over j in [2,10): union [0,10) = 10 elements, not 16.
    k = parse_kernel(stencil_kernel(8))
    tc = trip_counts(k)
    assert footprint_elements(k, "y", None, tc) == 10


def test_footprint_matches_enumeration():
    for seed in range(8):
        k = parse_kernel(gen_kernel(random.Random(seed + 100)))
        tc = trip_counts(k)
        for arr in k.arrays:
            touched = set()

            def rec(nodes, env):
                for n in nodes:
                    if hasattr(n, "loop_id"):
                        lo = n.lower.const + (env.get(n.lower.iterator, 0)
                                              if n.lower.iterator else 0)
                        hi = n.upper.const + (env.get(n.upper.iterator, 0)
                                              if n.upper.iterator else 0)
                        for v in range(lo, hi):
                            rec(n.body, {**env, n.loop_id: v})
                    else:
                        for acc in (n.write, *n.reads):
                            if acc.array == arr.name:
                                touched.add(tuple(
                                    s.const + (env.get(s.iterator, 0)
                                               if s.iterator else 0)
                                    for s in acc.subscripts))
            rec(k.root, {})
            if touched:
                assert footprint_elements(k, arr.name, None, tc) == len(touched)


# ---------------------------------------------------------------------------
# Liveness
# ---------------------------------------------------------------------------

def test_liveness_matvec(mv4):
    lv = liveness(mv4, trip_counts(mv4))
    assert lv["A"] == Liveness(live_in=True, live_out=False)
    assert lv["x"] == Liveness(live_in=True, live_out=False)
    assert lv["y"] == Liveness(live_in=True, live_out=True)  # += reads y
    assert lv["y"].transfer_count == 2
    assert lv["A"].transfer_count == 1


def test_liveness_initialized_accumulator():
    # t is zero-initialized before accumulation: not live-in.
    k = parse_kernel(atax_kernel(4, 4))
    lv = liveness(k, trip_counts(k))
    assert lv["t"] == Liveness(live_in=False, live_out=True)
    assert lv["y"] == Liveness(live_in=False, live_out=True)
    assert lv["A"] == Liveness(live_in=True, live_out=False)
