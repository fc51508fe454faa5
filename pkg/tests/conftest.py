"""Shared kernels and random generators for the test suite."""
from __future__ import annotations

import random

import pytest

from hlsbound import CalibrationTable, parse_kernel
from hlsbound.nlp import _make_config, build_problem


def mv_kernel(n: int, tree: bool = True) -> str:
    opt = "option tree_reduction on;" if tree else ""
    return f"""kernel mv{n} {{
  array A[{n}][{n}]: f32 in; array x[{n}]: f32 in; array y[{n}]: f32 inout;
  {opt}
  loop i 0 {n} {{ loop j 0 {n} {{ S0: y[i] += A[i][j] * x[j]; }} }} }}"""


def bicg_kernel(n: int, m: int, tree: bool = True) -> str:
    opt = "option tree_reduction on;" if tree else ""
    return f"""kernel bicg {{
  array A[{m}][{n}]: f32 in; array p[{n}]: f32 in; array r[{m}]: f32 in;
  array s[{n}]: f32 inout; array q[{m}]: f32 inout;
  {opt}
  loop i1 0 {n} {{ S0: s[i1] = 0; }}
  loop i 0 {m} {{
    S1: q[i] = 0;
    loop j 0 {n} {{
      S2: s[j] += r[i] * A[i][j];
      S3: q[i] += A[i][j] * p[j];
    }}
  }} }}"""


def atax_kernel(n: int, m: int, tree: bool = True) -> str:
    opt = "option tree_reduction on;" if tree else ""
    return f"""kernel atax {{
  array A[{m}][{n}]: f32 in; array x[{n}]: f32 in;
  array y[{n}]: f32 inout; array t[{m}]: f32 inout;
  {opt}
  loop i0 0 {n} {{ S0: y[i0] = 0; }}
  loop i 0 {m} {{
    S1: t[i] = 0;
    loop j1 0 {n} {{ S2: t[i] += A[i][j1] * x[j1]; }}
    loop j2 0 {n} {{ S3: y[j2] += A[i][j2] * t[i]; }}
  }} }}"""


def mm_kernel(n1: int, n2: int, n3: int, tree: bool = True) -> str:
    opt = "option tree_reduction on;" if tree else ""
    return f"""kernel mm {{
  array A[{n1}][{n2}]: f32 in; array B[{n2}][{n3}]: f32 in;
  array C[{n1}][{n3}]: f32 inout;
  {opt}
  loop i 0 {n1} {{ loop j 0 {n3} {{ loop kk 0 {n2} {{
    S0: C[i][j] += A[i][kk] * B[kk][j]; }} }} }} }}"""


def stencil_kernel(n: int) -> str:
    return f"""kernel stencil {{
  array y[{n + 4}]: f32 inout; array c[{n + 4}]: f32 in;
  loop j 2 {n + 2} {{ S0: y[j] = y[j-2] + c[j]; }} }}"""


def elementwise_kernel(n: int) -> str:
    return f"""kernel ew {{
  array a[{n}]: f32 in; array b[{n}]: f32 in; array c[{n}]: f32 out;
  loop i 0 {n} {{ S0: c[i] = a[i] * b[i] + 3; }} }}"""


def gen_kernel(rnd: random.Random) -> str:
    """Random tiny kernel from a family of shapes."""
    tree = rnd.choice([True, False])
    n1, n2, n3 = (rnd.choice([2, 3, 4, 6, 8]) for _ in range(3))
    shape = rnd.randrange(6)
    if shape == 0:
        return mv_kernel(n1, tree)
    if shape == 1:
        opt = "option tree_reduction on;" if tree else ""
        return f"""kernel twophase {{
  array a[{n1}]: f32 in; array s[1]: f32 out; array b[{n1}]: f32 out;
  {opt}
  loop i 0 {n1} {{ S0: b[i] = a[i] * a[i]; }}
  loop i2 0 {n1} {{ S1: s += b[i2] * 2; }} }}"""
    if shape == 2:
        return stencil_kernel(n1)
    if shape == 3:
        return bicg_kernel(n1, n2, tree)
    if shape == 4:
        return mm_kernel(n1, n2, n3, tree)
    return atax_kernel(n1, n2, tree)


def rand_config(problem, rnd: random.Random):
    """Random structurally-canonical configuration of a problem."""
    placement = rnd.choice(problem.placements())
    loops = [l.loop_id for l in problem.kernel.loops()]
    ufs = {l: rnd.choice(problem.uf_domain(l, placement)) for l in loops}
    points = [rnd.choice(problem.slot_domain(s, placement))
              for s in problem.slots]
    covered = set()
    for pt in points:
        if pt is not None:
            covered.add(pt)
            covered |= {l.loop_id for l in problem.kernel.loops_under(pt)}
    tiles = {l: rnd.choice(problem.tile_domain(l, placement))
             for l in sorted(covered)}
    return _make_config(problem, placement, ufs, tiles, points)


@pytest.fixture
def calib():
    return CalibrationTable()


@pytest.fixture
def mv4():
    return parse_kernel(mv_kernel(4))


@pytest.fixture
def mv8():
    return parse_kernel(mv_kernel(8))
