"""Standalone model export.

Serializes an optimization problem to a plain-text document with variable
declarations, tagged constraints, numeric lookup tables and one objective
expression per pipeline placement.  A loaded document evaluates the
objective of any configuration with exact rational arithmetic, matching
the in-process model bit for bit.

Expression syntax is s-expressions over integers and rationals (``p/q``),
variable references (``uf.L1``, ``tile.L1``, ``ii.L1``, ``cache.A.L1``),
and the operators add, sub, mul, div, floordiv, floor, ceil, max, min,
flog2, eq, gt, cond, and tab (table lookup).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

from .ir import KernelError, Loop, Statement
from .analysis import footprint_elements, liveness
from .config import Configuration
from .latency import statement_latency
from .nlp import NlpProblem
from .resources import dependence_components

Num = Union[int, Fraction]


# -- expression construction -------------------------------------------------

def _n(x) -> str:
    if isinstance(x, Fraction):
        if x.denominator == 1:
            return str(x.numerator)
        return f"{x.numerator}/{x.denominator}"
    return str(int(x))


def _call(op: str, *args: str) -> str:
    return "(" + " ".join([op, *args]) + ")"


# -- document model -----------------------------------------------------------

@dataclass
class ExportedModel:
    name: str
    mode: str
    variables: dict[str, list] = field(default_factory=dict)
    constraints: list[tuple[str, str]] = field(default_factory=list)
    tables: dict[str, dict[tuple, Num]] = field(default_factory=dict)
    objectives: dict[tuple[str, ...], object] = field(default_factory=dict)
    slot_vars: list[tuple[str, str, str, tuple]] = field(default_factory=list)
    # (var name, array, nest, candidate points) in declaration order

    def evaluate(self, config: Configuration) -> int:
        placement = tuple(sorted(p.loop_id for p in config.pvs if p.ispipelined))
        if placement not in self.objectives:
            raise KernelError(f"no objective for pipeline placement {placement}")
        env: dict[str, Num] = {}
        for p in config.pvs:
            env[f"uf.{p.loop_id}"] = p.uf
            env[f"tile.{p.loop_id}"] = p.tile
            env[f"ii.{p.loop_id}"] = p.ii
        for var, array, nest, cands in self.slot_vars:
            chosen = 0
            for pt in config.cache_points(array):
                if pt in cands:
                    chosen = cands.index(pt)
            env[var] = chosen
        val = _eval(self.objectives[placement], env, self.tables)
        if isinstance(val, Fraction):
            if val.denominator != 1:
                raise KernelError("objective did not reduce to an integer")
            val = val.numerator
        return int(val)


def export_model(problem: NlpProblem) -> str:
    """Render the problem as a self-contained text document."""
    k = problem.kernel
    lines: list[str] = []
    lines.append(f"model {k.name}")
    lines.append(f"mode {problem.mode}")
    lines.append(f"maxpartition {problem.effective_max_partition():g}")
    lines.append("")

    for l in k.loops():
        lid = l.loop_id
        t = problem.tc[lid]
        lines.append(f"var pipe.{lid} in 0 1")
        lines.append(f"var ii.{lid} min {problem.min_ii[lid]}")
        lines.append(f"var uf.{lid} in " + " ".join(map(str, _divs(t.tc_max))))
        lines.append(f"var tile.{lid} in " + " ".join(map(str, _divs(t.tc_max))))
    slot_vars = []
    for s in problem.slots:
        var = f"cache.{s.array}.{s.nest}"
        cands = [None, *s.chain]
        slot_vars.append((var, s.array, s.nest, tuple(cands)))
        lines.append(f"var {var} points - " + " ".join(s.chain))
    lines.append("")

    for tag, desc in _constraint_lines(problem):
        lines.append(f'constraint {tag} "{desc}"')
    lines.append("")

    tables: dict[str, dict[tuple, Num]] = {}
    placements = problem.placements()
    pipelined_anywhere = sorted({p for pl in placements for p in pl})
    for lid in pipelined_anywhere:
        tbl = {}
        for uf in _divs(problem.tc[lid].tc_max):
            tbl[(uf,)] = problem.straight_line(lid, uf)
        tables[f"SL.{lid}"] = tbl
    _footprint_tables(problem, tables)
    for name in sorted(tables):
        keys = tables[name]
        entries = " ".join(
            ",".join(map(str, key)) + ":" + _n(val) for key, val in sorted(keys.items())
        )
        lines.append(f"table {name} {entries}")
    lines.append("")

    for placement in placements:
        key = tuple(sorted(placement))
        expr = _objective_expr(problem, placement, tables)
        lines.append("placement " + (" ".join(key) if key else "-"))
        lines.append("objective " + expr)
    lines.append("")
    return "\n".join(lines)


def _divs(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def _constraint_lines(problem: NlpProblem) -> list[tuple[str, str]]:
    out = [
        ("eq1", "unroll factors range over the loop trip count"),
        ("eq2", "tile sizes range over the loop trip count"),
        ("eq3", "pipelined loops honor the recurrence floor on II"),
        ("eq4", "cache points must enclose every access to the array"),
        ("eq5", "loops inside a pipeline unroll completely"),
        ("eq6", "at most one pipeline on any nesting path"),
        ("eq7", "no cache point inside a pipeline"),
        ("eq8", "unrolling never exceeds the carried-dependence distance"),
        ("eq9", "per-array partition factors stay within the bank limit"),
        ("eq12", "unroll factors divide the trip count"),
        ("eq13", "tile sizes divide the trip count"),
    ]
    if problem.mode == "fine":
        out.append(("eq14", "coarse unrolling disabled outside pipelines"))
    out.append(("dsp_budget", "compute units fit the device DSP budget"))
    out.append(("bram_budget", "on-chip buffers fit the device block RAM"))
    return out


# -- footprint tables ---------------------------------------------------------

def _fp_table_name(array: str, point: str) -> str:
    return f"FP.{array}.{point}"


def _inside_tile_loops(problem: NlpProblem, point: str) -> list[str]:
    k = problem.kernel
    ids = [point] + [l.loop_id for l in k.loops_under(point)]
    return sorted(lid for lid in ids if problem.tc[lid].constant
                  and problem.tc[lid].tc_max > 1)


def _footprint_tables(problem: NlpProblem, tables) -> None:
    k = problem.kernel
    for s in problem.slots:
        for pt in s.chain:
            name = _fp_table_name(s.array, pt)
            if name in tables:
                continue
            tile_loops = _inside_tile_loops(problem, pt)
            doms = [_divs(problem.tc[l].tc_max) for l in tile_loops]
            tbl: dict[tuple, Num] = {}
            for combo in _iter_product(doms):
                # Tile 1 means "untiled": the full extent, matching how
                # configurations report their tile choices.
                tiles = {l: v for l, v in zip(tile_loops, combo) if v > 1}
                tbl[tuple(combo)] = footprint_elements(
                    k, s.array, pt, problem.tc, tiles)
            tables[name] = tbl


def _iter_product(domains):
    if not domains:
        yield ()
        return
    for head in domains[0]:
        for rest in _iter_product(domains[1:]):
            yield (head,) + rest


# -- objective expression ------------------------------------------------------

def _objective_expr(problem: NlpProblem, placement, tables) -> str:
    comp = _comp_expr(problem, placement)
    comm = _comm_expr(problem, placement)
    return _call("add", comp, comm)


def _comp_expr(problem: NlpProblem, placement) -> str:
    k = problem.kernel
    calib = problem.calib
    tree_mode = k.options.tree_reduction_enabled

    def node_expr(node) -> str:
        if isinstance(node, Statement):
            return _n(statement_latency(node, calib))
        lid = node.loop_id
        t = problem.tc[lid]
        uf = f"uf.{lid}"
        if lid in placement:
            ii = _call("max", f"ii.{lid}", _n(problem.min_ii[lid]))
            iters = _call("sub", _call("div", _n(t.tc_avg), uf), "1")
            factor = _call("max", "0", _call("floor", _call("mul", ii, iters)))
            sl = _call("tab", f"SL.{lid}", uf)
            return _call("add", factor, sl)
        body = compose(node.body)
        if lid in problem.reds:
            seq = _call("floor", _call("mul", _n(t.tc_avg), body))
            if not tree_mode:
                return seq
            accs = [calib.latency(s.accum_op)
                    for s in k.statements_under(node) if s.accum_op]
            combine = _n(max(accs)) if accs else body
            tree = _call(
                "mul",
                _call("mul",
                      _call("floordiv", _n(math.floor(t.tc_avg)), uf),
                      _call("max", "1", _call("flog2", uf))),
                combine)
            return _call("cond", _call("gt", uf, "1"), tree, seq)
        reps = _call("floor", _call("div", _n(t.tc_avg), uf))
        return _call("mul", reps, body)

    def compose(children) -> str:
        comps = dependence_components(k, list(children), problem.deps)
        sums = []
        for comp in comps:
            terms = [node_expr(c) for c in comp]
            sums.append(terms[0] if len(terms) == 1 else _call("add", *terms))
        if not sums:
            return "0"
        return sums[0] if len(sums) == 1 else _call("max", *sums)

    return compose(k.root)


def _comm_expr(problem: NlpProblem, placement) -> str:
    k = problem.kernel
    calib = problem.calib
    live = liveness(k, problem.tc)
    slots_by_array: dict[str, list] = {}
    for s in problem.slots:
        slots_by_array.setdefault(s.array, []).append(s)

    def slot_var(s) -> str:
        return f"cache.{s.array}.{s.nest}"

    def term_at_point(s, pt) -> str:
        a = k.array(s.array)
        name = _fp_table_name(s.array, pt)
        tile_loops = _inside_tile_loops(problem, pt)
        fp = _call("tab", name, *[f"tile.{l}" for l in tile_loops]) \
            if tile_loops else _n(problem_tables_scalar(problem, s.array, pt))
        beats = _call("ceil", _call("div",
                                    _call("mul", fp, _n(a.element_bits)),
                                    _n(calib.port_bits)))
        return _call("mul", _n(live[s.array].transfer_count), beats)

    level_terms: dict[Optional[str], list[str]] = {}
    for array, slots in sorted(slots_by_array.items()):
        # Top-level transfer applies only when no slot caches the array.
        all_none = [_call("eq", slot_var(s), "0") for s in slots]
        guard = all_none[0] if len(all_none) == 1 else _call("mul", *all_none)
        a = k.array(array)
        fp_root = footprint_elements(k, array, None, problem.tc, {})
        beats = math.ceil(fp_root * a.element_bits / calib.port_bits)
        root_term = live[array].transfer_count * beats
        level_terms.setdefault(None, []).append(
            _call("cond", guard, _n(root_term), "0"))
        for s in slots:
            for idx, pt in enumerate([None, *s.chain]):
                if pt is None:
                    continue
                sel = _call("eq", slot_var(s), _n(idx))
                level_terms.setdefault(pt, []).append(
                    _call("cond", sel, term_at_point(s, pt), "0"))

    parts = []
    for pt in sorted(level_terms, key=lambda p: (p is not None, str(p))):
        terms = level_terms[pt]
        parts.append(terms[0] if len(terms) == 1 else _call("max", *terms))
    if not parts:
        return "0"
    return parts[0] if len(parts) == 1 else _call("add", *parts)


def problem_tables_scalar(problem: NlpProblem, array: str, pt: str) -> int:
    return footprint_elements(problem.kernel, array, pt, problem.tc, {})


# -- parsing and evaluation ----------------------------------------------------

_ATOM = re.compile(r"[()]|[^\s()]+")


def _parse_sexpr(text: str):
    toks = _ATOM.findall(text)
    pos = 0

    def rec():
        nonlocal pos
        tok = toks[pos]
        pos += 1
        if tok == "(":
            items = []
            while toks[pos] != ")":
                items.append(rec())
            pos += 1
            return tuple(items)
        return tok

    expr = rec()
    if pos != len(toks):
        raise KernelError("trailing tokens in expression")
    return expr


def _atom_value(tok: str, env) -> Num:
    if re.fullmatch(r"-?\d+", tok):
        return int(tok)
    if re.fullmatch(r"-?\d+/\d+", tok):
        p, q = tok.split("/")
        return Fraction(int(p), int(q))
    if tok in env:
        return env[tok]
    raise KernelError(f"unbound variable {tok!r}")


def _eval(expr, env, tables) -> Num:
    if isinstance(expr, str):
        return _atom_value(expr, env)
    op, *args = expr
    if op == "tab":
        name = args[0]
        key = tuple(int(_eval(a, env, tables)) for a in args[1:])
        tbl = tables[name]
        if key not in tbl:
            raise KernelError(f"table {name} has no entry {key}")
        return tbl[key]
    vals = [_eval(a, env, tables) for a in args]
    if op == "add":
        return sum(vals)
    if op == "sub":
        return vals[0] - vals[1]
    if op == "mul":
        out: Num = 1
        for v in vals:
            out *= v
        return out
    if op == "div":
        return Fraction(vals[0]) / Fraction(vals[1])
    if op == "floordiv":
        return int(Fraction(vals[0]) // Fraction(vals[1]))
    if op == "floor":
        return math.floor(vals[0])
    if op == "ceil":
        return math.ceil(vals[0])
    if op == "max":
        return max(vals)
    if op == "min":
        return min(vals)
    if op == "flog2":
        return int(vals[0]).bit_length() - 1 if vals[0] >= 1 else 0
    if op == "eq":
        return 1 if vals[0] == vals[1] else 0
    if op == "gt":
        return 1 if vals[0] > vals[1] else 0
    if op == "cond":
        return vals[1] if vals[0] else vals[2]
    raise KernelError(f"unknown operator {op!r}")


def load_model(text: str) -> ExportedModel:
    """Parse a document produced by :func:`export_model`."""
    name = None
    mode = "coarse"
    variables: dict[str, list] = {}
    constraints: list[tuple[str, str]] = []
    tables: dict[str, dict[tuple, Num]] = {}
    objectives: dict[tuple[str, ...], object] = {}
    slot_vars: list[tuple[str, str, str, tuple]] = []
    pending_placement: Optional[tuple[str, ...]] = None

    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        if head == "model":
            name = rest.strip()
        elif head == "mode":
            mode = rest.strip()
        elif head == "maxpartition":
            pass
        elif head == "var":
            parts = rest.split()
            vname = parts[0]
            if parts[1] == "in":
                variables[vname] = [int(x) for x in parts[2:]]
            elif parts[1] == "min":
                variables[vname] = ["min", int(parts[2])]
            elif parts[1] == "points":
                cands = [None if x == "-" else x for x in parts[2:]]
                variables[vname] = cands
                _, array, nest = vname.split(".", 2)
                slot_vars.append((vname, array, nest, tuple(cands)))
            else:
                raise KernelError(f"bad var line: {line}")
        elif head == "constraint":
            tag, _, desc = rest.partition(" ")
            constraints.append((tag, desc.strip().strip('"')))
        elif head == "table":
            tname, _, entries = rest.partition(" ")
            tbl: dict[tuple, Num] = {}
            for ent in entries.split():
                keypart, _, valpart = ent.partition(":")
                key = tuple(int(x) for x in keypart.split(",")) if keypart else ()
                if "/" in valpart:
                    p, q = valpart.split("/")
                    tbl[key] = Fraction(int(p), int(q))
                else:
                    tbl[key] = int(valpart)
            tables[tname] = tbl
        elif head == "placement":
            pending_placement = () if rest.strip() == "-" else tuple(sorted(rest.split()))
        elif head == "objective":
            if pending_placement is None:
                raise KernelError("objective before placement")
            objectives[pending_placement] = _parse_sexpr(rest)
            pending_placement = None
        else:
            raise KernelError(f"unrecognized line: {line}")
    if name is None:
        raise KernelError("document has no model line")
    return ExportedModel(
        name=name, mode=mode, variables=variables, constraints=constraints,
        tables=tables, objectives=objectives, slot_vars=slot_vars,
    )
