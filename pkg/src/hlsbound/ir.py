"""Kernel intermediate representation: loop nests, statements, array accesses.

The IR is a summary AST of an affine loop nest.  Loops are identified by
their (unique) iterator name; statements carry at most one write access,
a list of read accesses and an ordered chain of arithmetic operations.
Everything is immutable after construction.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Optional, Union


class KernelError(Exception):
    """Domain error in kernel text or structure."""


class ParseError(KernelError):
    """Syntax/semantic error while parsing kernel text, with position."""

    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.line = line
        self.col = col


OP_KINDS = ("add", "sub", "mul", "div")

_BINOP_TO_KIND = {"+": "add", "-": "sub", "*": "mul", "/": "div"}


@dataclass(frozen=True)
class AffineExpr:
    """`iterator + const`, a bare constant, or a bare iterator.

    iterator is None for pure constants.
    """

    iterator: Optional[str]
    const: int = 0

    def is_const(self) -> bool:
        return self.iterator is None

    def __str__(self) -> str:
        if self.iterator is None:
            return str(self.const)
        if self.const == 0:
            return self.iterator
        sign = "+" if self.const > 0 else "-"
        return f"{self.iterator}{sign}{abs(self.const)}"


@dataclass(frozen=True)
class ArrayAccess:
    array: str
    subscripts: tuple[AffineExpr, ...]

    def __str__(self) -> str:
        return self.array + "".join(f"[{s}]" for s in self.subscripts)


@dataclass(frozen=True)
class ArrayDecl:
    name: str
    dims: tuple[int, ...]
    element_bits: int = 32
    direction: str = "inout"  # hint only; analysis recomputes live-in/out

    def __post_init__(self):
        if not self.dims:
            raise KernelError(f"array {self.name}: dims must be non-empty")
        if any(d <= 0 for d in self.dims):
            raise KernelError(f"array {self.name}: extents must be positive")
        if self.element_bits <= 0:
            raise KernelError(f"array {self.name}: element_bits must be positive")
        if self.direction not in ("in", "out", "inout"):
            raise KernelError(f"array {self.name}: bad direction {self.direction}")


# Expression tree nodes (internal; statements also expose a flat op chain).
@dataclass(frozen=True)
class ExprLeaf:
    """Access, scalar identifier, or literal constant."""

    access: Optional[ArrayAccess] = None
    scalar: Optional[str] = None
    const: Optional[float] = None


@dataclass(frozen=True)
class ExprOp:
    kind: str  # one of OP_KINDS
    operands: tuple["Expr", ...]


Expr = Union[ExprLeaf, ExprOp]


@dataclass(frozen=True)
class ChainOp:
    """One step of a statement's flattened op chain.

    `consumes_reads` lists indices into Statement.reads whose values enter
    the chain at this op; used for dependence-cycle delay computation.
    """

    kind: str
    consumes_reads: tuple[int, ...] = ()


@dataclass(frozen=True)
class Statement:
    stmt_id: str
    write: ArrayAccess
    reads: tuple[ArrayAccess, ...]
    ops: tuple[ChainOp, ...]
    accum_op: Optional[str] = None  # set for +=, *= forms
    expr: Optional[Expr] = None
    scalars: tuple[str, ...] = ()  # read-only scalar identifiers

    @property
    def is_copy(self) -> bool:
        return not self.ops

    def read_entry_index(self, read_idx: int) -> Optional[int]:
        """Chain position at which reads[read_idx] is consumed."""
        for i, op in enumerate(self.ops):
            if read_idx in op.consumes_reads:
                return i
        return None


@dataclass(frozen=True)
class Loop:
    loop_id: str
    lower: AffineExpr
    upper: AffineExpr  # exclusive
    body: tuple["AstNode", ...]

    def __post_init__(self):
        if not self.body:
            raise KernelError(f"loop {self.loop_id}: empty body")


AstNode = Union[Loop, Statement]


@dataclass(frozen=True)
class KernelOptions:
    tree_reduction_enabled: bool = False


@dataclass(frozen=True)
class PropertyVector:
    """Per-loop pragma/shape record."""

    loop_id: str
    ispipelined: bool = False
    ii: int = 1
    uf: int = 1
    tile: int = 1
    tc_min: int = 0
    tc_max: int = 0
    tc_avg: Fraction = Fraction(0)
    cached_arrays: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.ii < 1 or self.uf < 1 or self.tile < 1:
            raise KernelError(f"loop {self.loop_id}: II/uf/tile must be >= 1")


@dataclass(frozen=True)
class KernelIR:
    name: str
    arrays: tuple[ArrayDecl, ...]
    root: tuple[AstNode, ...]
    options: KernelOptions = KernelOptions()

    def __post_init__(self):
        seen_loops: set[str] = set()
        seen_stmts: set[str] = set()
        declared = {a.name for a in self.arrays}
        if len(declared) != len(self.arrays):
            raise KernelError("duplicate array declaration")
        for node in self.walk():
            if isinstance(node, Loop):
                if node.loop_id in seen_loops:
                    raise KernelError(f"duplicate loop id {node.loop_id}")
                seen_loops.add(node.loop_id)
            else:
                if node.stmt_id in seen_stmts:
                    raise KernelError(f"duplicate statement id {node.stmt_id}")
                seen_stmts.add(node.stmt_id)
                for acc in (node.write, *node.reads):
                    if acc.array not in declared:
                        raise KernelError(
                            f"statement {node.stmt_id}: undeclared array {acc.array}"
                        )

    def walk(self) -> Iterator[AstNode]:
        def rec(nodes):
            for n in nodes:
                yield n
                if isinstance(n, Loop):
                    yield from rec(n.body)

        yield from rec(self.root)

    def loops(self) -> list[Loop]:
        return [n for n in self.walk() if isinstance(n, Loop)]

    def statements(self) -> list[Statement]:
        return [n for n in self.walk() if isinstance(n, Statement)]

    def loop(self, loop_id: str) -> Loop:
        for l in self.loops():
            if l.loop_id == loop_id:
                return l
        raise KernelError(f"no such loop: {loop_id}")

    def statement(self, stmt_id: str) -> Statement:
        for s in self.statements():
            if s.stmt_id == stmt_id:
                return s
        raise KernelError(f"no such statement: {stmt_id}")

    def array(self, name: str) -> ArrayDecl:
        for a in self.arrays:
            if a.name == name:
                return a
        raise KernelError(f"no such array: {name}")

    def enclosing_loops(self, stmt_id: str) -> list[Loop]:
        """Loops around a statement, outermost first."""
        path: list[Loop] = []

        def rec(nodes, stack):
            for n in nodes:
                if isinstance(n, Loop):
                    found = rec(n.body, stack + [n])
                    if found:
                        return found
                elif n.stmt_id == stmt_id:
                    return list(stack)
            return None

        result = rec(self.root, [])
        if result is None:
            raise KernelError(f"no such statement: {stmt_id}")
        return result

    def parent_of(self, loop_id: str) -> Optional[Loop]:
        def rec(nodes, parent):
            for n in nodes:
                if isinstance(n, Loop):
                    if n.loop_id == loop_id:
                        return parent
                    found = rec(n.body, n)
                    if found is not None:
                        return found
            return None

        return rec(self.root, None)

    def loops_under(self, loop_id: str) -> list[Loop]:
        """Loops strictly inside the given loop."""
        top = self.loop(loop_id)
        return [n for n in _walk_nodes(top.body) if isinstance(n, Loop)]

    def statements_under(self, node: AstNode) -> list[Statement]:
        if isinstance(node, Statement):
            return [node]
        return [n for n in _walk_nodes(node.body) if isinstance(n, Statement)]


def _walk_nodes(nodes) -> Iterator[AstNode]:
    for n in nodes:
        yield n
        if isinstance(n, Loop):
            yield from _walk_nodes(n.body)


def summarize(k: KernelIR) -> str:
    """Constructor-form summary, e.g. ``Loop_i(Loop_j1(S1), Loop_j2(S2,S3))``."""

    def rec(node: AstNode) -> str:
        if isinstance(node, Statement):
            return node.stmt_id
        inner = ", ".join(rec(c) for c in node.body)
        return f"Loop_{node.loop_id}({inner})"

    return ", ".join(rec(n) for n in k.root)


# ---------------------------------------------------------------------------
# Kernel DSL parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<num>\d+(\.\d+)?)
  | (?P<id>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\+=|\*=|[{}\[\]();:=+\-*/,])
    """,
    re.VERBOSE,
)


class _Tokenizer:
    def __init__(self, text: str):
        self.toks: list[tuple[str, str, int, int]] = []
        line, col = 1, 1
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if not m:
                raise ParseError(f"unexpected character {text[pos]!r}", line, col)
            kind = m.lastgroup
            val = m.group()
            if kind != "ws":
                self.toks.append((kind, val, line, col))
            nl = val.count("\n")
            if nl:
                line += nl
                col = len(val) - val.rfind("\n")
            else:
                col += len(val)
            pos = m.end()
        self.toks.append(("eof", "", line, col))
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        if t[0] != "eof":
            self.i += 1
        return t

    def expect(self, val: str):
        kind, v, line, col = self.next()
        if v != val:
            raise ParseError(f"expected {val!r}, got {v!r}", line, col)
        return v

    def expect_kind(self, kind: str):
        k, v, line, col = self.next()
        if k != kind:
            raise ParseError(f"expected {kind}, got {v!r}", line, col)
        return v

    def error(self, msg: str):
        _, v, line, col = self.peek()
        raise ParseError(msg + f" (at {v!r})", line, col)


def parse_kernel(text: str) -> KernelIR:
    """Parse kernel DSL text into a validated :class:`KernelIR`."""
    tz = _Tokenizer(text)
    tz.expect("kernel")
    name = tz.expect_kind("id")
    tz.expect("{")
    arrays: list[ArrayDecl] = []
    options = {"tree_reduction_enabled": False}
    nodes: list[AstNode] = []
    declared: set[str] = set()
    while tz.peek()[1] != "}":
        kw = tz.peek()[1]
        if kw == "array":
            arrays.append(_parse_array_decl(tz))
            declared.add(arrays[-1].name)
        elif kw == "option":
            tz.next()
            opt = tz.expect_kind("id")
            val = tz.next()[1]
            tz.expect(";")
            if opt == "tree_reduction":
                options["tree_reduction_enabled"] = val in ("true", "on", "1")
            else:
                tz.error(f"unknown option {opt}")
        else:
            nodes.append(_parse_node(tz, declared, iter_stack=[]))
    tz.expect("}")
    if tz.peek()[0] != "eof":
        tz.error("trailing input after kernel body")
    return KernelIR(
        name=name,
        arrays=tuple(arrays),
        root=tuple(nodes),
        options=KernelOptions(**options),
    )


def _parse_array_decl(tz: _Tokenizer) -> ArrayDecl:
    tz.expect("array")
    name = tz.expect_kind("id")
    dims = []
    while tz.peek()[1] == "[":
        tz.next()
        dims.append(int(tz.expect_kind("num")))
        tz.expect("]")
    tz.expect(":")
    elem = tz.expect_kind("id")
    if elem not in ("f32", "f64"):
        tz.error(f"unknown element type {elem}")
    direction = tz.expect_kind("id")
    tz.expect(";")
    return ArrayDecl(
        name=name,
        dims=tuple(dims) if dims else (1,),
        element_bits=32 if elem == "f32" else 64,
        direction=direction,
    )


def _parse_node(tz: _Tokenizer, declared: set[str], iter_stack: list[str]) -> AstNode:
    if tz.peek()[1] == "loop":
        tz.next()
        it = tz.expect_kind("id")
        lb = _parse_affine(tz, iter_stack)
        ub = _parse_affine(tz, iter_stack)
        tz.expect("{")
        body = []
        while tz.peek()[1] != "}":
            body.append(_parse_node(tz, declared, iter_stack + [it]))
        tz.expect("}")
        return Loop(loop_id=it, lower=lb, upper=ub, body=tuple(body))
    if tz.peek()[1] == "if":
        tz.error("conditional statements are not supported")
    # Statement: <Id> : <access> (=|+=|*=) <expr> ;
    sid = tz.expect_kind("id")
    tz.expect(":")
    lhs = _parse_access(tz, declared, iter_stack)
    _, assign, line, col = tz.next()
    if assign not in ("=", "+=", "*="):
        raise ParseError(f"expected assignment operator, got {assign!r}", line, col)
    expr = _parse_expr(tz, declared, iter_stack)
    tz.expect(";")
    return _build_statement(sid, lhs, assign, expr)


def _parse_affine(tz: _Tokenizer, iter_stack: list[str]) -> AffineExpr:
    kind, val, line, col = tz.next()
    if kind == "num":
        base: Optional[str] = None
        const = int(val)
    elif kind == "id":
        if val not in iter_stack:
            raise ParseError(
                f"bound references {val!r}, not an enclosing iterator", line, col
            )
        base, const = val, 0
    elif val == "-":
        n = tz.expect_kind("num")
        return AffineExpr(None, -int(n))
    else:
        raise ParseError(f"expected affine expression, got {val!r}", line, col)
    while tz.peek()[1] in ("+", "-") and tz.toks[tz.i + 1][0] == "num":
        sign = tz.next()[1]
        n = int(tz.expect_kind("num"))
        const += n if sign == "+" else -n
    return AffineExpr(base, const)


def _parse_access(tz, declared, iter_stack) -> ArrayAccess:
    name = tz.expect_kind("id")
    subs = []
    while tz.peek()[1] == "[":
        tz.next()
        subs.append(_parse_subscript(tz, iter_stack))
        tz.expect("]")
    if not subs:
        subs = [AffineExpr(None, 0)]  # scalar written through a 1-elem array
    return ArrayAccess(array=name, subscripts=tuple(subs))


def _parse_subscript(tz, iter_stack) -> AffineExpr:
    kind, val, line, col = tz.next()
    if kind == "num":
        base, const = None, int(val)
    elif kind == "id":
        if val not in iter_stack:
            raise ParseError(
                f"subscript uses {val!r}, not an enclosing iterator", line, col
            )
        base, const = val, 0
    else:
        raise ParseError(f"bad subscript start {val!r}", line, col)
    while tz.peek()[1] in ("+", "-"):
        sign = tz.next()[1]
        n = int(tz.expect_kind("num"))
        const += n if sign == "+" else -n
    return AffineExpr(base, const)


def _parse_expr(tz, declared, iter_stack, min_prec=0) -> Expr:
    _PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
    lhs = _parse_primary(tz, declared, iter_stack)
    while tz.peek()[1] in _PREC and _PREC[tz.peek()[1]] >= min_prec:
        op = tz.next()[1]
        rhs = _parse_expr(tz, declared, iter_stack, _PREC[op] + 1)
        lhs = ExprOp(kind=_BINOP_TO_KIND[op], operands=(lhs, rhs))
    return lhs


def _parse_primary(tz, declared, iter_stack) -> Expr:
    kind, val, line, col = tz.peek()
    if val == "(":
        tz.next()
        e = _parse_expr(tz, declared, iter_stack)
        tz.expect(")")
        return e
    if kind == "num":
        tz.next()
        return ExprLeaf(const=float(val))
    if kind == "id":
        if val in declared:
            return ExprLeaf(access=_parse_access(tz, declared, iter_stack))
        tz.next()
        if tz.peek()[1] == "[":
            raise ParseError(f"undeclared array {val!r}", line, col)
        return ExprLeaf(scalar=val)  # read-only scalar (alpha, beta, ...)
    raise ParseError(f"expected expression, got {val!r}", line, col)


def _build_statement(sid: str, lhs: ArrayAccess, assign: str, expr: Expr) -> Statement:
    """Flatten the expression tree into reads + an ordered op chain.

    ``a += e`` normalizes to ``a = e + a`` with the accumulated value
    entering at the final op; likewise ``a *= e``.
    """
    accum_op = {"+=": "add", "*=": "mul", "=": None}[assign]
    reads: list[ArrayAccess] = []
    scalars: list[str] = []
    ops: list[ChainOp] = []

    def emit(e: Expr) -> Optional[int]:
        """Return the read index feeding the next op, or None for op output."""
        if isinstance(e, ExprLeaf):
            if e.access is not None:
                reads.append(e.access)
                return len(reads) - 1
            if e.scalar is not None and e.scalar not in scalars:
                scalars.append(e.scalar)
            return None
        consumed = []
        for sub in e.operands:
            idx = emit(sub)
            if idx is not None:
                consumed.append(idx)
        ops.append(ChainOp(kind=e.kind, consumes_reads=tuple(consumed)))
        return None

    rhs_is_access = emit(expr)
    if accum_op is not None:
        reads.append(lhs)
        ops.append(ChainOp(kind=accum_op, consumes_reads=(len(reads) - 1,)))
    elif rhs_is_access is not None:
        pass  # pure copy: a = b[i]
    return Statement(
        stmt_id=sid,
        write=lhs,
        reads=tuple(reads),
        ops=tuple(ops),
        accum_op=accum_op,
        expr=expr,
        scalars=tuple(scalars),
    )


# ---------------------------------------------------------------------------
# Canonical JSON serialization
# ---------------------------------------------------------------------------

def to_json(k: KernelIR) -> str:
    def node_dict(n: AstNode):
        if isinstance(n, Loop):
            return {
                "loop": n.loop_id,
                "lower": str(n.lower),
                "upper": str(n.upper),
                "body": [node_dict(c) for c in n.body],
            }
        return {
            "stmt": n.stmt_id,
            "write": str(n.write),
            "reads": [str(r) for r in n.reads],
            "ops": [op.kind for op in n.ops],
            "accum_op": n.accum_op,
            "scalars": list(n.scalars),
        }

    doc = {
        "name": k.name,
        "options": {"tree_reduction": k.options.tree_reduction_enabled},
        "arrays": [
            {
                "name": a.name,
                "dims": list(a.dims),
                "element_bits": a.element_bits,
                "direction": a.direction,
            }
            for a in k.arrays
        ],
        "root": [node_dict(n) for n in k.root],
    }
    return json.dumps(doc, indent=2, sort_keys=True)
