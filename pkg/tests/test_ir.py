"""Parser and IR structure tests."""
import json

import pytest

from hlsbound import KernelError, ParseError, parse_kernel, summarize
from hlsbound.ir import to_json

from conftest import atax_kernel, bicg_kernel, mv_kernel


def test_parse_matvec_shape(mv4):
    assert mv4.name == "mv4"
    assert [a.name for a in mv4.arrays] == ["A", "x", "y"]
    assert mv4.arrays[0].dims == (4, 4)
    assert mv4.arrays[2].direction == "inout"
    loops = mv4.loops()
    assert [l.loop_id for l in loops] == ["i", "j"]
    assert (loops[0].lower.const, loops[0].upper.const) == (0, 4)
    assert loops[0].lower.is_const() and loops[0].upper.is_const()
    s0 = mv4.statements()[0]
    assert s0.stmt_id == "S0"
    assert s0.write.array == "y"
    assert s0.accum_op == "add"


def test_parse_ops_chain(mv4):
    # y[i] += A[i][j] * x[j] lowers to one mul feeding the accumulation add.
    s0 = mv4.statements()[0]
    assert [op.kind for op in s0.ops] == ["mul", "add"]
    assert len(s0.reads) == 3  # A, x and the recirculated y read


def test_scalar_reads_are_implicit():
    k = parse_kernel("""kernel s { array a[4]: f32 in; array b[4]: f32 out;
      loop i 0 4 { S0: b[i] = alpha * a[i] + beta; } }""")
    s0 = k.statements()[0]
    assert set(s0.scalars) == {"alpha", "beta"}
    assert {r.array for r in s0.reads} == {"a"}
    assert {a.name for a in k.arrays} == {"a", "b"}


def test_tree_reduction_option():
    assert parse_kernel(mv_kernel(4, tree=True)).options.tree_reduction_enabled
    assert not parse_kernel(mv_kernel(4, tree=False)).options.tree_reduction_enabled


def test_summarize(mv4):
    assert summarize(mv4) == "Loop_i(Loop_j(S0))"


def test_summarize_siblings():
    k = parse_kernel(bicg_kernel(4, 4))
    assert summarize(k) == "Loop_i1(S0), Loop_i(S1, Loop_j(S2, S3))"


def test_enclosing_loops():
    k = parse_kernel(atax_kernel(4, 4))
    assert [l.loop_id for l in k.enclosing_loops("S2")] == ["i", "j1"]
    assert [l.loop_id for l in k.enclosing_loops("S0")] == ["i0"]


def test_loops_under():
    k = parse_kernel(atax_kernel(4, 4))
    assert {l.loop_id for l in k.loops_under("i")} == {"j1", "j2"}
    assert k.loops_under("j1") == []


@pytest.mark.parametrize("bad,msg", [
    ("kernel k { loop i 0 4 { S0: y[i] = 1; } }", "array"),
    ("kernel k { array y[4]: f32 out; loop i 0 4 { if (i) {} } }", ""),
    ("kernel k { array y[4]: f32 out; loop i 0 4 { S0: y[j] = 1; } }", ""),
    ("kernel k { array y[4]: f32 out; loop i 0 4 { S0: y[i] = 1; }", ""),
    ("kernel k { array y[4]: f32 out; array y[4]: f32 in; "
     "loop i 0 4 { S0: y[i] = 1; } }", ""),
])
def test_parse_rejects(bad, msg):
    with pytest.raises(KernelError) as exc:
        parse_kernel(bad)
    if msg:
        assert msg in str(exc.value)


def test_parse_error_is_kernel_error():
    assert issubclass(ParseError, KernelError)


def test_subscript_affine_offsets():
    k = parse_kernel("""kernel s { array y[8]: f32 inout;
      loop j 2 6 { S0: y[j] = y[j-2] + 3; } }""")
    s0 = k.statements()[0]
    assert (s0.write.subscripts[0].iterator, s0.write.subscripts[0].const) == ("j", 0)
    read = next(r for r in s0.reads if r.subscripts[0].const == -2)
    assert read.subscripts[0].iterator == "j"


def test_to_json_canonical(mv4):
    doc = json.loads(to_json(mv4))
    assert doc["name"] == "mv4"
    assert doc["arrays"][0]["dims"] == [4, 4]
    assert doc["root"][0]["loop"] == "i"
    assert doc["root"][0]["body"][0]["body"][0]["stmt"] == "S0"
    # Serialization is deterministic.
    assert to_json(mv4) == to_json(parse_kernel(mv_kernel(4)))


def test_duplicate_statement_ids_rejected():
    with pytest.raises(KernelError):
        parse_kernel("""kernel k { array y[4]: f32 out;
          loop i 0 4 { S0: y[i] = 1; S0: y[i] = 2; } }""")
