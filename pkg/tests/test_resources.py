"""Calibration loading, compute-unit accounting and storage tests."""
import textwrap

import pytest

from hlsbound import KernelError, parse_kernel
from hlsbound.analysis import footprint_elements, trip_counts
from hlsbound.config import config_from_dict, default_config
from hlsbound.resources import (
    CalibrationTable,
    dependence_components,
    dsp_lower_bound,
    effective_unroll,
    load_calibration,
    onchip_usage,
    partition_factors,
)
from hlsbound.analysis import dependences

from conftest import atax_kernel, bicg_kernel, mv_kernel


def test_default_calibration():
    c = CalibrationTable()
    assert c.latency("add") == 5
    assert c.latency("mul") == 4
    assert c.latency("div") == 15
    assert c.dsp("mul") == 3
    assert c.dsp_budget == 6840
    assert c.port_bits == 512


def test_load_calibration_overrides(tmp_path):
    p = tmp_path / "cal.ini"
    p.write_text(textwrap.dedent("""
        [device]
        dsp = 100
        port_bits = 256
        [op.add]
        latency = 7
        [op.mul]
        dsp = 9
    """))
    c = load_calibration(str(p))
    assert c.latency("add") == 7
    assert c.latency("mul") == 4       # untouched default
    assert c.dsp("mul") == 9
    assert c.dsp_budget == 100
    assert c.port_bits == 256


def test_load_calibration_errors(tmp_path):
    with pytest.raises(KernelError):
        load_calibration(str(tmp_path / "missing.ini"))
    p = tmp_path / "bad.ini"
    p.write_text("[op.pow]\nlatency = 3\n")
    with pytest.raises(KernelError):
        load_calibration(str(p))
    p.write_text("[op.add]\nlatency = 0\n")
    with pytest.raises(KernelError):
        load_calibration(str(p))


def test_effective_unroll_plain(mv8):
    tc = trip_counts(mv8)
    cfg = config_from_dict(mv8, tc, {"loops": {"i": {"uf": 2}, "j": {"uf": 4}}})
    assert effective_unroll(mv8, "S0", cfg) == (8, 1)


def test_effective_unroll_under_pipeline(mv8):
    tc = trip_counts(mv8)
    cfg = config_from_dict(mv8, tc, {"loops": {"i": {"pipeline": True,
                                                     "ii": 2, "uf": 2}}})
    # Everything under the pipelined i is fully unrolled: 2 * tc(j).
    assert effective_unroll(mv8, "S0", cfg) == (16, 2)


def test_dsp_lower_bound_scales_with_unroll(calib, mv8):
    tc = trip_counts(mv8)
    base = dsp_lower_bound(mv8, default_config(mv8, tc), calib)
    # One mul (3) + one add (2) replica.
    assert base == 5
    cfg = config_from_dict(mv8, tc, {"loops": {"j": {"uf": 4}}})
    assert dsp_lower_bound(mv8, cfg, calib) == 20


def test_dsp_lower_bound_ii_amortizes(calib, mv8):
    tc = trip_counts(mv8)
    cfg = config_from_dict(mv8, tc, {"loops": {"j": {"pipeline": True,
                                                     "ii": 5}}})
    assert dsp_lower_bound(mv8, cfg, calib) == 1


def test_dsp_lower_bound_parallel_components_sum(calib):
    k = parse_kernel(bicg_kernel(4, 4))
    tc = trip_counts(k)
    cfg = default_config(k, tc)
    deps = dependences(k)
    # S2 and S3 are independent: their demands add.
    assert dsp_lower_bound(k, cfg, calib) >= 10


def test_dependence_components(calib):
    k = parse_kernel(bicg_kernel(4, 4))
    deps = dependences(k)
    children = list(k.loop("i").body)  # [S1, Loop_j]
    comps = dependence_components(k, children, deps)
    # S1 initializes q which Loop_j(S3) accumulates: one component.
    assert len(comps) == 1

    k2 = parse_kernel(atax_kernel(4, 4))
    deps2 = dependences(k2)
    top = list(k2.root)  # [Loop_i0, Loop_i]
    comps2 = dependence_components(k2, top, deps2)
    # Loop_i0 writes y which Loop_i accumulates: serialized.
    assert len(comps2) == 1


def test_partition_factors(mv8):
    tc = trip_counts(mv8)
    cfg = config_from_dict(mv8, tc, {"loops": {"i": {"uf": 2}, "j": {"uf": 4}}})
    assert partition_factors(mv8, "A", cfg) == {0: 2, 1: 4}
    assert partition_factors(mv8, "x", cfg) == {0: 4}
    assert partition_factors(mv8, "y", cfg) == {0: 2}


def test_partition_factors_under_pipeline(mv8):
    tc = trip_counts(mv8)
    cfg = config_from_dict(mv8, tc, {"loops": {"i": {"pipeline": True}}})
    # j fully unrolls beneath the pipeline: dimension 1 needs all 8 banks.
    assert partition_factors(mv8, "A", cfg)[1] == 8


def test_onchip_usage(mv8):
    tc = trip_counts(mv8)
    cfg = config_from_dict(mv8, tc, {"caches": {"A": ["j"], "x": ["j"]}})
    bits = onchip_usage(mv8, cfg, tc, footprint_elements)
    # One row of A (8) plus all of x (8), 32-bit elements.
    assert bits == 16 * 32
