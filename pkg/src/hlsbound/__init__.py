"""Analytic latency bounds and pragma optimization for affine HLS kernels."""

from .ir import (
    KernelError,
    KernelIR,
    ParseError,
    PropertyVector,
    parse_kernel,
    summarize,
)
from .analysis import (
    dependences,
    footprint_elements,
    liveness,
    min_ii,
    reduction_loops,
    trip_counts,
)
from .config import Configuration, config_from_dict, default_config
from .opgraph import OperationGraph, build_graph, critical_path, region_bound
from .latency import (
    BoundReport,
    apply_i,
    compose_c,
    lat_coarse_grained,
    lat_full_unroll,
    lat_reduction_unroll,
    lat_sequential,
    memory_bound,
    program_bound,
)
from .resources import (
    CalibrationTable,
    dsp_lower_bound,
    load_calibration,
    onchip_usage,
    partition_factors,
)
from .nlp import (
    NlpProblem,
    build_problem,
    check_config,
    count_space,
    enumerate_configs,
    objective,
    solve,
)
from .export import export_model, load_model
from .oracle import list_schedule, simulate_config
from .dse import (
    DseConfig,
    DseReport,
    ModelEvaluator,
    SimulatedHlsEvaluator,
    load_report,
    persist_report,
    run_dse,
    simulated_hls_evaluate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
