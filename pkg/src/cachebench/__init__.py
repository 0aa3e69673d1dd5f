"""Cache timing vulnerability benchmarks on simulated multicore hierarchies."""

__version__ = "0.1.0"

from .benchgen import (DetectionMatrix, TestConfig, compile_plan, decide_detection,  # noqa: E402
                       gen_configs, run_benchmark, validity)
from .cache import CacheGeometry, CacheLevel, Policy, ReplacementPolicy, set_index  # noqa: E402
from .coherence import MemOp, OpKind, SimMachine, apply, snapshot_placement  # noqa: E402
from .latency import EventTrace, LatencyTable, cost  # noqa: E402
from .targets import TargetSpec, build_machine, load_spec, reference_target, shipped  # noqa: E402
from .threestep import (classify, enumerate_states, enumerate_triples,  # noqa: E402
                        strong_set)
from .timing import Histogram, enumerate_timing_types, measure, prepare_state  # noqa: E402

__all__ = [
    "CacheGeometry", "CacheLevel", "DetectionMatrix", "EventTrace", "Histogram", "LatencyTable",
    "MemOp", "OpKind", "Policy", "ReplacementPolicy", "SimMachine", "TargetSpec", "TestConfig",
    "apply", "build_machine", "classify", "compile_plan", "cost", "decide_detection",
    "enumerate_states", "enumerate_timing_types", "enumerate_triples", "gen_configs",
    "load_spec", "measure", "prepare_state", "reference_target", "run_benchmark", "set_index",
    "shipped", "snapshot_placement", "strong_set", "validity",
]
