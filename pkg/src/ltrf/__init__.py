"""Register-interval compiler passes and a two-level register-file simulator.

The headline entry points are re-exported here; everything else lives in the
submodules (ir, cfg, intervals, renumber, rfsim, synth, cli).
"""

from .intervals import build_intervals
from .ir import parse_program, run_program
from .renumber import apply_renumbering, renumber_program
from .rfsim import (
    RegisterFileConfig,
    generate_traces,
    max_tolerable_latency,
    run_sweep,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "RegisterFileConfig",
    "apply_renumbering",
    "build_intervals",
    "generate_traces",
    "max_tolerable_latency",
    "parse_program",
    "renumber_program",
    "run_program",
    "run_sweep",
    "simulate",
    "__version__",
]
