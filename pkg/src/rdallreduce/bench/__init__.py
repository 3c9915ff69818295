from .config import BenchSpec, build_spec, load_config, parse_size
from .sweep import Cell, estimate_rows, model_rows, run_cell, run_sweep

__all__ = ["BenchSpec", "Cell", "build_spec", "estimate_rows", "load_config", "model_rows",
           "parse_size", "run_cell", "run_sweep"]
