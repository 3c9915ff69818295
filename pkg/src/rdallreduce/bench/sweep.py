"""Benchmark cells, sweeps and their CSV rows."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional

import numpy as np

from ..collectives import NvrarConfig, run_allreduce, serial_sum
from ..costmodel import ClusterTopology, predict
from ..errors import DeadlockError, InvalidArgument, ProtocolFault
from ..workload import (BYTES_PER_ELEMENT, DecodeWorkload, GemmMachine, GemmShape,
                        tp_decode_step_time)
from .config import BenchSpec

MODEL_COLUMNS = ["algorithm", "nodes", "gpus_per_node", "msg_bytes",
                 "latency_us", "bandwidth_us", "total_us"]
SWEEP_COLUMNS = ["algorithm", "nodes", "gpus_per_node", "msg_bytes", "blocks", "chunk_bytes",
                 "transport", "iters", "mean_us", "model_us", "model_ratio",
                 "speedup_vs_baseline", "correct", "best", "error"]
ESTIMATE_COLUMNS = ["algorithm", "step_time_us", "comm_us", "gemm_us", "speedup_vs_ring"]


def us(seconds) -> str:
    return f"{float(seconds) * 1e6:.3f}"


def ratio(x) -> str:
    return "" if x is None else f"{float(x):.4f}"


def to_csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


# -- model -------------------------------------------------------------------

def model_rows(spec: BenchSpec) -> List[dict]:
    params = spec.cost_params()
    rows = []
    for n in spec.nodes:
        topo = ClusterTopology(n, spec.gpus_per_node)
        for m in spec.msg_bytes:
            for alg in spec.algorithms:
                p = predict(alg, topo, params, m)
                rows.append(dict(algorithm=alg, nodes=n, gpus_per_node=spec.gpus_per_node,
                                 msg_bytes=m, latency_us=us(p.latency_term),
                                 bandwidth_us=us(p.bandwidth_term), total_us=us(p.total)))
    return rows


# -- simulation cells ----------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    algorithm: str
    nodes: int
    msg_bytes: int
    blocks: Optional[int] = None
    chunk_bytes: Optional[int] = None


@dataclass
class CellResult:
    cell: Cell
    mean: object = None
    model: object = None
    correct: Optional[bool] = None
    error: str = ""
    trace: list = field(default_factory=list)


def cell_inputs(spec: BenchSpec, msg_bytes: int):
    """Deterministic per-(call, rank) random inputs."""
    count = msg_bytes // 4
    dtype = np.dtype(spec.dtype)

    def make(call, gid):
        rng = np.random.default_rng([spec.seed, call, gid])
        if dtype == np.int32:
            return rng.integers(-(2**31), 2**31 - 1, size=count, dtype=np.int32, endpoint=True)
        return rng.random(count, dtype=np.float32)

    return make


def run_cell(spec: BenchSpec, cell: Cell, trace_path=None) -> CellResult:
    """Warm up, time ``spec.iters`` back-to-back calls and check every output."""
    result = CellResult(cell)
    topo = ClusterTopology(cell.nodes, spec.gpus_per_node)
    params = spec.cost_params()
    result.model = predict(cell.algorithm, topo, params, cell.msg_bytes).total
    make = cell_inputs(spec, cell.msg_bytes)
    config = None
    if cell.algorithm == "nvrar":
        config = NvrarConfig(cell.blocks or 1, cell.chunk_bytes, spec.dtype)
    calls = spec.warmup + spec.iters
    opts = {}
    if spec.transport == "concurrent":
        opts = dict(max_delay=float(Fraction(spec.max_delay_us)) * 1e-6, seed=spec.seed,
                    timeout=spec.timeout_s)
    run = run_allreduce(topo, cell.algorithm, make, calls=calls, mode=spec.transport,
                        params=params, config=config, trace_path=trace_path, **opts)
    correct = True
    for call, outs in enumerate(run.outputs):
        expect = serial_sum([make(call, g) for g in range(topo.world_size)])
        if spec.dtype == "int32":
            correct &= all(np.array_equal(o, expect) for o in outs)
        else:
            correct &= all(np.allclose(o, expect, rtol=1e-6, atol=0) for o in outs)
    timed = run.call_times[spec.warmup:]
    result.mean = sum(timed[1:], timed[0]) / len(timed)
    result.correct = bool(correct)
    return result


def _safe_cell(spec, cell):
    try:
        return run_cell(spec, cell)
    except (InvalidArgument, DeadlockError, ProtocolFault) as exc:
        return CellResult(cell, error=f"{type(exc).__name__}: {str(exc).splitlines()[0]}")


def sweep_cells(spec: BenchSpec) -> List[Cell]:
    algorithms = sorted(set(spec.algorithms))
    cells = []
    for alg in algorithms:
        for n in sorted(spec.nodes):
            for m in sorted(spec.msg_bytes):
                if alg == "nvrar":
                    grid = sorted(spec.bc_grid(), key=lambda bc: (bc[0], bc[1] or 0))
                    cells.extend(Cell(alg, n, m, b, c) for b, c in grid)
                else:
                    cells.append(Cell(alg, n, m))
    return cells


def result_row(spec: BenchSpec, res: CellResult, baseline_mean=None, best=True) -> dict:
    cell = res.cell
    nvrar = cell.algorithm == "nvrar"
    row = dict(algorithm=cell.algorithm, nodes=cell.nodes, gpus_per_node=spec.gpus_per_node,
               msg_bytes=cell.msg_bytes,
               blocks=(cell.blocks or 1) if nvrar else "",
               chunk_bytes=(cell.chunk_bytes or "auto") if nvrar else "",
               transport=spec.transport, iters=spec.iters, mean_us="", model_us="",
               model_ratio="", speedup_vs_baseline="", correct="", best="", error=res.error)
    if res.error:
        return row
    row.update(mean_us=us(res.mean), model_us=us(res.model),
               correct="pass" if res.correct else "FAIL", best=int(best))
    if res.mean:
        row["model_ratio"] = ratio(Fraction(res.model) / Fraction(res.mean)
                                   if spec.transport == "virtual" else res.model / res.mean)
        if baseline_mean is not None:
            row["speedup_vs_baseline"] = ratio(baseline_mean / res.mean)
    return row


def run_sweep(spec: BenchSpec, jobs: int = 1) -> List[dict]:
    """All cells in deterministic order, with baseline speedups and best-(B, C) flags.

    Speedups are filled in only when the baseline algorithm is part of the sweep.
    """
    cells = sweep_cells(spec)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_safe_cell, [spec] * len(cells), cells))
    else:
        results = [_safe_cell(spec, c) for c in cells]

    baseline = {(r.cell.nodes, r.cell.msg_bytes): r.mean for r in results
                if r.cell.algorithm == spec.baseline and not r.error}
    best = {}
    for r in results:
        if r.error:
            continue
        key = (r.cell.algorithm, r.cell.nodes, r.cell.msg_bytes)
        if key not in best or r.mean < best[key].mean:
            best[key] = r
    rows = []
    for r in results:
        key = (r.cell.algorithm, r.cell.nodes, r.cell.msg_bytes)
        rows.append(result_row(spec, r, baseline.get((r.cell.nodes, r.cell.msg_bytes)),
                               best.get(key) is r))
    return rows


# -- TP decode estimate -----------------------------------------------------------

def estimate_rows(spec: BenchSpec) -> List[dict]:
    """One row per algorithm for the first configured node count."""
    params = spec.cost_params()
    workload = DecodeWorkload(spec.batch_size, spec.hidden_dim, BYTES_PER_ELEMENT[spec.elem],
                              spec.num_layers)
    machine = GemmMachine(spec.tile_m, spec.tile_n, Fraction(spec.tile_cost_ns) / 10**9)
    gemm = GemmShape(spec.batch_size, spec.hidden_dim, spec.gemm_k or 7 * spec.hidden_dim)
    topo = ClusterTopology(spec.nodes[0], spec.gpus_per_node)
    ring = tp_decode_step_time(workload, topo, params, machine, "ring", gemm)
    rows = []
    for alg in spec.algorithms:
        est = tp_decode_step_time(workload, topo, params, machine, alg, gemm)
        speed = est.speedup_vs(ring)
        rows.append(dict(algorithm=alg, step_time_us=us(est.step_time),
                         comm_us=us(est.comm_time), gemm_us=us(est.gemm_time),
                         speedup_vs_ring="inf" if math.isinf(speed) else ratio(speed)))
    return rows
