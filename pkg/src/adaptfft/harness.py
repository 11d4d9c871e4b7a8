"""Verification, volume, benchmark and tuning drivers behind the CLI.

Each ``cmd_*`` function takes a :class:`BenchConfig`, runs the requested ranks
and returns a list of row dicts (plus a pass flag where it applies). Rows
share the columns in :data:`BASE_COLUMNS`; commands append their own extras.
Times are seconds, volumes are bytes.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .comm import PHASE_ABC_CAB, PHASE_CAB_CBA, CommMethod, UserSelect, allgather_floats, parse_method
from .decomposition import RankInfo, check_supported, form_for
from .engine import TimingBreakdown, init
from .grid import DimOrder, GridDims, global_view
from .oracle import DEFAULT_CAP, oracle_dft3, seeded_input
from .transpose import pipeline_volume
from .transports import read_ranks_file, socket_spawn, threaded_spawn

log = logging.getLogger(__name__)

BASE_COLUMNS = (
    "method", "np", "dims",
    "comm_s", "fft_s", "buf_comm_s", "buf_fft_s", "others_s", "total_s",
    "bytes_theory", "bytes_measured",
)
EXTRA_COLUMNS = {
    "verify": ("max_abs_err", "passed"),
    "volume": ("form", "per_rank_match", "passed"),
    "bench": ("executions",),
    "tune": ("selected", "tuning_runs"),
}
DEFAULT_TOLERANCE = 1e-10
TRANSPOSE_PHASES = (PHASE_ABC_CAB, PHASE_CAB_CBA)


@dataclass
class BenchConfig:
    dims: GridDims
    nprocs: list[int] = field(default_factory=lambda: [4])
    method: str = "all"
    transport: str = "threads"
    ranks_file: Optional[str] = None
    rank: Optional[int] = None
    repeats: int = 10
    tune_reps: int = 2
    seed: int = 0
    fmt: str = "csv"
    out: Optional[str] = None
    b_size: int = 32
    tolerance: float = DEFAULT_TOLERANCE
    oracle_cap: int = DEFAULT_CAP
    completion_order: Optional[str] = None

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.tune_reps < 1:
            raise ValueError("tune_reps must be >= 1")
        if self.transport not in ("threads", "sockets"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.fmt not in ("csv", "json"):
            raise ValueError(f"unknown format {self.fmt!r}")

    def methods(self):
        """Methods to sweep: ``all`` expands to the six concrete ones."""
        if self.method.strip().lower() == "all":
            return list(CommMethod.concrete())
        return [parse_method(m) for m in self.method.split(",")]

    def as_dict(self):
        d = asdict(self)
        d["dims"] = str(self.dims)
        return d


def method_label(method) -> str:
    if method is None:
        return "default"
    if isinstance(method, UserSelect):
        return f"user-select:{method.method.value}"
    return method.value


def spawn(cfg: BenchConfig, nprocs: int, rank_main: Callable):
    """Run ``rank_main(transport)`` on every rank hosted here; return rank 0's result.

    Returns ``None`` when rank 0 runs in another process.
    """
    if cfg.transport == "threads":
        return threaded_spawn(nprocs, rank_main, completion_order=cfg.completion_order)[0]
    table = read_ranks_file(cfg.ranks_file) if cfg.ranks_file else None
    ranks = None if cfg.rank is None else [cfg.rank]
    res = socket_spawn(nprocs, rank_main, address_table=table, ranks=ranks, completion_order=cfg.completion_order)
    return res.get(0)


def _timing_row(method, nprocs, dims, timing: TimingBreakdown, theory, measured):
    return {
        "method": method,
        "np": nprocs,
        "dims": str(dims),
        "comm_s": timing.communication,
        "fft_s": timing.fft,
        "buf_comm_s": timing.buffer_comm,
        "buf_fft_s": timing.buffer_fft,
        "others_s": timing.others,
        "total_s": timing.total,
        "bytes_theory": theory,
        "bytes_measured": measured,
    }


def _transpose_bytes(transport) -> int:
    return sum(transport.bytes_sent(TRANSPOSE_PHASES).values())


def _slowest(per_rank: np.ndarray) -> np.ndarray:
    """Breakdown of the rank with the largest total, so categories still add up."""
    per_rank = np.asarray(per_rank)
    return np.take_along_axis(per_rank, per_rank[..., -1].argmax(axis=0)[None, ..., None], axis=0)[0]


def _max_timing(transport, timing: TimingBreakdown) -> TimingBreakdown:
    return TimingBreakdown.from_array(_slowest(allgather_floats(transport, timing.as_array())))


def run_once(cfg: BenchConfig, nprocs: int, method, global_in: np.ndarray, keep_output=True):
    """One collective transform of ``global_in``; rank 0's summary dict.

    Keys: ``output`` ((n1, n2, n3) array, or ``None`` if not kept),
    ``method`` (installed), ``per_rank_bytes`` (transport-measured, transpose
    phases only), ``timing`` (breakdown of the slowest rank).
    """
    dims = cfg.dims
    flat_in = np.ascontiguousarray(global_in).reshape(-1)

    def rank_main(tr):
        ctx = init(dims, RankInfo(tr.rank, tr.size), method, tr, tune_reps=cfg.tune_reps, b_size=cfg.b_size)
        tr.reset_counters()
        s = ctx.in_slab
        local_out = ctx.execute(flat_in[s.x_start : s.stop]).copy()
        measured = allgather_floats(tr, [_transpose_bytes(tr)])[:, 0]
        timing = _max_timing(tr, ctx.last_timing)
        full = ctx.gather(local_out) if keep_output else None
        installed = ctx.method
        ctx.finalize()
        return {
            "output": None if full is None else global_view(full, dims, DimOrder.CBA),
            "method": installed,
            "per_rank_bytes": [int(v) for v in measured],
            "timing": timing,
        }

    return spawn(cfg, nprocs, rank_main)


def _check_np(cfg, nprocs):
    check_supported(cfg.dims, nprocs)


def cmd_verify(cfg: BenchConfig) -> tuple[list[dict], bool]:
    dims = cfg.dims
    global_in = seeded_input(dims, cfg.seed)
    expected = oracle_dft3(global_in, dims, cap=cfg.oracle_cap)
    rows, ok = [], True
    for nprocs in cfg.nprocs:
        _check_np(cfg, nprocs)
        theory = pipeline_volume(dims, nprocs).total_bytes
        for method in cfg.methods():
            res = run_once(cfg, nprocs, method, global_in)
            if res is None:
                continue
            err = float(np.abs(res["output"] - expected).max())
            passed = err <= cfg.tolerance
            ok &= passed
            row = _timing_row(method_label(method), nprocs, dims, res["timing"], theory, sum(res["per_rank_bytes"]))
            row.update(max_abs_err=err, passed=passed)
            rows.append(row)
            log.info("verify %s np=%d %s: max abs err %.3e %s", dims, nprocs, row["method"], err,
                     "PASS" if passed else "FAIL")
    return rows, ok


def cmd_volume(cfg: BenchConfig) -> tuple[list[dict], bool]:
    dims = cfg.dims
    global_in = seeded_input(dims, cfg.seed)
    rows, ok = [], True
    for nprocs in cfg.nprocs:
        _check_np(cfg, nprocs)
        report = pipeline_volume(dims, nprocs)
        for method in cfg.methods():
            res = run_once(cfg, nprocs, method, global_in, keep_output=False)
            if res is None:
                continue
            measured = res["per_rank_bytes"]
            per_rank_match = list(report.per_rank_bytes) == measured
            passed = per_rank_match and sum(measured) == report.total_bytes
            ok &= passed
            row = _timing_row(method_label(method), nprocs, dims, res["timing"], report.total_bytes, sum(measured))
            row.update(form=form_for(dims, DimOrder.ABC, nprocs).value, per_rank_match=per_rank_match, passed=passed)
            rows.append(row)
    return rows, ok


def cmd_bench(cfg: BenchConfig) -> list[dict]:
    """Per method: ``repeats`` timed executions, slowest rank of each, averaged."""
    dims = cfg.dims
    global_in = seeded_input(dims, cfg.seed).reshape(-1)
    rows = []
    for nprocs in cfg.nprocs:
        _check_np(cfg, nprocs)
        theory = pipeline_volume(dims, nprocs).total_bytes
        for method in cfg.methods():
            fixed = UserSelect(method) if isinstance(method, CommMethod) and method is not CommMethod.AUTO else method

            def rank_main(tr, fixed=fixed):
                ctx = init(dims, RankInfo(tr.rank, tr.size), fixed, tr, tune_reps=cfg.tune_reps, b_size=cfg.b_size)
                tr.reset_counters()
                s = ctx.in_slab
                local_in = global_in[s.x_start : s.stop].copy()
                per_exec = np.empty((cfg.repeats, 6))
                for i in range(cfg.repeats):
                    ctx.execute(local_in)
                    per_exec[i] = ctx.last_timing.as_array()
                gathered = allgather_floats(tr, per_exec.reshape(-1)).reshape(tr.size, cfg.repeats, 6)
                measured = allgather_floats(tr, [_transpose_bytes(tr)])[:, 0].sum()
                res = {
                    "timing": TimingBreakdown.from_array(_slowest(gathered).mean(axis=0)),
                    "executions": ctx.executions,
                    "bytes": int(measured) // cfg.repeats,
                    "method": ctx.method,
                }
                ctx.finalize()
                return res

            res = spawn(cfg, nprocs, rank_main)
            if res is None:
                continue
            label = method_label(method)
            if method is CommMethod.AUTO:
                label = f"auto:{res['method'].value}"
            row = _timing_row(label, nprocs, dims, res["timing"], theory, res["bytes"])
            row.update(executions=res["executions"])
            rows.append(row)
    return rows


def cmd_tune(cfg: BenchConfig) -> list[dict]:
    """Run auto-tuning (or the forced method) and report per-method medians."""
    dims = cfg.dims
    method = parse_method(cfg.method) if cfg.method.lower() not in ("all",) else CommMethod.AUTO
    rows = []
    for nprocs in cfg.nprocs:
        _check_np(cfg, nprocs)
        theory = pipeline_volume(dims, nprocs).total_bytes

        def rank_main(tr):
            ctx = init(dims, RankInfo(tr.rank, tr.size), method, tr, tune_reps=cfg.tune_reps, b_size=cfg.b_size)
            res = {"selected": ctx.method, "medians": dict(ctx.tuning_medians), "tuning_runs": ctx.tuning_runs}
            ctx.finalize()
            return res

        res = spawn(cfg, nprocs, rank_main)
        if res is None:
            continue
        log.info("tune %s np=%d: %d tuning executions, selected %s", dims, nprocs, res["tuning_runs"],
                 res["selected"].value)
        if not res["medians"]:
            row = _timing_row(method_label(method), nprocs, dims, TimingBreakdown(), theory, None)
            row.update(selected=res["selected"].value, tuning_runs=res["tuning_runs"])
            rows.append(row)
        for m, median in res["medians"].items():
            row = _timing_row(m.value, nprocs, dims, TimingBreakdown(total=median), theory, None)
            row.update(selected=m is res["selected"], tuning_runs=res["tuning_runs"])
            rows.append(row)
    return rows


def render(rows: list[dict], command: str, cfg: BenchConfig) -> str:
    columns = list(BASE_COLUMNS) + list(EXTRA_COLUMNS.get(command, ()))
    if cfg.fmt == "json":
        return json.dumps(
            {"config": cfg.as_dict(), "rows": [{c: r.get(c) for c in columns} for r in rows]}, indent=2
        ) + "\n"
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: ("" if r.get(c) is None else r.get(c)) for c in columns})
    return buf.getvalue()
