"""Monte Carlo runner, sweeps and CSV / plot-data output.

Every run draws its geometry, fading, data and noise from substreams keyed
by ``(seed, run, purpose, ...)``, so a run's result does not depend on
which worker executes it. Sweep points reuse the same run keys (common
random numbers), which keeps trend comparisons low-variance.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, channel, parkron, tbt
from .config import (
    ALS_INIT,
    DATA,
    FADING,
    GEOMETRY,
    STAGE1_NOISE,
    STAGE2_NOISE,
    ConfigError,
    SystemConfig,
    substream,
)

log = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "CSV_HEADER",
    "ExperimentSpec",
    "RunRecord",
    "SummaryRow",
    "nmse",
    "nmse_db",
    "run_once",
    "run_scenario",
    "point_config",
    "run_sweep",
    "emit_outputs",
]

METHODS = ("parkron", "ls", "krf")
CSV_HEADER = ("method", "sweep_name", "sweep_value", "metric", "mean", "stderr", "runs")
SWEEP_AXES = ("snr_db", "Tp", "N")

# Failures that invalidate a single run without stopping the experiment.
RUN_ERRORS = (parkron.EstimationError, parkron.NumericalError, np.linalg.LinAlgError, ValueError)


def nmse(Q_true, Q_hat):
    """``||Q - Q_hat||_F^2 / ||Q||_F^2``.

    Raises
    ------
    ValueError
        On a shape mismatch or an all-zero reference.
    """
    Q_true = np.asarray(Q_true)
    Q_hat = np.asarray(Q_hat)
    if Q_true.shape != Q_hat.shape:
        raise ValueError(f"shape mismatch {Q_true.shape} vs {Q_hat.shape}")
    ref = np.linalg.norm(Q_true) ** 2
    if ref == 0:
        raise ValueError("NMSE reference is zero")
    return float(np.linalg.norm(Q_true - Q_hat) ** 2 / ref)


def nmse_db(value):
    return 10.0 * math.log10(value) if value > 0 else -math.inf


@dataclass
class ExperimentSpec:
    config: SystemConfig = field(default_factory=SystemConfig)
    sweep_name: str | None = None
    values: tuple = ()
    runs: int = 200
    methods: tuple = METHODS
    seed: int = 0
    workers: int = 1
    nmse_frames: str = "all"   # "all" or "first"

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.sweep_name is not None and self.sweep_name not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.sweep_name!r}")
        if self.nmse_frames not in ("all", "first"):
            raise ValueError("nmse_frames must be 'all' or 'first'")


@dataclass
class RunRecord:
    """Per-run, per-method metrics; ``None`` marks a metric the method lacks."""

    method: str
    run: int
    ok: bool = True
    error: str = ""
    nmse_r: float | None = None
    nmse_r_als: float | None = None
    nmse_w: float | None = None
    nmse_w_blocks: list = field(default_factory=list)
    bit_errors: int | None = None
    bits: int | None = None
    als_iterations: int | None = None
    bals_iterations: float | None = None
    wall_time: float = 0.0

    @property
    def ber(self):
        return None if self.bits is None else self.bit_errors / self.bits


def _frames(config, nmse_frames):
    return range(1) if nmse_frames == "first" else range(config.I)


def _failed(methods, run, exc):
    msg = f"{type(exc).__name__}: {exc}"
    return [RunRecord(method=m, run=run, ok=False, error=msg) for m in methods]


def run_once(config, run, seed=0, methods=METHODS, nmse_frames="all"):
    """Simulate one Monte Carlo run; returns one :class:`RunRecord` per method.

    Any estimation failure marks every method of this run as failed.
    """
    t0 = time.perf_counter()
    try:
        records = _simulate(config, run, seed, methods, nmse_frames)
    except RUN_ERRORS as exc:
        log.warning("run %d failed: %s", run, exc)
        return _failed(methods, run, exc)
    elapsed = time.perf_counter() - t0
    for r in records:
        r.wall_time = elapsed
    return records


def _simulate(config, run, seed, methods, nmse_frames):
    cfg = config
    design = channel.design_training(cfg)
    geo = channel.draw_geometry(cfg, substream(seed, run, GEOMETRY))
    traj = channel.evolve_fading(cfg, substream(seed, run, FADING))
    ch = channel.realize_channels(geo, traj, cfg)
    noise1 = [substream(seed, run, STAGE1_NOISE, i) for i in range(cfg.I)]
    ys = [channel.synthesize_stage1(ch, design, cfg, i, noise1[i]) for i in range(cfg.I)]
    frames = _frames(cfg, nmse_frames)
    R_true = [ch.combined(i) for i in range(cfg.I)]

    # Stage 1 always runs: its IRS vector drives the Stage-2 signal for all methods.
    est = parkron.run_stage1(ys, design, cfg, ch.A_rx, substream(seed, run, ALS_INIT))
    s_opt = est.s_opt
    data = [channel.draw_data(cfg, substream(seed, run, DATA, i)) for i in range(cfg.I)]
    blocks = [
        channel.synthesize_stage2(ch, design, s_opt, data[i][1], cfg, i,
                                  substream(seed, run, STAGE2_NOISE, i))
        for i in range(cfg.I)
    ]
    W_true = [[ch.effective(i, k, s_opt) for k in range(1, cfg.K + 1)] for i in range(cfg.I)]

    out = []
    for method in methods:
        rec = RunRecord(method=method, run=run)
        if method == "ls":
            rec.nmse_r = float(np.mean([nmse(R_true[i], est.R_ls[i]) for i in frames]))
        elif method == "parkron":
            rec.nmse_r = float(np.mean([nmse(R_true[i], est.R_hat[i]) for i in frames]))
            rec.nmse_r_als = float(np.mean([nmse(R_true[i], est.R_als[i]) for i in frames]))
            rec.als_iterations = est.als.iterations
            per_block = np.zeros(cfg.K)
            errors, bits, iters = 0, 0, []
            for i in range(cfg.I):
                fd = tbt.track_frame(
                    blocks[i], design.Xp, ch.A_rx, est.A_tx, est.B_rx, est.B_tx, s_opt,
                    tol=cfg.bals_tol, max_iter=cfg.bals_max_iter,
                )
                per_block += [nmse(W_true[i][k], fd.W_hat[k]) for k in range(cfg.K)]
                e, n, _ = tbt.bit_error_rate(fd.state.X, data[i][0])
                errors += e
                bits += n
                iters.append(fd.state.iterations)
            per_block /= cfg.I
            rec.nmse_w_blocks = per_block.tolist()
            rec.nmse_w = float(per_block.mean())
            rec.bit_errors, rec.bits = errors, bits
            rec.bals_iterations = float(np.mean(iters))
        elif method == "krf":
            kb = baselines.krf_static_baseline(est.R_ls, s_opt, cfg.M, cfg.Q)
            rec.nmse_r = float(np.mean([nmse(R_true[i], kb.R_hat[i]) for i in frames]))
            per_block = np.zeros(cfg.K)
            errors, bits = 0, 0
            for i in range(cfg.I):
                per_block += [nmse(W_true[i][k], kb.W_hat[i]) for k in range(cfg.K)]
                X_hat = baselines.zf_detect(kb.W_hat[i], blocks[i][:, :, cfg.Tp:])
                for k in range(cfg.K):
                    e, n, _ = tbt.bit_error_rate(X_hat[k], data[i][0])
                    errors += e
                    bits += n
            per_block /= cfg.I
            rec.nmse_w_blocks = per_block.tolist()
            rec.nmse_w = float(per_block.mean())
            rec.bit_errors, rec.bits = errors, bits
        out.append(rec)
    return out


def _run_task(args):
    return run_once(*args)


def run_scenario(spec, config=None):
    """All runs of one configuration; returns a flat list of :class:`RunRecord`.

    Records are ordered by run index, then method, whatever ``workers`` is.
    """
    config = spec.config if config is None else config
    tasks = [(config, r, spec.seed, tuple(spec.methods), spec.nmse_frames) for r in range(spec.runs)]
    if spec.workers > 1 and spec.runs > 1:
        chunk = max(1, spec.runs // (4 * spec.workers))
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=chunk))
    else:
        results = [_run_task(t) for t in tasks]
    return [rec for recs in results for rec in recs]


@dataclass(frozen=True)
class SummaryRow:
    method: str
    sweep_name: str
    sweep_value: object
    metric: str
    mean: float
    stderr: float
    runs: int

    def as_tuple(self):
        return (self.method, self.sweep_name, self.sweep_value, self.metric,
                self.mean, self.stderr, self.runs)


def _mean_stderr(values):
    n = len(values)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def summarize(records, sweep_name="", sweep_value=""):
    """Aggregate run records into one row per ``(method, metric)``.

    NMSE is averaged in linear scale; the ``*_db`` rows convert that mean
    (stderr by first-order propagation). BER is total errors over total
    bits. Failed runs are excluded and counted under ``runs_failed``.
    """
    rows = []
    methods = list(dict.fromkeys(r.method for r in records))
    for m in methods:
        recs = [r for r in records if r.method == m]
        good = [r for r in recs if r.ok]
        n = len(good)
        add = lambda metric, mean, se: rows.append(
            SummaryRow(m, sweep_name, sweep_value, metric, mean, se, n))
        for metric in ("nmse_r", "nmse_r_als", "nmse_w"):
            vals = [getattr(r, metric) for r in good if getattr(r, metric) is not None]
            if not vals:
                continue
            mean, se = _mean_stderr(vals)
            add(metric, mean, se)
            add(metric + "_db", nmse_db(mean), 10.0 / math.log(10) * se / mean if mean > 0 else math.nan)
        with_bits = [r for r in good if r.bits is not None]
        if with_bits:
            total = sum(r.bits for r in with_bits)
            errs = sum(r.bit_errors for r in with_bits)
            _, se = _mean_stderr([r.ber for r in with_bits])
            add("ber", errs / total, se)
        if good and good[0].nmse_w_blocks:
            for k in range(len(good[0].nmse_w_blocks)):
                mean, se = _mean_stderr([r.nmse_w_blocks[k] for r in good])
                add(f"nmse_w_block{k + 2}", mean, se)
        rows.append(SummaryRow(m, sweep_name, sweep_value, "runs_failed", float(len(recs) - n), 0.0, n))
    return rows


def point_config(base, sweep_name, value):
    """Configuration of one sweep point.

    ``Tp`` keeps the block length ``Tp + Td`` fixed; ``N`` resets
    ``T0 = Q*N`` and the IRS split.

    Raises
    ------
    ConfigError
        If the point violates a configuration invariant.
    """
    if sweep_name is None:
        return base
    if sweep_name == "snr_db":
        return base.replace(snr_db=float(value))
    if sweep_name == "Tp":
        return base.replace(Tp=int(value), Td=base.T - int(value))
    if sweep_name == "N":
        return base.replace(N=int(value), T0=base.Q * int(value))
    raise ValueError(f"unknown sweep axis {sweep_name!r}")


@dataclass
class SweepResult:
    rows: list
    records: dict          # sweep value -> list of RunRecord
    skipped: list          # (value, reason)


def run_sweep(spec):
    """Run every sweep point; invalid points are skipped with a warning."""
    values = spec.values if spec.sweep_name is not None else (None,)
    rows, records, skipped = [], {}, []
    for value in values:
        try:
            cfg = point_config(spec.config, spec.sweep_name, value)
        except ConfigError as exc:
            log.warning("skipping %s=%s: %s", spec.sweep_name, value, exc)
            skipped.append((value, str(exc)))
            continue
        recs = run_scenario(spec, cfg)
        records[value] = recs
        rows.extend(summarize(recs, spec.sweep_name or "", "" if value is None else value))
    return SweepResult(rows=rows, records=records, skipped=skipped)


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_outputs(rows, path):
    """Write ``results.csv`` and one plot-data file per ``(method, metric)``.

    Returns the list of written paths. Numbers use ``repr`` so re-emitting
    identical rows yields byte-identical files.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    main = out / "results.csv"
    with main.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow([_fmt(v) for v in row.as_tuple()])
    written.append(main)

    groups = {}
    for row in rows:
        groups.setdefault((row.method, row.metric), []).append(row)
    for (method, metric), group in groups.items():
        p = out / f"plot_{method}_{metric}.csv"
        with p.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("x", "mean", "stderr"))
            for row in group:
                w.writerow([_fmt(row.sweep_value), _fmt(row.mean), _fmt(row.stderr)])
        written.append(p)
    return written
