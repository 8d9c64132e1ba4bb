"""Experiment loop: task stream, reinit at chunk boundaries, metric logging, resume.

Layout of one run (``<output_dir>/<name>/<method>-seed<k>/``)::

    metrics.csv                  one MetricRecord per line, flushed per epoch
    checkpoints/chunk03-pre/     weights at the end of chunk 2
    checkpoints/chunk03-post/    weights after the chunk-3 reinit

Every random draw (batch order, reinit draws, probe subsets) is seeded from
``(seed, chunk, ...)`` alone, and optimizer state is rebuilt at each chunk
start, so a run can resume from any post-reinit checkpoint and reproduce the
uninterrupted records exactly.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from firereinit import metrics
from firereinit.baselines import apply_reinit
from firereinit.checkpoint import load_checkpoint, save_checkpoint
from firereinit.config import ExperimentConfig
from firereinit.data import Split, TaskStream, build_stream, generate_dataset
from firereinit.nn import OptimizerState, _loss_and_dlogits, forward, init_network, train_step
from firereinit.orthogonalize import NsCoefficients, dense_scale, ns_trajectory
from firereinit.params import NetworkParams

log = logging.getLogger(__name__)

SCHEMA = "firereinit-metrics v1"

# purposes mixed into per-(seed, chunk) seed sequences
_INIT, _REINIT, _SHUFFLE, _PROBE, _HESSIAN = range(5)

HESSIAN_TOL = 1e-4
HESSIAN_MAX_ITER = 300


@dataclass
class MetricRecord:
    run_id: str
    method: str
    seed: int
    chunk: int
    epoch: int
    split: str
    loss: float
    accuracy: float
    pre_reset_accuracy: float | None
    dfi_mean: float
    dfi_layers: str
    sfe_reinit: float
    srank: int | None
    dormant: int | None
    hessian_sigma_max: float | None
    wall_clock: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        if self.chunk < 0 or self.epoch < 0:
            raise ValueError("chunk and epoch must be nonnegative")
        if self.split not in ("train", "test"):
            raise ValueError(f"unknown split {self.split!r}")


COLUMNS = [f.name for f in fields(MetricRecord)]
_INT_COLS = {"seed", "chunk", "epoch", "srank", "dormant"}
_STR_COLS = {"run_id", "method", "split", "dfi_layers"}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def record_to_row(r: MetricRecord) -> list[str]:
    return [_fmt(getattr(r, c)) for c in COLUMNS]


def read_records(path) -> list[MetricRecord]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read metrics file {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        kw = {}
        for c in COLUMNS:
            v = row[c]
            if c in _STR_COLS:
                kw[c] = v
            elif v == "":
                kw[c] = None
            elif c in _INT_COLS:
                kw[c] = int(v)
            else:
                kw[c] = float(v)
        out.append(MetricRecord(**kw))
    return out


class MetricsWriter:
    """Appends records to a CSV and flushes after every batch of rows."""

    def __init__(self, path: Path, keep: list[MetricRecord] | None = None):
        self.path = path
        try:
            self._fh = path.open("w", encoding="utf-8", newline="")
        except OSError as exc:
            raise OSError(f"cannot open metrics file {path}: {exc}") from exc
        self._fh.write(f"# {SCHEMA}\n")
        self._csv = csv.writer(self._fh)
        self._csv.writerow(COLUMNS)
        for r in keep or []:
            self._csv.writerow(record_to_row(r))
        self._fh.flush()

    def write(self, records: list[MetricRecord]) -> None:
        for r in records:
            self._csv.writerow(record_to_row(r))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def csv_without_wall_clock(path) -> str:
    """CSV text with the wall-clock column dropped, for determinism checks."""
    buf = io.StringIO()
    w = csv.writer(buf)
    for rec in read_records(path):
        row = record_to_row(rec)
        w.writerow(row[:-1])
    return buf.getvalue()


def _rng(seed: int, chunk: int, purpose: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, chunk, purpose, *extra]))


def _event_seed(seed: int, chunk: int) -> int:
    return int(_rng(seed, chunk, _REINIT).integers(2**31))


def run_id_for(cfg: ExperimentConfig, seed: int) -> str:
    return f"{cfg.method_label}-seed{seed}"


def run_dir_for(cfg: ExperimentConfig, seed: int) -> Path:
    return Path(cfg.output_dir) / cfg.name / run_id_for(cfg, seed)


@dataclass
class ChunkData:
    train: Split
    test: Split
    probe: Split


def _chunk_data(stream: TaskStream, train: Split, test: Split, chunk: int,
                probe_samples: int) -> ChunkData:
    ctrain = train.subset(stream.train_indices[chunk])
    seen = np.isin(test.y, stream.classes[chunk])
    ctest = test.subset(np.flatnonzero(seen))
    probe = ctest.subset(np.arange(min(probe_samples, len(ctest))))
    return ChunkData(ctrain, ctest, probe)


def _evaluate(params: NetworkParams, split: Split, loss_kind: str):
    logits, cache = forward(params, split.x)
    value = _loss_and_dlogits(logits, split.y, loss_kind)[0]
    acc = float(np.mean(np.argmax(logits, axis=1) == split.y))
    return value, acc, cache


def _layer_dfis(params: NetworkParams) -> list[float]:
    return [metrics.dfi(lw.weight) for lw in params.layers]


def _feature_stats(params: NetworkParams, probe: Split, cfg: ExperimentConfig):
    """srank of the last hidden features and dormant units summed over hidden layers."""
    cache = forward(params, probe.x)[1]
    hidden = cache.activations
    if not hidden:
        return None, None
    rank = metrics.feature_srank(hidden[-1], cfg.delta)
    dormant = sum(
        metrics.dormant_count(metrics.empirical_activity_scores(h), cfg.dormant_tau)
        for h in hidden
    )
    return rank, dormant


def _redo_activations(params: NetworkParams, x: np.ndarray) -> list:
    cache = forward(params, x)[1]
    return [h if g is not None else None for h, g in zip(cache.inputs[1:], cache.gates)]


def _hessian(params: NetworkParams, data: Split, cfg: ExperimentConfig, seed: int,
             chunk: int) -> float:
    rng = _rng(seed, chunk, _HESSIAN)
    k = min(cfg.hessian_samples, len(data))
    idx = np.sort(rng.choice(len(data), size=k, replace=False))
    est = metrics.hessian_sigma_max(params, data.x[idx], data.y[idx], cfg.train.loss_kind,
                                    tol=HESSIAN_TOL, max_iter=HESSIAN_MAX_ITER,
                                    seed=int(rng.integers(2**31)))
    return est.value


class _Clock:
    def __init__(self):
        self.start = time.perf_counter()

    def __call__(self) -> float:
        return time.perf_counter() - self.start


def _checkpoint_dir(run_dir: Path, chunk: int, stage: str) -> Path:
    return run_dir / "checkpoints" / f"chunk{chunk:02d}-{stage}"


def _resume_point(run_dir: Path, num_chunks: int) -> int:
    """Largest chunk whose post-reinit checkpoint is complete, or -1."""
    for c in range(num_chunks - 1, -1, -1):
        if (_checkpoint_dir(run_dir, c, "post") / "manifest.json").exists():
            return c
    return -1


def run_single(cfg: ExperimentConfig, seed: int, resume: bool = False,
               stop_after_chunk: int | None = None) -> list[MetricRecord]:
    """Run one seed; returns every record in the run's CSV.

    ``stop_after_chunk`` ends the run early (used to simulate interruption).
    """
    run_dir = run_dir_for(cfg, seed)
    run_id = run_id_for(cfg, seed)
    method = cfg.method_label
    train, test = generate_dataset(cfg.data)
    stream = build_stream(cfg.stream, train, cfg.data.num_classes)
    arch = cfg.architecture()
    loss_kind = cfg.train.loss_kind
    tcfg = dataclasses.replace(cfg.train, seed=seed)

    start_chunk = 0
    kept: list[MetricRecord] = []
    csv_path = run_dir / "metrics.csv"
    if resume:
        point = _resume_point(run_dir, len(stream))
        if point >= 0 and csv_path.exists():
            start_chunk = point
            kept = [r for r in read_records(csv_path) if r.chunk < point]
            log.info("%s: resuming at chunk %d", run_id, point)
    if start_chunk == 0 and run_dir.exists():
        shutil.rmtree(run_dir / "checkpoints", ignore_errors=True)
    run_dir.mkdir(parents=True, exist_ok=True)
    writer = MetricsWriter(csv_path, kept)
    clock = _Clock()
    records = list(kept)

    if start_chunk == 0:
        params = init_network(arch, int(_rng(seed, 0, _INIT).integers(2**31)))
        anchor = params
    else:
        params, _ = load_checkpoint(_checkpoint_dir(run_dir, start_chunk, "pre"))
        anchor, _ = load_checkpoint(_checkpoint_dir(run_dir, 0, "post"))

    try:
        last = len(stream) - 1 if stop_after_chunk is None else min(stop_after_chunk, len(stream) - 1)
        for chunk in range(start_chunk, last + 1):
            data = _chunk_data(stream, train, test, chunk, cfg.probe_samples)
            pre_acc = None
            sfe_reinit = 0.0
            if chunk > 0:
                save_checkpoint(_checkpoint_dir(run_dir, chunk, "pre"), params, seed, chunk)
                pre_acc = _evaluate(params, data.test, loss_kind)[1]
                acts = None
                if cfg.reinit.method == "redo":
                    sub = data.train.subset(np.arange(min(cfg.probe_samples, len(data.train))))
                    acts = _redo_activations(params, sub.x)
                post = apply_reinit(params, cfg.reinit, _event_seed(seed, chunk), acts)
                sfe_reinit = 0.0 if cfg.reinit.method == "none" else metrics.sfe_network(params, post)
                params = post
            save_checkpoint(_checkpoint_dir(run_dir, chunk, "post"), params, seed, chunk)
            measure_hessian = cfg.hessian and chunk > 0

            epochs = cfg.epochs_for_chunk(chunk)
            n = len(data.train)
            steps_per_epoch = math.ceil(n / tcfg.batch_size)
            state = OptimizerState(total_steps=epochs * steps_per_epoch)

            def log_epoch(epoch: int) -> list[MetricRecord]:
                dfis = _layer_dfis(params)
                dfi_mean = float(np.mean(dfis))
                dfi_str = ";".join(repr(d) for d in dfis)
                want_feats = epoch % cfg.metric_cadence == 0 or epoch == epochs
                rank, dormant = _feature_stats(params, data.probe, cfg) if want_feats else (None, None)
                hess = None
                if measure_hessian and epoch in (0, epochs):
                    hess = _hessian(params, data.train, cfg, seed, chunk)
                out = []
                for split_name, split in (("train", data.train), ("test", data.test)):
                    value, acc, _ = _evaluate(params, split, loss_kind)
                    out.append(MetricRecord(
                        run_id, method, seed, chunk, epoch, split_name, value, acc,
                        pre_acc if (epoch == 0 and split_name == "test") else None,
                        dfi_mean, dfi_str, sfe_reinit,
                        rank if split_name == "test" else None,
                        dormant if split_name == "test" else None,
                        hess, clock(),
                    ))
                writer.write(out)
                return out

            records += log_epoch(0)
            for epoch in range(1, epochs + 1):
                order = _rng(seed, chunk, _SHUFFLE, epoch).permutation(n)
                for b in range(steps_per_epoch):
                    idx = order[b * tcfg.batch_size:(b + 1) * tcfg.batch_size]
                    params, _ = train_step(params, data.train.x[idx], data.train.y[idx],
                                           tcfg, state, anchor)
                records += log_epoch(epoch)
            log.info("%s: chunk %d done, test acc %.4f", run_id, chunk, records[-1].accuracy)
        if stop_after_chunk is None or stop_after_chunk >= len(stream) - 1:
            save_checkpoint(run_dir / "checkpoints" / "final", params, seed, len(stream))
    finally:
        writer.close()
    return records


def _run_single_star(args):
    return run_single(*args)


def run_experiment(cfg: ExperimentConfig, resume: bool = False,
                   workers: int = 1) -> list[MetricRecord]:
    """Run every seed of ``cfg``; seeds are independent and may run in parallel."""
    jobs = [(cfg, s, resume) for s in cfg.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_single_star, jobs))
    else:
        results = [run_single(*j) for j in jobs]
    return [r for res in results for r in res]


# -- ablation over Newton-Schulz iteration counts ------------------------------


@dataclass
class TrajectoryPoint:
    run_id: str
    layer: int
    iteration: int
    dfi: float
    sfe: float


TRAJECTORY_COLUMNS = [f.name for f in fields(TrajectoryPoint)]


def ns_trajectories(weights: NetworkParams, max_iters: int, coeffs: NsCoefficients,
                    run_id: str = "") -> list[TrajectoryPoint]:
    """DfI of each Newton-Schulz iterate and SFE between the weights and the scaled iterate.

    Iteration 0 is the Frobenius-normalized input. DfI is taken on the raw
    iterate, whose singular values are the ones being driven to 1; SFE uses
    the iterate times the layer's dense scale, i.e. what FIRE would output
    after that many iterations.
    """
    out = []
    for i, lw in enumerate(weights.layers):
        w = lw.weight
        scale = dense_scale(*w.shape)
        for k, x in enumerate(ns_trajectory(w, max_iters, coeffs)):
            out.append(TrajectoryPoint(run_id, i, k, metrics.dfi(x), metrics.sfe(w, scale * x)))
    return out


def run_ablation_iters(cfg: ExperimentConfig, iters_list, resume: bool = False,
                       workers: int = 1) -> tuple[list[MetricRecord], list[TrajectoryPoint]]:
    """One FIRE run per iteration count, plus NS trajectories on final pre-reset weights.

    Runs land in ``<name>/ablate-k<k>/``; trajectories are written to
    ``<output_dir>/<name>/trajectory.csv``, one block per seed, computed on
    the pre-reinit checkpoint of the last chunk of the run that uses the
    config's own iteration count (the first count when it is not listed).
    """
    iters_list = [int(k) for k in iters_list]
    if not iters_list:
        raise ValueError("iters_list must be nonempty")
    if any(k < 1 for k in iters_list):
        raise ValueError("iteration counts must be >= 1")
    records = []
    base_k = cfg.reinit.iters if cfg.reinit.iters in iters_list else iters_list[0]
    base_cfg = None
    for k in iters_list:
        sub = dataclasses.replace(
            cfg,
            name=f"{cfg.name}/ablate-k{k}",
            reinit=dataclasses.replace(cfg.reinit, method="fire", iters=k),
        )
        if k == base_k:
            base_cfg = sub
        records += run_experiment(sub, resume=resume, workers=workers)
    coeffs = NsCoefficients.from_name(cfg.reinit.coeffs)
    last_chunk = cfg.stream.chunks - 1
    traj: list[TrajectoryPoint] = []
    if last_chunk >= 1:
        for s in cfg.seeds:
            ckpt = _checkpoint_dir(run_dir_for(base_cfg, s), last_chunk, "pre")
            weights, _ = load_checkpoint(ckpt)
            traj += ns_trajectories(weights, max(max(iters_list), 1), coeffs, run_id_for(base_cfg, s))
    path = Path(cfg.output_dir) / cfg.name / "trajectory.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for p in traj:
            w.writerow([_fmt(getattr(p, c)) for c in TRAJECTORY_COLUMNS])
    return records, traj
