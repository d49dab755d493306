"""Experiment runner: seeded repetitions, evaluation matrices and CSV reports.

For every repetition the harness draws one block-cyclic stream from the task,
trains the requested strategies on it, and evaluates each checkpoint on every
test component.  Per day ``k`` and strategy the component metrics are:

* consensus, i.i.d.: column means of the ``m x m`` matrix ``A[i, j]`` (model
  after block ``i``, test component ``j``), so the day score is ``mean(A)``;
* pluralistic: the diagonal ``A[j, j]``;
* per-component: chain ``j`` after its ``k``-th block, on component ``j``.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import platform
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .core import make_rng
from .engine import SGDConfig
from .errors import BlockCyclicError, ConfigError
from .strategies import run_consensus, run_per_component
from .tasks.text import DiurnalSizes, LogisticTask, SkewSpec, rows_digest, synthesize_diurnal_dataset

log = logging.getLogger(__name__)

STRATEGIES = ("consensus", "per_component", "pluralistic", "iid")
TASKS = ("diurnal", "dump", "sentiment140")

_STREAM, _SHUFFLE = 0, 2


@dataclass
class ExperimentConfig:
    task: str = "diurnal"
    task_params: dict = field(default_factory=dict)
    scale: str = "desk"
    strategies: tuple[str, ...] = STRATEGIES
    repetitions: int = 10
    seed: int = 0
    out: str | None = None
    B: float = 1e3
    use_projection: bool = False
    learning_rates: dict = field(default_factory=lambda: {"consensus": 1.0, "per_component": 2.0})
    lr_grid: tuple[float, ...] | None = None
    jobs: int = 1

    def __post_init__(self):
        self.strategies = tuple(self.strategies)
        if self.lr_grid is not None:
            self.lr_grid = tuple(float(x) for x in self.lr_grid)
        self.validate()

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASKS}")
        if not self.strategies:
            raise ConfigError("strategy list is empty")
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ConfigError(f"unknown strategies {bad}")
        if len(set(self.strategies)) != len(self.strategies):
            raise ConfigError("duplicate strategies")
        if not (isinstance(self.repetitions, int) and self.repetitions >= 1):
            raise ConfigError("repetitions must be a positive integer")
        if self.scale not in ("desk", "full"):
            raise ConfigError(f"unknown scale {self.scale!r}")
        if self.lr_grid is not None and (not self.lr_grid or min(self.lr_grid) <= 0):
            raise ConfigError("learning-rate grid must be non-empty and positive")
        if not self.B > 0:
            raise ConfigError("B must be positive")

    def rate(self, strategy: str) -> float:
        """Constant step size for ``strategy``; pluralistic and i.i.d. default to the consensus rate."""
        rates = self.learning_rates
        if strategy in rates:
            return float(rates[strategy])
        if strategy in ("pluralistic", "iid") and "consensus" in rates:
            return float(rates["consensus"])
        raise ConfigError(f"no learning rate for {strategy!r}")

    def sgd(self, strategy: str) -> SGDConfig:
        return SGDConfig(B=self.B, step_rule="constant", eta=self.rate(strategy),
                         use_projection=self.use_projection)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["strategies"] = list(self.strategies)
        d["lr_grid"] = None if self.lr_grid is None else list(self.lr_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if "config" in d and isinstance(d["config"], dict):
            d = d["config"]  # a run manifest
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def digest(self) -> str:
        """sha256 of the canonical JSON form, ignoring the output directory and job count."""
        d = self.to_dict()
        d.pop("out")
        d.pop("jobs")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def build_task(config: ExperimentConfig) -> LogisticTask:
    params = dict(config.task_params)
    if config.task == "diurnal":
        sizes = dataclasses.asdict(DiurnalSizes.preset(config.scale))
        sizes.update(params.pop("sizes", {}))
        rates = params.pop("rates", None)
        spec = SkewSpec(tuple(rates)) if rates is not None else SkewSpec.diurnal(params.pop("m", 6))
        data_seed = params.pop("data_seed", config.seed)
        try:
            return synthesize_diurnal_dataset(spec, DiurnalSizes(**sizes), seed=data_seed, **params)
        except TypeError as exc:
            raise ConfigError(f"bad diurnal task parameters: {exc}") from exc
    from .tasks.sentiment140 import ingest_sentiment140, load_dump
    if "path" not in params:
        raise ConfigError(f"task {config.task!r} needs task_params.path")
    if config.task == "dump":
        return load_dump(params["path"])
    rates = params.get("rates")
    return ingest_sentiment140(params["path"], SkewSpec(tuple(rates)) if rates else None,
                               split_seed=params.get("split_seed", config.seed),
                               K=params.get("K", 10), vocab_size=params.get("vocab_size", 1024))


@dataclass
class RepetitionResult:
    repetition: int
    # strategy -> (K, m) per-component metrics for each day
    metrics: dict
    # strategy -> (K, m, m) evaluation matrices (single-chain strategies only)
    matrices: dict
    digests: dict
    error: str | None = None


def _day_metrics(task: LogisticTask, checkpoints: np.ndarray, split: str, kind: str):
    K, m, _ = checkpoints.shape
    metrics = np.empty((K, m))
    matrices = np.empty((K, m, m)) if kind != "per_component" else None
    for k in range(K):
        A = task.accuracy_matrix(checkpoints[k], split)
        if kind == "per_component":
            metrics[k] = np.diag(A)
        else:
            matrices[k] = A
            metrics[k] = np.diag(A) if kind == "pluralistic" else A.mean(axis=0)
    return metrics, matrices


def run_repetition(task: LogisticTask, config: ExperimentConfig, rep: int, split: str = "test") -> RepetitionResult:
    """Train and evaluate every configured strategy on repetition ``rep``'s stream."""
    sched = task.schedule()
    stream = task.block_cyclic_stream(make_rng(config.seed, rep, _STREAM))
    metrics, matrices, digests = {}, {}, {"cyclic": rows_digest(stream)}
    chains = {}

    def chain(kind, rate, data, check):
        key = (kind, rate)
        if key not in chains:
            cfg = SGDConfig(B=config.B, step_rule="constant", eta=rate, use_projection=config.use_projection)
            if kind == "per_component":
                chains[key] = run_per_component(task, sched, cfg, stream=data).checkpoints
            else:
                chains[key] = run_consensus(task, sched, cfg, stream=data, check_components=check).checkpoints
        return chains[key]

    try:
        for strategy in config.strategies:
            rate = config.rate(strategy)
            if strategy == "iid":
                iid = task.iid_stream(stream, make_rng(config.seed, rep, _SHUFFLE))
                digests["iid"] = rows_digest(iid)
                ckpt = chain("iid", rate, iid, False)
                kind = "consensus"
            elif strategy == "per_component":
                ckpt = chain("per_component", rate, stream, True)
                kind = "per_component"
            else:
                ckpt = chain("single", rate, stream, True)
                kind = strategy
            metrics[strategy], mat = _day_metrics(task, ckpt, split, kind)
            if mat is not None:
                matrices[strategy] = mat
    except BlockCyclicError as exc:
        log.warning("repetition %d failed: %s", rep, exc)
        return RepetitionResult(rep, {}, {}, digests, f"{exc.category}: {exc}")
    if "iid" in digests and digests["iid"] != digests["cyclic"]:
        raise AssertionError("i.i.d. baseline consumed a different multiset of examples")
    return RepetitionResult(rep, metrics, matrices, digests)


@dataclass
class EvaluationReport:
    config: ExperimentConfig
    repetitions: list[RepetitionResult]
    realized_rates: dict = field(default_factory=dict)

    @property
    def succeeded(self) -> list[RepetitionResult]:
        return [r for r in self.repetitions if r.error is None]

    @property
    def failures(self) -> dict:
        return {r.repetition: r.error for r in self.repetitions if r.error is not None}

    def scores(self, strategy: str) -> np.ndarray:
        """``(R, K)`` day scores (mean over components) of successful repetitions."""
        return np.stack([r.metrics[strategy].mean(axis=1) for r in self.succeeded])

    def summary(self, strategy: str) -> tuple[np.ndarray, np.ndarray]:
        s = self.scores(strategy)
        return s.mean(axis=0), (s.std(axis=0, ddof=1) if len(s) > 1 else np.zeros(s.shape[1]))


def _rep_worker(args):
    config, rep, split = args
    return run_repetition(build_task(config), config, rep, split)


def run_experiment(config: ExperimentConfig, task: LogisticTask | None = None,
                   split: str = "test") -> EvaluationReport:
    """Every repetition of every strategy; aborts only if all repetitions fail.

    With ``config.jobs > 1`` each worker process rebuilds the task from the
    config, so a passed-in ``task`` must equal ``build_task(config)``.
    """
    config.validate()
    if task is None:
        task = build_task(config)
    reps = range(config.repetitions)
    if config.jobs > 1:
        with ProcessPoolExecutor(config.jobs) as pool:
            results = list(pool.map(_rep_worker, [(config, r, split) for r in reps]))
    else:
        results = [run_repetition(task, config, r, split) for r in reps]
    results.sort(key=lambda r: r.repetition)
    if all(r.error is not None for r in results):
        raise BlockCyclicError("all repetitions failed: " + "; ".join(r.error for r in results))
    rates = {split_name: [round(float(x), 6) for x in task.positive_rates(split_name)]
             for split_name in ("train", "test")}
    return EvaluationReport(config, results, rates)


def grid_search_learning_rate(config: ExperimentConfig, grid=None, task: LogisticTask | None = None,
                              repetitions: int | None = None) -> tuple[dict, list[dict]]:
    """Best constant step size per strategy by final-day validation score.

    Ties go to the smaller rate.  Falls back to the test split (with a
    warning) when the task has no validation split.  Returns the choice and
    the full table of ``{strategy, eta, score}`` rows.
    """
    grid = tuple(config.lr_grid if grid is None else grid)
    if not grid or min(grid) <= 0:
        raise ConfigError("learning-rate grid must be non-empty and positive")
    if task is None:
        task = build_task(config)
    split = "valid"
    if task.X_valid is None:
        warnings.warn("task has no validation split; grid search scores the test split", stacklevel=2)
        split = "test"
    table = []
    for eta in sorted(grid):
        cfg = dataclasses.replace(config, learning_rates={s: eta for s in config.strategies},
                                  repetitions=repetitions or config.repetitions, jobs=1)
        report = run_experiment(cfg, task, split)
        for s in config.strategies:
            table.append({"strategy": s, "eta": eta, "score": float(report.summary(s)[0][-1])})
    best = {}
    for s in config.strategies:
        rows = [r for r in table if r["strategy"] == s]
        top = max(r["score"] for r in rows)
        best[s] = min(r["eta"] for r in rows if r["score"] == top)
    return best, table


def _write_csv(path: Path, header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    data = buf.getvalue().encode()
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return hashlib.sha256(data).hexdigest()


def _fmt(x: float) -> str:
    return repr(float(x))


def versions() -> dict:
    from . import __version__
    return {"blockcyclic": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def emit_report(report: EvaluationReport, out_dir) -> dict:
    """Write ``daily.csv``, ``matrices.csv``, ``aggregate.csv`` and ``manifest.json``; return their paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    strategies = report.config.strategies
    daily, matrices = [], []
    for r in report.succeeded:
        for s in strategies:
            M = r.metrics[s]
            for k in range(M.shape[0]):
                for j in range(M.shape[1]):
                    daily.append((s, k + 1, r.repetition, j + 1, _fmt(M[k, j])))
            if s in r.matrices:
                A = r.matrices[s]
                for k in range(A.shape[0]):
                    for i in range(A.shape[1]):
                        for j in range(A.shape[2]):
                            matrices.append((s, k + 1, r.repetition, i + 1, j + 1, _fmt(A[k, i, j])))
    aggregate = []
    for s in strategies:
        mean, std = report.summary(s)
        for k in range(len(mean)):
            aggregate.append((s, k + 1, _fmt(mean[k]), _fmt(std[k]), len(report.succeeded)))
    paths = {"daily": out / "daily.csv", "matrices": out / "matrices.csv",
             "aggregate": out / "aggregate.csv", "manifest": out / "manifest.json"}
    hashes = {
        "daily.csv": _write_csv(paths["daily"], ("strategy", "day", "repetition", "component", "metric"), daily),
        "matrices.csv": _write_csv(paths["matrices"],
                                   ("strategy", "day", "repetition", "checkpoint_block", "component", "accuracy"),
                                   matrices),
        "aggregate.csv": _write_csv(paths["aggregate"], ("strategy", "day", "mean", "std", "repetitions"),
                                    aggregate),
    }
    manifest = {
        "seed": report.config.seed,
        "config": report.config.to_dict(),
        "config_hash": report.config.digest(),
        "versions": versions(),
        "files": hashes,
        "failures": {str(k): v for k, v in report.failures.items()},
        "realized_positive_rates": report.realized_rates,
        "stream_digests": {str(r.repetition): r.digests for r in report.repetitions},
    }
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return paths


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=json_default) + "\n")
    return path


def json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
