"""Experiment runner: per-experience training and evaluation, logs, grids."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import RunConfig, build_config
from .data import ExperienceStream, chunk_stream, generate_drift_stream, load_dataset
from .metrics import (
    AccuracyMatrix,
    ScoredPredictions,
    UndefinedMetric,
    accuracy,
    auroc,
    average_accuracy,
    average_auroc,
    average_forgetting,
    fmt,
)
from .nn import AdamState, Mlp, adam_step, threshold
from .normalization import GlobalNormalizer, Normalizer, make_normalizer
from .strategies import EwcAnchor, ReservoirBuffer, agem_project, ewc_consolidate, ewc_penalty, replay_mix

log = logging.getLogger(__name__)

CSV_COLUMNS = ("experience", "epoch", "normalizer", "strategy", "metric", "value", "oracle")
SNAPSHOT_VERSION = 1


class RunAborted(RuntimeError):
    def __init__(self, message: str, snapshot: Path | None = None):
        super().__init__(message if snapshot is None else f"{message} (diagnostic snapshot: {snapshot})")
        self.snapshot = snapshot


@dataclass
class RunLog:
    config: dict
    matrix: AccuracyMatrix
    curves: list[tuple[int, int, str, float | None]] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)
    eval_stamps: list[tuple[int, int, int, int]] = field(default_factory=list)
    oracle: bool = False
    error: str | None = None

    @property
    def normalizer(self) -> str:
        return self.config["normalizer"]["name"]

    @property
    def strategy(self) -> str:
        return self.config["strategy"]["name"]

    @property
    def completed(self) -> int:
        return len(self.matrix.to_nested())

    def final(self) -> dict:
        t = self.completed
        if t == 0:
            return {"average_accuracy": None, "average_forgetting": None, "average_auroc": None}
        return {
            "average_accuracy": average_accuracy(self.matrix, t),
            "average_forgetting": average_forgetting(self.matrix, t),
            "average_auroc": average_auroc(self.matrix, t),
        }


# --------------------------------------------------------------------------- building blocks


def build_stream(cfg: RunConfig) -> ExperienceStream:
    ds = cfg.dataset
    if ds.kind == "synthetic":
        return generate_drift_stream(ds.synthetic.drift_config(cfg.seed), split_ratio=ds.split_ratio)
    path = Path(ds.path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset.path: cannot read {path}")
    data = load_dataset(ds.kind, path, label_column=ds.label_column, header=ds.header)
    return chunk_stream(data, ds.resolved_chunk_size(), ds.split_ratio, drop_partial=ds.drop_partial)


def evaluate(model: Mlp, normalizer: Normalizer, X: np.ndarray, y: np.ndarray, kappa: float):
    """Accuracy and AUROC (None when the split holds a single class)."""
    was_training = model.training
    model.eval()
    probs = model.forward(normalizer.fixed_transform(X))
    model.training = was_training
    acc = accuracy(threshold(probs, kappa), y)
    try:
        roc = auroc(ScoredPredictions(probs, y))
    except UndefinedMetric:
        roc = None
    return acc, roc


class _Run:
    """Mutable state of one run; everything a snapshot must capture."""

    def __init__(self, cfg: RunConfig, stream: ExperienceStream, run_dir: Path | None = None):
        self.cfg = cfg
        self.run_dir = Path(cfg.output_dir) / cfg.label if run_dir is None else Path(run_dir)
        self.stream = stream
        seeds = np.random.SeedSequence(cfg.seed).spawn(3)
        model_seed, buffer_seed, loop_seed = (int(s.generate_state(1)[0]) for s in seeds)
        n = cfg.normalizer
        self.normalizer = make_normalizer(n.name, stream.features, eta=n.eta, lam=n.lam,
                                          eps_den=n.eps_den, eps_cn=n.eps_cn)
        if isinstance(self.normalizer, GlobalNormalizer):
            self.normalizer.fit_all([c.train for c in stream] + [c.test for c in stream])
        tr = cfg.training
        self.model = Mlp(stream.features, tr.hidden, tr.dropout, scaling=self.normalizer.trainable, seed=model_seed)
        if self.normalizer.trainable:
            self.normalizer.bind(self.model.scale_w, self.model.scale_b)
        self.adam = AdamState.zeros(self.model.n_params, tr.learning_rate, tr.beta1, tr.beta2, tr.adam_eps)
        st = cfg.strategy
        self.buffer = ReservoirBuffer(st.buffer_size, stream.features, buffer_seed) if st.name in ("replay", "agem") else None
        self.anchor: EwcAnchor | None = None
        self.rng = np.random.default_rng(loop_seed)
        self.log = RunLog(cfg.echo(), AccuracyMatrix(len(stream)), oracle=self.normalizer.oracle)
        self.next_experience = 1

    # --------------------------------------------------------------- training

    def _step(self, Xb: np.ndarray, yb: np.ndarray) -> float:
        st, norm, model = self.cfg.strategy, self.normalizer, self.model
        if st.name == "replay":
            Xb, yb = replay_mix(self.buffer, Xb, yb, st.replay_fraction, rng=self.rng)
        if self.cfg.normalizer.ema_per_batch and norm.name == "clean":
            norm.update(Xb)
        loss, grad = model.loss_and_grad(norm.fixed_transform(Xb), yb)
        if self.anchor is not None:
            penalty, pgrad = ewc_penalty(model.theta, self.anchor)
            loss += penalty
            grad += pgrad
        if st.name == "agem" and len(self.buffer):
            k = min(st.reference_batch, len(self.buffer))
            idx = self.rng.choice(len(self.buffer), size=k, replace=False)
            _, g_ref = model.loss_and_grad(norm.fixed_transform(self.buffer.rows[idx]), self.buffer.labels[idx])
            grad = agem_project(grad, g_ref)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite training loss {loss}")
        theta, self.adam = adam_step(self.adam, model.theta, grad)
        model.set_flat(theta)
        return loss

    def _evaluate_all(self, t: int, epoch: int, version_after_update: int):
        """Evaluate the current model on test splits 1..t with the current normalizer state."""
        kappa = self.cfg.training.kappa
        row = {}
        for k in range(1, t + 1):
            test = self.stream[k - 1].test
            row[k] = evaluate(self.model, self.normalizer, test.values, test.labels, kappa)
        self.log.eval_stamps.append((t, epoch, self.normalizer.version, version_after_update))

        # metrics for this epoch use the finished rows of earlier experiences
        m = AccuracyMatrix(self.log.matrix.n_experiences, dict(self.log.matrix.acc),
                           dict(self.log.matrix.counts), dict(self.log.matrix.auroc))
        for k, (acc, roc) in row.items():
            m.record(t, k, acc, len(self.stream[k - 1].test), roc)
        out = self.log.curves
        for k, (acc, roc) in row.items():
            out.append((t, epoch, f"accuracy_exp{k}", acc))
            out.append((t, epoch, f"auroc_exp{k}", roc))
        out.append((t, epoch, "average_accuracy", average_accuracy(m, t)))
        out.append((t, epoch, "average_forgetting", average_forgetting(m, t)))
        out.append((t, epoch, "average_auroc", average_auroc(m, t)))
        return m

    def train_experience(self, t: int):
        cfg, tr = self.cfg, self.cfg.training
        exp = self.stream[t - 1]
        X, y = exp.train.values, exp.train.labels
        started = time.perf_counter()
        per_batch = cfg.normalizer.ema_per_batch and self.normalizer.name == "clean"
        if not per_batch:
            self.normalizer.update(X)
        version = self.normalizer.version
        self.model.train()
        m = None
        for epoch in range(1, tr.epochs + 1):
            order = self.rng.permutation(len(y)) if tr.shuffle else np.arange(len(y))
            losses = []
            for start in range(0, len(y), tr.batch_size):
                idx = order[start:start + tr.batch_size]
                try:
                    losses.append(self._step(X[idx], y[idx]))
                except (FloatingPointError, ArithmeticError) as exc:
                    raise RunAborted(f"experience {t}, epoch {epoch}: {exc}", self._diagnostic()) from exc
            version = self.normalizer.version
            self.log.curves.append((t, epoch, "train_loss", float(np.mean(losses))))
            if tr.eval_every == "epoch" or epoch == tr.epochs:
                m = self._evaluate_all(t, epoch, version)
        self.log.matrix = m
        self._bookkeeping(exp)
        self.log.wall_clock.append(time.perf_counter() - started)
        self.next_experience = t + 1

    def _bookkeeping(self, exp):
        st = self.cfg.strategy
        X, y = exp.train.values, exp.train.labels
        if self.buffer is not None:
            self.buffer.offer_many(X, y)
        if st.name == "ewc":
            k = min(st.fisher_samples, len(y))
            idx = np.sort(self.rng.choice(len(y), size=k, replace=False))
            self.anchor = ewc_consolidate(self.model, self.normalizer.fixed_transform(X[idx]), y[idx],
                                          self.anchor, st.ewc_lambda)

    def _diagnostic(self) -> Path | None:
        try:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            path = self.run_dir / "diagnostic.npz"
            save_snapshot(path, self)
            return path
        except OSError:
            return None


def run_experiment(cfg: RunConfig, resume: str | Path | None = None, stop_after: int | None = None,
                   run_dir: str | Path | None = None) -> RunLog:
    """Run the protocol on every experience in order (or up to `stop_after`).

    For each experience: update the normalizer on the training split, train
    for the configured epochs, evaluate on the test splits of all experiences
    seen so far with the current normalizer state, then do strategy
    bookkeeping (buffer offers, EWC consolidation).

    Snapshots go to `run_dir`, by default ``<output_dir>/<label>``.
    """
    stream = build_stream(cfg)
    run = _Run(cfg, stream, run_dir)
    if resume is not None:
        load_snapshot(resume, run)
    last = len(stream) if stop_after is None else min(stop_after, len(stream))
    for t in range(run.next_experience, last + 1):
        run.train_experience(t)
        if cfg.training.checkpoint:
            run.run_dir.mkdir(parents=True, exist_ok=True)
            save_snapshot(run.run_dir / f"snapshot_exp{t}.npz", run)
    return run.log


# --------------------------------------------------------------------------- snapshots


def save_snapshot(path: str | Path, run: _Run) -> None:
    """Versioned npz: arrays stored raw (bit-exact), metadata as one JSON string."""
    arrays = {
        "theta": run.model.theta,
        "adam_m": run.adam.m,
        "adam_v": run.adam.v,
    }
    norm_state = run.normalizer.state_dict()
    meta = {
        "version": SNAPSHOT_VERSION,
        "layer_dims": list(run.model.layer_dims),
        "scaling": run.model.scaling,
        "adam_step": run.adam.step,
        "model_rng": run.model.rng_state(),
        "loop_rng": run.rng.bit_generator.state,
        "next_experience": run.next_experience,
        "normalizer": run.normalizer.name,
        "normalizer_scalars": {k: v for k, v in norm_state.items() if not isinstance(v, np.ndarray)},
        "config": run.cfg.echo(),
        "log": {
            "matrix": {f"{t},{k}": v for (t, k), v in run.log.matrix.acc.items()},
            "counts": {f"{t},{k}": v for (t, k), v in run.log.matrix.counts.items()},
            "auroc": {f"{t},{k}": v for (t, k), v in run.log.matrix.auroc.items()},
            "curves": run.log.curves,
            "wall_clock": run.log.wall_clock,
            "eval_stamps": run.log.eval_stamps,
        },
    }
    for k, v in norm_state.items():
        if isinstance(v, np.ndarray):
            arrays[f"norm_{k}"] = v
    if run.buffer is not None:
        b = run.buffer.state_dict()
        arrays["buffer_rows"], arrays["buffer_labels"] = b["rows"], b["labels"]
        meta["buffer"] = {"seen": b["seen"], "rng": b["rng"]}
    if run.anchor is not None:
        arrays["ewc_params"], arrays["ewc_importance"] = run.anchor.params, run.anchor.importance
        meta["ewc_strength"] = run.anchor.strength
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_snapshot(path: str | Path, run: _Run) -> None:
    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        if meta["version"] != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {meta['version']}")
        if tuple(meta["layer_dims"]) != run.model.layer_dims or meta["normalizer"] != run.normalizer.name:
            raise ValueError("snapshot does not match the configured architecture/normalizer")
        run.model.set_flat(z["theta"])
        run.model.set_rng_state(meta["model_rng"])
        run.adam = AdamState(z["adam_m"].copy(), z["adam_v"].copy(), meta["adam_step"], run.adam.lr,
                             run.adam.beta1, run.adam.beta2, run.adam.eps)
        run.rng.bit_generator.state = meta["loop_rng"]
        norm_state = dict(meta["normalizer_scalars"])
        norm_state.update({k[5:]: z[k].copy() for k in z.files if k.startswith("norm_")})
        run.normalizer.load_state_dict(norm_state)
        if run.buffer is not None:
            run.buffer.load_state_dict({"rows": z["buffer_rows"], "labels": z["buffer_labels"], **meta["buffer"]})
        if "ewc_params" in z.files:
            run.anchor = EwcAnchor(z["ewc_params"].copy(), z["ewc_importance"].copy(), meta["ewc_strength"])
    lg = meta["log"]

    def cells(d):
        return {tuple(int(x) for x in key.split(",")): v for key, v in d.items()}

    run.log.matrix = AccuracyMatrix(len(run.stream), cells(lg["matrix"]), cells(lg["counts"]), cells(lg["auroc"]))
    run.log.curves = [tuple(c) for c in lg["curves"]]
    run.log.wall_clock = list(lg["wall_clock"])
    run.log.eval_stamps = [tuple(s) for s in lg["eval_stamps"]]
    run.next_experience = int(meta["next_experience"])


# --------------------------------------------------------------------------- results


def _csv_value(v) -> str:
    return "null" if v is None else repr(float(v))


def emit_results(log: RunLog, out_dir: str | Path, formats: Iterable[str] = ("csv", "json")) -> list[Path]:
    """Write metrics.csv (long format) and/or summary.json into out_dir."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    formats = set(formats)
    if "csv" in formats:
        path = out / "metrics.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for t, epoch, metric, value in log.curves:
                w.writerow((t, epoch, log.normalizer, log.strategy, metric, _csv_value(value),
                            str(log.oracle).lower()))
        written.append(path)
    if "json" in formats:
        path = out / "summary.json"
        summary = {
            "normalizer": log.normalizer,
            "strategy": log.strategy,
            "oracle": log.oracle,
            "experiences_completed": log.completed,
            "accuracy_matrix": log.matrix.to_nested(),
            "auroc_matrix": log.matrix.auroc_nested(),
            "final": log.final(),
            "wall_clock_seconds": log.wall_clock,
            "error": log.error,
            "config": log.config,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
        written.append(path)
    unknown = formats - {"csv", "json"}
    if unknown:
        raise ValueError(f"unknown result formats {sorted(unknown)}")
    return written


def read_metrics_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["experience"] = int(r["experience"])
        r["epoch"] = int(r["epoch"])
        r["value"] = None if r["value"] == "null" else float(r["value"])
    return rows


def matrix_from_csv(path: str | Path) -> list[list[float]]:
    """Rebuild the accuracy matrix from the last evaluated epoch of each experience."""
    rows = read_metrics_csv(path)
    last_epoch: dict[int, int] = {}
    for r in rows:
        if r["metric"].startswith("accuracy_exp"):
            last_epoch[r["experience"]] = max(last_epoch.get(r["experience"], 0), r["epoch"])
    out = {t: {} for t in last_epoch}
    for r in rows:
        t = r["experience"]
        if r["metric"].startswith("accuracy_exp") and r["epoch"] == last_epoch[t]:
            out[t][int(r["metric"][len("accuracy_exp"):])] = r["value"]
    return [[out[t][k] for k in sorted(out[t])] for t in sorted(out)]


# --------------------------------------------------------------------------- grid


def expand_grid(base: RunConfig | dict, axes: dict[str, Sequence]) -> list[RunConfig]:
    """Cartesian product of override values over a base config."""
    base_tree = base.echo() if isinstance(base, RunConfig) else base
    keys = list(axes)
    configs = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        configs.append(build_config(base_tree, dict(zip(keys, combo))))
    return configs


def _run_one(args) -> tuple[RunLog, str | None]:
    cfg, out_dir = args
    try:
        log_ = run_experiment(cfg, run_dir=out_dir)
    except Exception as exc:  # isolation: one failing run must not abort the grid
        log_ = RunLog(cfg.echo(), AccuracyMatrix(0), error=f"{type(exc).__name__}: {exc}",
                      oracle=cfg.normalizer.name == "global")
    emit_results(log_, out_dir)
    return log_, log_.error


TABLE_COLUMNS = ("run", "normalizer", "strategy", "oracle", "status",
                 "average_accuracy", "average_forgetting", "average_auroc")


def comparison_rows(named_logs: Sequence[tuple[str, RunLog]]) -> list[dict]:
    rows = []
    for name, lg in named_logs:
        fin = lg.final() if lg.error is None else {}
        rows.append({
            "run": name,
            "normalizer": lg.normalizer,
            "strategy": lg.strategy,
            "oracle": lg.oracle,
            "status": "ok" if lg.error is None else f"failed: {lg.error}",
            "average_accuracy": fin.get("average_accuracy"),
            "average_forgetting": fin.get("average_forgetting"),
            "average_auroc": fin.get("average_auroc"),
        })
    return rows


def write_table(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("null" if r[k] is None else r[k]) for k in TABLE_COLUMNS})
    return path


def format_table(rows: list[dict]) -> str:
    lines = [f"{'run':<28} {'normalizer':<10} {'strategy':<9} {'A_T':>7} {'Gamma_T':>8} {'AUROC':>7}  status"]
    for r in rows:
        tag = " (oracle)" if r["oracle"] else ""
        lines.append(
            f"{r['run']:<28} {r['normalizer']:<10} {r['strategy']:<9} {fmt(r['average_accuracy']):>7} "
            f"{fmt(r['average_forgetting']):>8} {fmt(r['average_auroc']):>7}  {r['status']}{tag}"
        )
    return "\n".join(lines)


def run_grid(configs: Sequence[RunConfig], output_root: str | Path, workers: int = 1) -> list[RunLog]:
    """Run every config in isolation under output_root/<label>/ and write comparison.csv."""
    root = Path(output_root)
    if not configs:
        return []
    names = []
    for i, cfg in enumerate(configs):
        names.append(f"{i:03d}_{cfg.label}")
    jobs = [(cfg, root / name) for cfg, name in zip(configs, names)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    logs = [lg for lg, _ in results]
    root.mkdir(parents=True, exist_ok=True)
    write_table(comparison_rows(list(zip(names, logs))), root / "comparison.csv")
    return logs


def load_summaries(root: str | Path) -> list[tuple[str, dict]]:
    return [(p.parent.name, json.loads(p.read_text(encoding="utf-8")))
            for p in sorted(Path(root).glob("*/summary.json"))]


def report(root: str | Path) -> list[dict]:
    """Comparison rows rebuilt from the summary.json files under root."""
    rows = []
    for name, s in load_summaries(root):
        fin = s.get("final") or {}
        rows.append({
            "run": name,
            "normalizer": s["normalizer"],
            "strategy": s["strategy"],
            "oracle": s["oracle"],
            "status": "ok" if s.get("error") is None else f"failed: {s['error']}",
            "average_accuracy": fin.get("average_accuracy"),
            "average_forgetting": fin.get("average_forgetting"),
            "average_auroc": fin.get("average_auroc"),
        })
    return rows
