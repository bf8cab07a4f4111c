"""Experiment orchestration.

Builds and persists the model zoo, samples evaluation images every target
classifies correctly, runs the substitute x target x method attack matrix
under per-image query budgets, aggregates median/average noise metrics, and
writes results.csv / summary.json / sweep plots.

Determinism contract: identical (zoo, dataset, config, seed) produce byte
identical results.csv. Every per-attack random stream is derived from the
config seed and the task's (method, substitute, target, image) coordinates,
so results do not depend on execution order or worker count. Wall-clock
timing is kept in memory and summary.json only; the seconds column of
results.csv carries a fixed placeholder to keep the file reproducible.
"""

from __future__ import annotations

import configparser
import csv
import json
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, fgsm, i_fgsm, mi_fgsm, vr_igsm
from .core import Image, l2_distance, linf_distance, load_tensor, save_tensor, spawn_rng
from .curls import EPS_SHRINK, CurlsConfig, curls_attack
from .models import (
    Classifier,
    Dataset,
    conv_classifier,
    linear_classifier,
    load_model,
    mlp_classifier,
    save_model,
    train,
)
from .oracles import SubstituteOracle, TargetOracle
from .results import AttackResult
from .targeted import TargetedGoal, interpolation_seed, targeted_attack
from .whey import WheyConfig, whey

METHODS = ("fgsm", "ifgsm", "mifgsm", "vrigsm", "curls", "curlswhey", "targeted")

CSV_COLUMNS = ("image_id", "sub_model", "target_model", "method", "success",
               "l2", "linf", "queries", "seconds")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def median_average(distances) -> tuple[float, float]:
    """(median, arithmetic mean); even-length medians average the two middles."""
    values = np.asarray(list(distances), dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot summarise an empty distance list")
    return float(np.median(values)), float(np.mean(values))


def failure_distance(x: Image) -> float:
    """Worst-case L2: every pixel pushed to its farthest valid bound."""
    return float(np.sqrt(np.sum(np.maximum(x.data, 1.0 - x.data) ** 2)))


def failure_linf(x: Image) -> float:
    return float(np.max(np.maximum(x.data, 1.0 - x.data)))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttackConfig:
    """One method's full parameter set plus the per-image query budget.

    budget None derives the method's worst-case query count, which for the
    iterative baselines equals the curls/whey allowance so comparisons run
    under matched budgets.
    """

    method: str = "curlswhey"
    curls: CurlsConfig = CurlsConfig()
    whey: WheyConfig = WheyConfig()
    baseline: BaselineConfig = BaselineConfig()
    budget: int | None = 200
    seed: int = 0
    images_per_class: int = 10
    targets_per_image: int = 5
    seed_steps: int = 10

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.budget is not None and self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.images_per_class < 1 or self.targets_per_image < 1 or self.seed_steps < 0:
            raise ValueError("invalid sampling parameters")
        if self.method == "curlswhey" and self.budget is not None:
            cap = self.round_allowance() + self.whey.T1 + self.whey.T2
            if cap > self.budget:
                raise ValueError(
                    f"curlswhey needs T0*(T+bs)*2 + T1 + T2 = {cap} queries, "
                    f"over budget {self.budget}")

    def round_allowance(self) -> int:
        c = self.curls
        return c.T0 * (c.T + c.bs) * 2

    def resolved_budget(self) -> int:
        if self.budget is not None:
            return self.budget
        if self.method == "fgsm":
            return 1
        if self.method == "targeted":
            return self.seed_steps + 1 + self.round_allowance() + self.whey.T1 + self.whey.T2
        # curls, curlswhey, and budget-matched baselines
        return self.round_allowance() + self.whey.T1 + self.whey.T2


def config_with_param(cfg: AttackConfig, param: str, value) -> AttackConfig:
    """Copy of cfg with one swept parameter changed and the budget re-derived."""
    curls_cfg, whey_cfg, baseline_cfg = cfg.curls, cfg.whey, cfg.baseline
    if param == "T":
        curls_cfg = replace(curls_cfg, T=int(value))
        baseline_cfg = replace(baseline_cfg, T=int(value))
    elif param == "s":
        curls_cfg = replace(curls_cfg, s=float(value))
        baseline_cfg = replace(baseline_cfg, s=float(value))
    elif param == "bs":
        curls_cfg = replace(curls_cfg, bs=int(value))
    elif param == "T0":
        curls_cfg = replace(curls_cfg, T0=int(value))
    elif param == "T1":
        whey_cfg = replace(whey_cfg, T1=int(value))
    elif param == "T2":
        whey_cfg = replace(whey_cfg, T2=int(value))
    elif param == "delta":
        whey_cfg = replace(whey_cfg, delta=float(value))
    elif param == "eps0":
        curls_cfg = replace(curls_cfg, eps0=float(value))
        baseline_cfg = replace(baseline_cfg, eps=float(value))
    else:
        raise ValueError(f"unsupported sweep parameter {param!r}")
    return replace(cfg, curls=curls_cfg, whey=whey_cfg, baseline=baseline_cfg, budget=None)


def default_config_text() -> str:
    return """\
[attack]
method = curlswhey
seed = 0
budget = 200
images_per_class = 10
targets_per_image = 5
seed_steps = 10

[curls]
t0 = 10
t = 4
bs = 2
eps0 = 0.3
alpha = auto
s = 1.0

[whey]
t1 = 40
t2 = 40
delta = 0.01

[baseline]
eps = 0.3
alpha = auto
t = 10
mu = 1.0
s = 1.0
m = 8
"""


def _opt(section, key, conv, fallback):
    raw = section.get(key, None)
    if raw is None or raw.strip() in ("", "auto", "none"):
        return fallback
    return conv(raw)


def parse_config(path) -> list[AttackConfig]:
    """Read a key = value config file; one AttackConfig per listed method."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    attack = parser["attack"] if parser.has_section("attack") else {}
    curls_sec = parser["curls"] if parser.has_section("curls") else {}
    whey_sec = parser["whey"] if parser.has_section("whey") else {}
    base_sec = parser["baseline"] if parser.has_section("baseline") else {}

    curls_cfg = CurlsConfig(
        T0=_opt(curls_sec, "t0", int, 10), T=_opt(curls_sec, "t", int, 4),
        bs=_opt(curls_sec, "bs", int, 2), eps0=_opt(curls_sec, "eps0", float, 0.3),
        alpha=_opt(curls_sec, "alpha", float, None), s=_opt(curls_sec, "s", float, 1.0),
    )
    whey_cfg = WheyConfig(
        T1=_opt(whey_sec, "t1", int, 40), T2=_opt(whey_sec, "t2", int, 40),
        delta=_opt(whey_sec, "delta", float, 0.01),
    )
    baseline_cfg = BaselineConfig(
        eps=_opt(base_sec, "eps", float, 0.3), alpha=_opt(base_sec, "alpha", float, None),
        T=_opt(base_sec, "t", int, 10), mu=_opt(base_sec, "mu", float, 1.0),
        s=_opt(base_sec, "s", float, 1.0), m=_opt(base_sec, "m", int, 8),
    )
    methods = [m.strip() for m in _opt(attack, "method", str, "curlswhey").split(",")]
    shared = dict(
        curls=curls_cfg, whey=whey_cfg, baseline=baseline_cfg,
        budget=_opt(attack, "budget", int, None), seed=_opt(attack, "seed", int, 0),
        images_per_class=_opt(attack, "images_per_class", int, 10),
        targets_per_image=_opt(attack, "targets_per_image", int, 5),
        seed_steps=_opt(attack, "seed_steps", int, 10),
    )
    return [AttackConfig(method=m, **shared) for m in methods if m]


# ---------------------------------------------------------------------------
# Zoo and dataset persistence
# ---------------------------------------------------------------------------

# per-architecture (epochs, learning rate); the conv net needs a gentler rate
ZOO_SCHEDULE = {"linear": (25, 0.3), "mlp": (25, 0.05), "conv": (40, 0.1)}
ZOO_EPOCHS = None  # use ZOO_SCHEDULE unless overridden


def build_zoo(dataset: Dataset, seed: int, epochs: int | None = None,
              learning_rate: float | None = None) -> list[Classifier]:
    """Three structurally different classifiers trained with distinct seeds."""
    d = dict(width=dataset.width, height=dataset.height, channels=dataset.channels,
             n_classes=dataset.n_classes)
    zoo = [
        linear_classifier(seed=seed * 7919 + 1, name="linear", **d),
        mlp_classifier(seed=seed * 7919 + 2, name="mlp", **d),
        conv_classifier(seed=seed * 7919 + 3, name="conv", **d),
    ]
    for i, model in enumerate(zoo):
        default_epochs, default_lr = ZOO_SCHEDULE[model.name]
        train(model, dataset, epochs if epochs is not None else default_epochs,
              learning_rate if learning_rate is not None else default_lr,
              spawn_rng(seed, 100 + i))
    return zoo


def save_zoo(directory, zoo) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for model in zoo:
        save_model(directory / f"{model.name}.cwm", model)


def load_zoo(directory) -> list[Classifier]:
    directory = Path(directory)
    paths = sorted(directory.glob("*.cwm"))
    if not paths:
        raise FileNotFoundError(f"no .cwm model files under {directory}")
    return [load_model(p) for p in paths]


def save_dataset(directory, dataset: Dataset) -> None:
    """Per-image tensor files plus a labels.txt sidecar, per split."""
    directory = Path(directory)
    for split_name, train_flag in (("train", True), ("test", False)):
        sub = directory / split_name
        sub.mkdir(parents=True, exist_ok=True)
        indices = np.flatnonzero(dataset.is_train == train_flag)
        with open(sub / "labels.txt", "w") as fh:
            for j, idx in enumerate(indices):
                save_tensor(sub / f"{j:05d}.cwt", dataset.image(idx))
                fh.write(f"{int(dataset.y[idx])}\n")


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    rows, labels, tags = [], [], []
    shape = None
    for split_name, train_flag in (("train", True), ("test", False)):
        sub = directory / split_name
        label_file = sub / "labels.txt"
        if not label_file.exists():
            raise FileNotFoundError(f"missing {label_file}")
        split_labels = [int(line) for line in label_file.read_text().split()]
        paths = sorted(sub.glob("*.cwt"))
        if len(paths) != len(split_labels):
            raise ValueError(f"{sub}: {len(paths)} tensors vs {len(split_labels)} labels")
        for p, lab in zip(paths, split_labels):
            img = load_tensor(p)
            if shape is None:
                shape = (img.width, img.height, img.channels)
            rows.append(img.data)
            labels.append(lab)
            tags.append(train_flag)
    w, h, c = shape
    return Dataset(X=np.vstack(rows), y=np.asarray(labels), is_train=np.asarray(tags),
                   width=w, height=h, channels=c, n_classes=int(max(labels)) + 1)


# ---------------------------------------------------------------------------
# Evaluation sample
# ---------------------------------------------------------------------------


def sample_attack_set(dataset: Dataset, target_models, per_class: int) -> np.ndarray:
    """Test-split indices, per_class per class, correct under every target."""
    test_idx = np.flatnonzero(~dataset.is_train)
    Xte, yte = dataset.X[test_idx], dataset.y[test_idx]
    correct = np.ones(len(test_idx), dtype=bool)
    for model in target_models:
        correct &= model.forward_batch(Xte).argmax(axis=1) == yte
    chosen = []
    for cls in range(dataset.n_classes):
        cls_rows = np.flatnonzero((yte == cls) & correct)[:per_class]
        chosen.extend(test_idx[cls_rows])
    return np.asarray(chosen, dtype=np.int64)


def _direct_probs(models, vec) -> np.ndarray:
    # bookkeeping access to model scores; not charged to any attack ledger
    probs = models[0].forward_batch(vec[None, :])[0]
    for m in models[1:]:
        probs = probs + m.forward_batch(vec[None, :])[0]
    return probs / len(models)


def _direct_label(models, vec) -> int:
    return int(np.argmax(_direct_probs(models, vec)))


# ---------------------------------------------------------------------------
# Single-attack dispatch
# ---------------------------------------------------------------------------


def _baseline_restarts(method: str, x: Image, y: int, sub: SubstituteOracle,
                       target: TargetOracle, bcfg: BaselineConfig,
                       rng: np.random.Generator) -> AttackResult:
    """Re-run an iterative baseline under a shrinking radius until the budget
    is gone, mirroring the outer radius loop of the curls attack.

    Deterministic methods stop after a failed round (an identical retry
    cannot do better); the noise-smoothed variant keeps retrying.
    """
    start_used = target.ledger.used
    best_vec, best_l2 = None, float("inf")
    eps = bcfg.eps
    trace = []
    while target.ledger.remaining is None or target.ledger.remaining > 0:
        cfg_round = replace(bcfg, eps=eps)
        if method == "ifgsm":
            res = i_fgsm(x, y, sub, target, cfg_round)
        elif method == "mifgsm":
            res = mi_fgsm(x, y, sub, target, cfg_round)
        else:
            res = vr_igsm(x, y, sub, target, cfg_round, rng)
        trace.append({"eps": eps, "success": res.success, "l2": res.l2,
                      "queries": res.queries})
        if res.success:
            if res.l2 < best_l2:
                best_vec, best_l2 = res.adversarial, res.l2
            eps = EPS_SHRINK * res.linf
        else:
            if method in ("ifgsm", "mifgsm"):
                break  # identical deterministic retry cannot improve
            if res.queries == 0:
                break
    queries = target.ledger.used - start_used
    if best_vec is None:
        return AttackResult(False, None, float("nan"), float("nan"), queries, trace)
    return AttackResult(True, best_vec, best_l2, linf_distance(best_vec, x), queries, trace)


def run_single_attack(x: Image, y: int, sub_model: Classifier, target_models,
                      cfg: AttackConfig, rng: np.random.Generator,
                      goal: TargetedGoal | None = None) -> AttackResult:
    """One attack on one image under a fresh budgeted oracle pair."""
    if isinstance(target_models, Classifier):
        target_models = [target_models]
    target = TargetOracle(target_models, budget=cfg.resolved_budget())
    sub = SubstituteOracle(sub_model)
    if cfg.method == "fgsm":
        return fgsm(x, y, sub, target, cfg.baseline.eps)
    if cfg.method in ("ifgsm", "mifgsm", "vrigsm"):
        return _baseline_restarts(cfg.method, x, y, sub, target, cfg.baseline, rng)
    if cfg.method == "curls":
        return curls_attack(x, y, sub, target, cfg.curls, rng)
    if cfg.method == "curlswhey":
        result = curls_attack(x, y, sub, target, cfg.curls, rng)
        if not result.success:
            return result
        squeezed = whey(x, y, x.like(result.adversarial), target, cfg.whey, rng)
        return AttackResult(True, squeezed.data, l2_distance(squeezed, x),
                            linf_distance(squeezed, x),
                            target.ledger.used, result.trace)
    if cfg.method == "targeted":
        if goal is None:
            raise ValueError("targeted attacks need a TargetedGoal")
        return targeted_attack(x, goal, sub, target, cfg.curls, cfg.whey, rng,
                               seed_steps=cfg.seed_steps)
    raise ValueError(f"unknown method {cfg.method!r}")


def pick_targeted_goals(dataset: Dataset, target_models, x: Image, y: int,
                        n_targets: int, rng: np.random.Generator) -> list[TargetedGoal]:
    """Random distinct target classes with, for each, the closest test image
    of that class that the target classifies correctly."""
    test_idx = np.flatnonzero(~dataset.is_train)
    Xte, yte = dataset.X[test_idx], dataset.y[test_idx]
    correct = np.ones(len(test_idx), dtype=bool)
    for model in target_models:
        correct &= model.forward_batch(Xte).argmax(axis=1) == yte
    eligible = [c for c in range(dataset.n_classes)
                if c != y and np.any((yte == c) & correct)]
    if not eligible:
        return []
    k = min(n_targets, len(eligible))
    chosen = rng.choice(np.asarray(eligible), size=k, replace=False)
    goals = []
    for cls in chosen:
        rows = np.flatnonzero((yte == int(cls)) & correct)
        dists = np.sqrt(((Xte[rows] - x.data) ** 2).sum(axis=1))
        pick = rows[int(np.argmin(dists))]
        x_target = Image(Xte[pick], dataset.width, dataset.height, dataset.channels)
        goals.append(TargetedGoal(y_original=int(y), y_target=int(cls), x_target=x_target))
    return goals


# ---------------------------------------------------------------------------
# Result table
# ---------------------------------------------------------------------------


@dataclass
class ResultRow:
    image_id: str
    sub_model: str
    target_model: str
    method: str
    success: bool
    l2: float
    linf: float
    queries: int
    seconds: float
    adversarial: np.ndarray | None = None
    y: int = -1
    y_target: int | None = None


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    width: int = 0
    height: int = 0
    channels: int = 0

    def cells(self) -> dict:
        grouped: dict = {}
        for row in self.rows:
            grouped.setdefault((row.sub_model, row.target_model, row.method), []).append(row)
        return grouped

    def summary(self) -> dict:
        out = {}
        for (sub, tgt, method), rows in sorted(self.cells().items()):
            med, avg = median_average([r.l2 for r in rows])
            out[f"{sub}->{tgt}/{method}"] = {
                "median": med,
                "average": avg,
                "success_rate": float(np.mean([r.success for r in rows])),
                "mean_queries": float(np.mean([r.queries for r in rows])),
                "mean_seconds": float(np.mean([r.seconds for r in rows])),
                "count": len(rows),
            }
        return out


def _finalize_row(x: Image, y: int, cfg: AttackConfig, sub_name: str, tgt_name: str,
                  image_id: str, result: AttackResult, target_models, seconds: float,
                  y_target: int | None = None) -> ResultRow:
    """Round the candidate to storage precision and re-verify before recording.

    Storage is float32, so the row reflects exactly what a reader of the
    saved tensor will observe; the (vanishingly rare) candidate that stops
    fooling the target after rounding is demoted to a failure.
    """
    if result.success and result.adversarial is not None:
        stored = result.adversarial.astype(np.float32).astype(np.float64)
        label = _direct_label(target_models, stored)
        flipped = (label == y_target) if y_target is not None else (label != y)
        if flipped:
            return ResultRow(image_id, sub_name, tgt_name, cfg.method, True,
                             l2_distance(stored, x), linf_distance(stored, x),
                             result.queries, seconds, adversarial=stored, y=y,
                             y_target=y_target)
    return ResultRow(image_id, sub_name, tgt_name, cfg.method, False,
                     failure_distance(x), failure_linf(x), result.queries, seconds,
                     adversarial=None, y=y, y_target=y_target)


def _run_task(task):
    cfg, method_id, sub, tgt, si, ti, pos, ds_idx, dataset = task
    x = dataset.image(int(ds_idx))
    y = int(dataset.y[int(ds_idx)])
    rows = []
    if cfg.method == "targeted":
        goal_rng = spawn_rng(cfg.seed, method_id, si, ti, pos, 777)
        goals = pick_targeted_goals(dataset, [tgt], x, y, cfg.targets_per_image, goal_rng)
        for gi, goal in enumerate(goals):
            rng = spawn_rng(cfg.seed, method_id, si, ti, pos, gi)
            t0 = time.perf_counter()
            result = run_single_attack(x, y, sub, [tgt], cfg, rng, goal=goal)
            elapsed = time.perf_counter() - t0
            rows.append(_finalize_row(x, y, cfg, sub.name, tgt.name,
                                      f"{int(ds_idx)}t{goal.y_target}", result, [tgt],
                                      elapsed, y_target=goal.y_target))
    else:
        rng = spawn_rng(cfg.seed, method_id, si, ti, pos)
        t0 = time.perf_counter()
        result = run_single_attack(x, y, sub, [tgt], cfg, rng)
        elapsed = time.perf_counter() - t0
        rows.append(_finalize_row(x, y, cfg, sub.name, tgt.name, str(int(ds_idx)),
                                  result, [tgt], elapsed))
    return rows


def run_matrix(zoo, dataset: Dataset, configs, subs=None, targets=None) -> ResultTable:
    """Full substitute x target x method matrix over the sampled images.

    Worker count comes from CW_THREADS (default 1); output order and content
    are independent of it.
    """
    if isinstance(configs, AttackConfig):
        configs = [configs]
    by_name = {m.name: m for m in zoo}
    sub_models = [by_name[n] for n in subs] if subs else list(zoo)
    target_models = [by_name[n] for n in targets] if targets else list(zoo)
    sample = sample_attack_set(dataset, target_models, configs[0].images_per_class)

    tasks = []
    for cfg in configs:
        method_id = METHODS.index(cfg.method)
        for si, sub in enumerate(sub_models):
            for ti, tgt in enumerate(target_models):
                for pos, ds_idx in enumerate(sample):
                    tasks.append((cfg, method_id, sub, tgt, si, ti, pos, ds_idx, dataset))

    workers = int(os.environ.get("CW_THREADS", "1"))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_task, tasks))
    else:
        chunks = [_run_task(t) for t in tasks]

    table = ResultTable(width=dataset.width, height=dataset.height,
                        channels=dataset.channels)
    for chunk in chunks:
        table.rows.extend(chunk)
    return table


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    param: str
    method: str
    sub_model: str
    target_model: str
    points: list = field(default_factory=list)  # (value, median, average, success_rate)


def run_sweep(zoo, dataset: Dataset, base_config: AttackConfig, param: str, values,
              sub: str, target: str) -> SweepResult:
    """One matrix cell per swept value; budgets re-derive per value."""
    sweep = SweepResult(param=param, method=base_config.method, sub_model=sub,
                        target_model=target)
    for value in values:
        cfg = config_with_param(base_config, param, value)
        table = run_matrix(zoo, dataset, [cfg], subs=[sub], targets=[target])
        med, avg = median_average([r.l2 for r in table.rows])
        rate = float(np.mean([r.success for r in table.rows]))
        sweep.points.append((float(value), med, avg, rate))
    return sweep


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def adversarial_filename(row: ResultRow) -> str:
    return f"{row.method}_{row.sub_model}_{row.target_model}_{row.image_id}.cwt"


def emit_report(table: ResultTable, out_dir, sweeps=None) -> dict:
    """Write results.csv, summary.json, stored adversarials, and sweep plots.

    results.csv is byte-deterministic for a fixed (zoo, dataset, config,
    seed); its seconds column is a fixed placeholder (timing lives in
    summary.json, which is informational).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = sorted(table.rows, key=lambda r: (r.method, r.sub_model, r.target_model,
                                             _image_sort_key(r.image_id)))
    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow([r.image_id, r.sub_model, r.target_model, r.method,
                             int(r.success), repr(r.l2), repr(r.linf), r.queries,
                             "0.000"])

    summary = table.summary()
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    adv_dir = out / "adversarials"
    stored_any = False
    for r in rows:
        if r.adversarial is not None and table.width:
            adv_dir.mkdir(parents=True, exist_ok=True)
            img = Image(np.clip(r.adversarial, 0.0, 1.0), table.width, table.height,
                        table.channels)
            save_tensor(adv_dir / adversarial_filename(r), img)
            stored_any = True

    for sweep in sweeps or []:
        stem = f"sweep_{sweep.param}_{sweep.method}_{sweep.sub_model}_to_{sweep.target_model}"
        with open(out / f"{stem}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["value", "median", "average", "success_rate"])
            for value, med, avg, rate in sweep.points:
                writer.writerow([repr(value), repr(med), repr(avg), repr(rate)])
        svg = _svg_line_chart(
            [(v, med) for v, med, _, _ in sweep.points],
            title=f"{sweep.method}: median L2 vs {sweep.param} "
                  f"({sweep.sub_model} vs {sweep.target_model})",
            xlabel=sweep.param, ylabel="median L2",
        )
        (out / f"{stem}.svg").write_text(svg)

    return {"rows": len(rows), "summary_cells": len(summary), "stored": stored_any}


def _image_sort_key(image_id: str):
    head = image_id.split("t")[0]
    try:
        return (int(head), image_id)
    except ValueError:
        return (1 << 60, image_id)


def read_results_csv(path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(ResultRow(
                image_id=rec["image_id"], sub_model=rec["sub_model"],
                target_model=rec["target_model"], method=rec["method"],
                success=bool(int(rec["success"])), l2=float(rec["l2"]),
                linf=float(rec["linf"]), queries=int(rec["queries"]),
                seconds=float(rec["seconds"]),
            ))
    return rows


def verify_stored_adversarials(out_dir, zoo, dataset: Dataset) -> tuple[int, int]:
    """Reload every stored adversarial and re-check it against its named
    target model. Returns (checked, mismatches)."""
    out = Path(out_dir)
    by_name = {m.name: m for m in zoo}
    rows = read_results_csv(out / "results.csv")
    checked = mismatches = 0
    for row in rows:
        if not row.success:
            continue
        path = out / "adversarials" / adversarial_filename(row)
        img = load_tensor(path)
        label = _direct_label([by_name[row.target_model]], img.data)
        if "t" in row.image_id:
            ok = label == int(row.image_id.split("t")[1])
        else:
            original = int(dataset.y[int(row.image_id)])
            ok = label != original
        checked += 1
        if not ok:
            mismatches += 1
    return checked, mismatches


def _svg_line_chart(points, title: str, xlabel: str, ylabel: str,
                    width: int = 640, height: int = 400) -> str:
    """Minimal dependency-free SVG polyline chart."""
    margin = 60
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def sx(v):
        return margin + (v - x_lo) / x_span * (width - 2 * margin)

    def sy(v):
        return height - margin - (v - y_lo) / y_span * (height - 2 * margin)

    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in points)
    dots = "".join(
        f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="#1f77b4"/>'
        for x, y in points
    )
    labels = "".join(
        f'<text x="{sx(x):.2f}" y="{height - margin + 18:.2f}" font-size="11" '
        f'text-anchor="middle">{x:g}</text>'
        for x in xs
    )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f'<text x="{width / 2:.0f}" y="24" font-size="14" text-anchor="middle">{title}</text>\n'
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>\n'
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>\n'
        f'<text x="{width / 2:.0f}" y="{height - 12}" font-size="12" '
        f'text-anchor="middle">{xlabel}</text>\n'
        f'<text x="16" y="{height / 2:.0f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 16 {height / 2:.0f})">{ylabel}</text>\n'
        f'<text x="{margin - 6}" y="{sy(y_hi):.2f}" font-size="11" '
        f'text-anchor="end">{y_hi:.4g}</text>\n'
        f'<text x="{margin - 6}" y="{sy(y_lo):.2f}" font-size="11" '
        f'text-anchor="end">{y_lo:.4g}</text>\n'
        f'{labels}\n'
        f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>\n'
        f'{dots}\n'
        f'</svg>\n'
    )
