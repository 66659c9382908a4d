"""Discrimination and threshold metrics plus the three-model comparison harness."""

from __future__ import annotations

import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .data import CohortDataset, Preprocessor, SplitSpec, split
from .models import CAPABILITIES, ModelConfig
from .training import predict, train

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("auroc", "f1", "precision", "recall", "accuracy")
CAPABILITY_COLUMNS = ("feature_level", "temporal_level", "cross_level")
REPORT_COLUMNS = ("model",) + METRIC_COLUMNS + CAPABILITY_COLUMNS


class UndefinedMetricError(ValueError):
    pass


def auroc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counted as half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC undefined: only one class present")
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int


def thresholded_metrics(scores, labels, threshold: float = 0.5) -> dict:
    """Precision, recall and F1 fall back to 0 when their denominators vanish."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores.size == 0:
        raise ValueError("no predictions to score")
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    tn = int(np.sum(~pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"f1": f1, "precision": precision, "recall": recall,
            "accuracy": (tp + tn) / scores.size, "confusion": Confusion(tp, fp, tn, fn)}


@dataclass(frozen=True)
class MetricsReport:
    model_kind: str
    seed: int
    auroc: float
    f1: float
    precision: float
    recall: float
    accuracy: float
    threshold: float
    confusion: Confusion


def score(probabilities, labels, model_kind: str, seed: int = 0,
          threshold: float = 0.5) -> MetricsReport:
    m = thresholded_metrics(probabilities, labels, threshold)
    return MetricsReport(model_kind, seed, auroc(probabilities, labels), m["f1"],
                         m["precision"], m["recall"], m["accuracy"], threshold, m["confusion"])


def capability_flags(model_kind: str) -> dict:
    caps = CAPABILITIES[model_kind]
    return {"feature_level": caps["feature"], "temporal_level": caps["temporal"],
            "cross_level": caps["cross"]}


@dataclass
class ComparisonReport:
    per_seed: list
    errors: dict

    def model_kinds(self) -> list:
        kinds = []
        for r in self.per_seed:
            if r.model_kind not in kinds:
                kinds.append(r.model_kind)
        return kinds

    def mean_rows(self) -> list:
        rows = []
        for kind in self.model_kinds():
            reports = [r for r in self.per_seed if r.model_kind == kind]
            row = {"model": kind}
            for col in METRIC_COLUMNS:
                row[col] = float(np.mean([getattr(r, col) for r in reports]))
            row.update(capability_flags(kind))
            rows.append(row)
        return rows

    def seed_rows(self) -> list:
        rows = []
        for r in self.per_seed:
            row = {"model": r.model_kind, "seed": r.seed}
            row.update({col: getattr(r, col) for col in METRIC_COLUMNS})
            row.update(asdict(r.confusion))
            rows.append(row)
        return rows

    def to_csv(self) -> str:
        return rows_to_csv(self.mean_rows(), REPORT_COLUMNS)

    def to_text(self) -> str:
        return rows_to_text(self.mean_rows(), REPORT_COLUMNS)


def _cell(value, exact: bool = False) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return repr(value) if exact else f"{value:.4f}"
    return str(value)


def rows_to_csv(rows, columns) -> str:
    lines = [",".join(columns)] + [",".join(_cell(r[c], exact=True) for c in columns)
                                   for r in rows]
    return "\n".join(lines) + "\n"


def rows_to_text(rows, columns) -> str:
    table = [list(columns)] + [[_cell(r[c]) for c in columns] for r in rows]
    widths = [max(len(row[k]) for row in table) for k in range(len(columns))]
    out = io.StringIO()
    for n, row in enumerate(table):
        out.write("  ".join(cell.ljust(w) if k == 0 else cell.rjust(w)
                            for k, (cell, w) in enumerate(zip(row, widths))).rstrip() + "\n")
        if n == 0:
            out.write("  ".join("-" * w for w in widths) + "\n")
    return out.getvalue()


def prepare_splits(dataset: CohortDataset, split_spec: SplitSpec = SplitSpec(),
                   policy="auto"):
    """Split, then scale every part with statistics from the training part."""
    train_ds, val_ds, test_ds = split(dataset, split_spec)
    pre = Preprocessor(policy, feature_names=dataset.feature_names).fit(train_ds)
    return pre.transform(train_ds), pre.transform(val_ds), pre.transform(test_ds), pre


def compare_models(dataset: CohortDataset, configs: Sequence[ModelConfig],
                   seeds: Sequence[int], split_spec: SplitSpec = SplitSpec(),
                   policy="auto", n_jobs: int = 1) -> ComparisonReport:
    """Train every config once per seed on one shared split; score on the test part.

    Training failures are recorded in ``errors`` keyed by ``(model, seed)``
    instead of aborting the whole comparison.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    train_ds, _, test_ds, _ = prepare_splits(dataset, split_spec, policy)
    jobs = [(cfg, seed) for cfg in configs for seed in seeds]

    def run(job):
        cfg, seed = job
        cfg = replace(cfg, seed=seed, n_features=dataset.n_features,
                      n_timesteps=dataset.n_timesteps)
        try:
            model = train(train_ds, cfg)
            return score(predict(model, test_ds.X), test_ds.y, cfg.model_kind, seed)
        except (ArithmeticError, ValueError) as exc:
            logger.warning("%s seed %d failed: %s", cfg.model_kind, seed, exc)
            return exc

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    per_seed, errors = [], {}
    for (cfg, seed), result in zip(jobs, results):
        if isinstance(result, MetricsReport):
            per_seed.append(result)
        else:
            errors[(cfg.model_kind, seed)] = str(result)
    return ComparisonReport(per_seed, errors)
