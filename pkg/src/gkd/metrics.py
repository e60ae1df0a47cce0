"""Classification metrics and the per-seed metrics report."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .nn import UsageError

METRICS = ("accuracy", "macro_f1", "auc")


class UndefinedMetricError(ValueError):
    pass


def _pair(pred, true):
    pred = np.asarray(pred).ravel()
    true = np.asarray(true).ravel()
    if pred.shape != true.shape:
        raise UsageError(f"length mismatch: {pred.size} predictions, {true.size} labels")
    if pred.size == 0:
        raise UsageError("empty label vectors")
    return pred, true


def accuracy(pred_labels, true_labels) -> float:
    pred, true = _pair(pred_labels, true_labels)
    return float((pred == true).mean())


def macro_f1(pred_labels, true_labels, n_classes: int) -> float:
    """Unweighted mean of per-class F1; a class never predicted nor present scores 0."""
    pred, true = _pair(pred_labels, true_labels)
    f1 = np.zeros(n_classes)
    for c in range(n_classes):
        tp = np.sum((pred == c) & (true == c))
        fp = np.sum((pred == c) & (true != c))
        fn = np.sum((pred != c) & (true == c))
        denom = 2 * tp + fp + fn
        f1[c] = 2 * tp / denom if denom else 0.0
    return float(f1.mean())


def auc_binary(scores, true_labels) -> float:
    """ROC AUC as the Mann-Whitney statistic with midranks for ties."""
    s, y = _pair(scores, true_labels)
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = rankdata(s.astype(float))
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate_probs(probs: np.ndarray, true_labels) -> dict[str, float]:
    """accuracy / macro-F1 / AUC from class-probability rows (argmax ties -> lowest index)."""
    probs = np.asarray(probs, dtype=float)
    pred = probs.argmax(axis=1)
    out = {
        "accuracy": accuracy(pred, true_labels),
        "macro_f1": macro_f1(pred, true_labels, probs.shape[1]),
    }
    if probs.shape[1] == 2:
        try:
            out["auc"] = auc_binary(probs[:, 1], true_labels)
        except UndefinedMetricError:
            out["auc"] = math.nan
    else:
        out["auc"] = math.nan
    return out


def fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class MetricsReport:
    """Per-seed metric triples plus mean and sample standard deviation."""

    method: str
    seeds: list[int] = field(default_factory=list)
    per_seed: list[dict[str, float]] = field(default_factory=list)
    failed: dict[int, str] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    selected: list[dict] = field(default_factory=list)

    def add(self, seed: int, metrics: dict[str, float], selected: dict | None = None):
        self.seeds.append(int(seed))
        self.per_seed.append({k: float(metrics[k]) for k in METRICS})
        self.selected.append(selected or {})

    def aggregate(self) -> dict[str, dict[str, float]]:
        out = {}
        for k in METRICS:
            vals = np.array([m[k] for m in self.per_seed], dtype=float)
            if vals.size == 0:
                out[k] = {"mean": math.nan, "std": math.nan}
                continue
            std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            out[k] = {"mean": float(vals.mean()), "std": std}
        return out

    def mean(self, metric: str) -> float:
        return self.aggregate()[metric]["mean"]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "config_fingerprint": fingerprint(self.config),
            "config": self.config,
            "seeds": self.seeds,
            "per_seed": self.per_seed,
            "selected": self.selected,
            "failed": {str(k): v for k, v in self.failed.items()},
            "aggregate": self.aggregate(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            method=d["method"],
            seeds=list(d["seeds"]),
            per_seed=[dict(m) for m in d["per_seed"]],
            failed={int(k): v for k, v in d.get("failed", {}).items()},
            config=d.get("config", {}),
            selected=list(d.get("selected", [])),
        )

    def csv_rows(self) -> list[dict]:
        fp = fingerprint(self.config)
        return [
            {"method": self.method, "config": fp, "seed": s, **m}
            for s, m in zip(self.seeds, self.per_seed)
        ]
