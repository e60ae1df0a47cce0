"""Experiment configuration, validation-set model selection and multi-seed trials."""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

import numpy as np

from . import pipeline as pl
from .data import GENERATOR, Dataset, SplitSpec, generate_synthetic, load_csv_dataset
from .graph import (
    SparseGraph,
    multi_threshold_graph,
    read_edgelist,
    similarity_graph,
)
from .lpa import LPAConfig
from .metrics import MetricsReport, evaluate_probs
from .nn import TrainConfig, UsageError, train_autoencoder

log = logging.getLogger(__name__)

METHODS = ("gkd", "dnn", "dnn-jfc", "gcn")


@dataclass
class GridSpec:
    """Hyperparameter grid. Every combination of the lists is tried."""

    hidden: list[list[int]] = field(default_factory=lambda: [[16], [64], [256], [16, 16],
                                                             [64, 64], [256, 256], [16, 16, 16],
                                                             [64, 64, 64], [256, 256, 256]])
    lr: list[float] = field(default_factory=lambda: [5e-3, 1e-2])
    dropout: list[float] = field(default_factory=lambda: [0.1, 0.3, 0.5])
    epochs: int = 200

    def configs(self, seed: int) -> list[TrainConfig]:
        return [
            TrainConfig(tuple(h), lr, d, self.epochs, seed)
            for h, lr, d in itertools.product(self.hidden, self.lr, self.dropout)
        ]


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run.

    ``dataset`` holds either ``{"synthetic": {...generate_synthetic kwargs}}``
    or ``{"csv": {"features": path, "labels": path, "graph_features": path}}``.
    ``graph`` is one of ``{"kind": "threshold", "thresholds": [...]}``,
    ``{"kind": "similarity", "threshold": t, "latent_dim": k, "recon_weight": 1.0}``
    (``k`` defaults to ``min(8, graph feature count - 1)``)
    or ``{"kind": "file", "path": edgelist}`` (a graph over all dataset rows).
    """

    dataset: dict = field(default_factory=lambda: {"synthetic": {}})
    graph: dict = field(default_factory=lambda: {"kind": "threshold", "thresholds": [0.1] * 4})
    methods: list[str] = field(default_factory=lambda: ["gkd"])
    grid: GridSpec = field(default_factory=GridSpec)
    alphas: list[float] = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])
    lpa_max_iterations: int = 100
    lpa_tol: float = 1e-6
    split: SplitSpec = field(default_factory=SplitSpec)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.grid, dict):
            self.grid = GridSpec(**self.grid)
        if isinstance(self.split, dict):
            self.split = SplitSpec(**self.split)
        sources = [k for k in ("synthetic", "csv") if k in self.dataset]
        if len(sources) != 1:
            raise UsageError("dataset must name exactly one source: 'synthetic' or 'csv'")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise UsageError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if not self.seeds:
            raise UsageError("need at least one seed")
        if self.graph.get("kind") not in ("threshold", "similarity", "file"):
            raise UsageError(f"unknown graph kind {self.graph.get('kind')!r}")
        if not self.alphas or not all(0 < a <= 1 for a in self.alphas):
            raise UsageError("alphas must be a non-empty list in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise UsageError(f"bad config: {exc}") from None


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if "synthetic" in cfg.dataset:
        ds = generate_synthetic(**cfg.dataset["synthetic"])
    else:
        c = cfg.dataset["csv"]
        ds = load_csv_dataset(c["features"], c["labels"], c["graph_features"], c.get("splits"))
    if ds.splits is None:
        ds = ds.with_splits(cfg.split)
    return ds


def build_graph(ds: Dataset, spec: dict, seed: int = 0) -> SparseGraph:
    """Population graph over every dataset row.

    The similarity variant fits its autoencoder on training rows only
    (labels of labeled training rows) and embeds all rows.
    """
    kind = spec["kind"]
    if kind == "threshold":
        return multi_threshold_graph(ds.graph_features, spec["thresholds"])
    if kind == "file":
        g = read_edgelist(spec["path"])
        if g.n != ds.n:
            raise UsageError(f"graph file has {g.n} nodes, dataset has {ds.n} rows")
        return g
    train = ds.splits.train
    means = pl.training_means(ds.graph_features[train])
    G = pl.impute(ds.graph_features, means, ds.n)
    mu, sd = G[train].mean(axis=0), G[train].std(axis=0)
    G = (G - mu) / np.where(sd > 0, sd, 1.0)
    ae_cfg = TrainConfig((32,), 5e-3, 0.0, int(spec.get("epochs", 300)), seed)
    ae = train_autoencoder(G[train], ds.Y[train], ds.splits.labeled[train],
                           float(spec.get("recon_weight", 1.0)),
                           int(spec.get("latent_dim", min(8, G.shape[1] - 1))), ae_cfg)
    return similarity_graph(ae.encode(G), float(spec["threshold"]))


def build_train_graph(ds: Dataset, spec: dict, seed: int = 0) -> SparseGraph:
    """Population graph restricted to the training rows (in row order)."""
    if spec["kind"] == "threshold":
        return multi_threshold_graph(ds.graph_features[ds.splits.train], spec["thresholds"])
    return build_graph(ds, spec, seed).subgraph(ds.splits.train)


def _val_acc(probs, labels) -> float:
    return float((probs.argmax(axis=1) == labels).mean())


def select_and_fit(method: str, ds: Dataset, graph: SparseGraph | None, cfg: ExperimentConfig,
                   seed: int):
    """Grid search on validation accuracy; returns (model, selection record).

    GKD: the teacher is chosen by its own validation accuracy, then alpha
    and the student configuration are chosen jointly by the student's
    validation accuracy. Ties keep the first candidate in grid order.
    """
    s = ds.splits
    Xv, yv = ds.X[s.val], ds.labels[s.val]
    grid = cfg.grid.configs(seed)
    best, best_acc, record = None, -math.inf, {}

    if method == "dnn":
        for tc in grid:
            m = pl.dnn_baseline(ds, tc)
            acc = _val_acc(pl.predict_proba(m, Xv), yv)
            if acc > best_acc:
                best, best_acc, record = m, acc, {"train": tc.to_dict()}
    elif method == "dnn-jfc":
        for tc in grid:
            m = pl.dnn_jfc_baseline(ds, tc)
            acc = _val_acc(pl.predict_jfc(m, Xv), yv)
            if acc > best_acc:
                best, best_acc, record = m, acc, {"train": tc.to_dict()}
    elif method == "gcn":
        seen = set()
        for tc in grid:
            key = (tc.hidden[0], tc.lr, tc.dropout)
            if key in seen:
                continue
            seen.add(key)
            m = pl.gcn_baseline(ds, graph, tc)
            acc = _val_acc(pl.predict_proba(m, Xv), yv)
            if acc > best_acc:
                best, best_acc, record = m, acc, {"train": tc.to_dict()}
    elif method == "gkd":
        X, Y, lab = ds.X[s.train], ds.Y[s.train], s.labeled[s.train]
        teacher, t_acc, t_cfg = None, -math.inf, None
        for tc in grid:
            t = pl.train_teacher(X, Y, lab, tc, (Xv, yv))
            acc = _val_acc(pl.predict_proba(t, Xv), yv)
            if acc > t_acc:
                teacher, t_acc, t_cfg = t, acc, tc
        for alpha in cfg.alphas:
            lpa = LPAConfig(alpha, cfg.lpa_max_iterations, cfg.lpa_tol)
            for sc in grid:
                m = pl.gkd_train(ds, graph, t_cfg, lpa, sc, teacher=teacher)
                acc = _val_acc(pl.predict(m, Xv), yv)
                if acc > best_acc:
                    best, best_acc = m, acc
                    record = {"teacher": t_cfg.to_dict(), "alpha": alpha, "student": sc.to_dict()}
    else:
        raise UsageError(f"unknown method {method!r}")
    record["val_accuracy"] = best_acc
    return best, record


def heldout_probs(method: str, model, ds: Dataset) -> np.ndarray:
    """Inductive inference on the test rows: no graph, no graph features."""
    Xt = ds.X[ds.splits.test]
    if method == "gkd":
        return pl.predict(model, Xt)
    if method == "dnn-jfc":
        return pl.predict_jfc(model, Xt)
    return pl.predict_proba(model, Xt)


def run_seed(method: str, ds: Dataset, graph, cfg: ExperimentConfig, seed: int):
    model, record = select_and_fit(method, ds, graph, cfg, seed)
    metrics = evaluate_probs(heldout_probs(method, model, ds), ds.labels[ds.splits.test])
    return model, metrics, record


def _worker(args):
    method, ds, graph, cfg, seed = args
    model, metrics, record = run_seed(method, ds, graph, cfg, seed)
    return metrics, record, model


def run_trials(cfg: ExperimentConfig, method: str, seeds: list[int] | None = None,
               ds: Dataset | None = None, graph: SparseGraph | None = None,
               return_models: bool = False):
    """One full selection + test evaluation per seed, aggregated.

    Failed seeds are recorded in ``report.failed`` and excluded from the
    aggregate. With ``return_models`` the result is ``(report, models)``
    where ``models`` maps each completed seed to its fitted model.
    """
    seeds = list(cfg.seeds if seeds is None else seeds)
    if not seeds:
        raise UsageError("need at least one seed")
    ds = ds if ds is not None else load_dataset(cfg)
    if graph is None and method in ("gkd", "gcn"):
        graph = build_train_graph(ds, cfg.graph)
    report = MetricsReport(method, config={**cfg.to_dict(), "method": method, "rng": GENERATOR})
    jobs = [(method, ds, graph, cfg, s) for s in seeds]
    if cfg.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            futures = [pool.submit(_worker, j) for j in jobs]
            outcomes = []
            for f in futures:
                try:
                    outcomes.append(f.result())
                except Exception as exc:  # noqa: BLE001 - recorded per seed
                    outcomes.append(exc)
    else:
        outcomes = []
        for j in jobs:
            try:
                outcomes.append(_worker(j))
            except Exception as exc:  # noqa: BLE001 - recorded per seed
                outcomes.append(exc)
    models = {}
    for seed, out in zip(seeds, outcomes):
        if isinstance(out, Exception):
            log.warning("seed %d failed for %s: %s", seed, method, out)
            report.failed[seed] = f"{type(out).__name__}: {out}"
        else:
            report.add(seed, out[0], out[1])
            models[seed] = out[2]
    if report.failed:
        log.warning("%s: aggregated over %d of %d seeds", method, len(report.seeds), len(seeds))
    return (report, models) if return_models else report


def sweep_missing(cfg: ExperimentConfig, p_list: list[float]) -> dict[str, Any]:
    """Re-run every configured method on synthetic data at each missing rate."""
    if "synthetic" not in cfg.dataset:
        raise UsageError("missing-rate sweeps need a synthetic dataset source")
    if not all(0.0 <= p < 1.0 for p in p_list):
        raise UsageError("missing rates must lie in [0, 1)")
    cells = []
    for p in p_list:
        sub = replace(cfg, dataset={"synthetic": {**cfg.dataset["synthetic"], "p_missing": p}})
        ds = load_dataset(sub)
        graph = None
        if any(m in ("gkd", "gcn") for m in cfg.methods):
            graph = build_train_graph(ds, cfg.graph)
        for method in cfg.methods:
            rep = run_trials(sub, method, ds=ds, graph=graph)
            cells.append({"p_missing": p, "method": method, "report": rep.to_dict()})
    table = [
        {"p_missing": c["p_missing"], "method": c["method"],
         **{f"{k}_{stat}": v[stat] for k, v in c["report"]["aggregate"].items()
            for stat in ("mean", "std")}}
        for c in cells
    ]
    return {"cells": cells, "table": table}

