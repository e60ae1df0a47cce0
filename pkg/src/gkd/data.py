"""Datasets: synthetic multi-modal generation, CSV ingestion, splits and
missingness simulation.

Graph-modality features keep missing entries as NaN; ``observed`` masks are
derived from that, so a single array carries both values and flags.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .nn import UsageError

GENERATOR = "numpy.random.default_rng (PCG64), standard_normal via ziggurat"


class ParseError(ValueError):
    """Malformed CSV input; message carries file and line number."""


@dataclass
class Splits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    labeled: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test", "labeled"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=bool))
        total = self.train.astype(int) + self.val + self.test
        if not (total == 1).all():
            raise UsageError("train/val/test masks must partition the rows")
        if (self.labeled & ~self.train).any():
            raise UsageError("labeled rows must be a subset of the training rows")

    @property
    def unlabeled(self) -> np.ndarray:
        return self.train & ~self.labeled

    def __eq__(self, other):
        if not isinstance(other, Splits):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("train", "val", "test", "labeled")
        )


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.65
    val: float = 0.10
    test: float = 0.25
    labeled: float = 0.10
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise UsageError(f"split fractions must be positive and sum to 1, got {fr}")
        if not 0 < self.labeled <= 1:
            raise UsageError(f"labeled fraction must be in (0, 1], got {self.labeled}")


@dataclass
class Dataset:
    X: np.ndarray
    labels: np.ndarray
    graph_features: np.ndarray
    n_classes: int | None = None
    splits: Splits | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.graph_features = np.asarray(self.graph_features, dtype=float)
        if self.graph_features.ndim == 1:
            self.graph_features = self.graph_features[:, None]
        n = self.X.shape[0]
        if self.labels.shape != (n,) or self.graph_features.shape[0] != n:
            raise UsageError(
                f"row counts disagree: X {n}, labels {self.labels.shape[0]}, "
                f"graph features {self.graph_features.shape[0]}"
            )
        if self.labels.size and self.labels.min() < 0:
            raise UsageError("labels must be non-negative class ids")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if self.labels.size else 0
        if not np.isfinite(self.X).all():
            raise UsageError("node features must be finite")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def Y(self) -> np.ndarray:
        return np.eye(self.n_classes)[self.labels]

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.graph_features)

    def with_splits(self, spec: SplitSpec) -> "Dataset":
        return replace(self, splits=make_splits(self.n, spec, self.n_classes))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.X, other.X)
            and np.array_equal(self.labels, other.labels)
            and self.n_classes == other.n_classes
            and np.array_equal(self.graph_features, other.graph_features, equal_nan=True)
            and self.splits == other.splits
        )


# --------------------------------------------------------------------------
# synthetic data


def apply_missing(G_feat, p_missing: float, seed=None) -> np.ndarray:
    """Independently turn each observed entry into NaN with probability ``p_missing``."""
    if not 0.0 <= p_missing < 1.0:
        raise UsageError(f"p_missing must be in [0, 1), got {p_missing}")
    G = np.array(G_feat, dtype=float)
    drop = np.random.default_rng(seed).random(G.shape) < p_missing
    G[drop] = np.nan
    return G


def generate_synthetic(n: int = 2000, d_node: int = 128, d_graph: int = 4,
                       class_sep: float = 1.0, p_missing: float = 0.0, seed: int = 0,
                       n_informative: int = 8) -> Dataset:
    """Two balanced classes with hypercube-cluster node features and
    Gaussian graph-modality features.

    Node features: class ``c`` is centred on a distinct vertex of the
    hypercube ``{-class_sep, +class_sep}^n_informative`` with unit-variance
    noise; the other ``d_node - n_informative`` columns are pure N(0, 1).
    Graph features: N(-class_sep, I) for class 0 and N(+class_sep, I) for
    class 1, then entries dropped at rate ``p_missing``.
    """
    if n < 2 or n % 2:
        raise UsageError(f"n must be a positive even number, got {n}")
    if d_node < 2 or d_graph < 1:
        raise UsageError("need d_node >= 2 and d_graph >= 1")
    if not 0.0 <= p_missing < 1.0:
        raise UsageError(f"p_missing must be in [0, 1), got {p_missing}")
    n_informative = min(n_informative, d_node)
    rng = np.random.default_rng(seed)

    # two distinct hypercube vertices
    codes = rng.choice(2**n_informative, size=2, replace=False)
    bits = (codes[:, None] >> np.arange(n_informative)) & 1
    vertices = class_sep * (2.0 * bits - 1.0)

    labels = np.repeat([0, 1], n // 2)
    X = rng.standard_normal((n, d_node))
    X[:, :n_informative] += vertices[labels]
    means = np.array([-class_sep, class_sep])
    G = rng.standard_normal((n, d_graph)) + means[labels, None]

    perm = rng.permutation(n)
    X, labels, G = X[perm], labels[perm], G[perm]
    G = apply_missing(G, p_missing, rng)
    return Dataset(X, labels, G, 2, meta={
        "source": "synthetic", "n": n, "d_node": d_node, "d_graph": d_graph,
        "class_sep": class_sep, "p_missing": p_missing, "seed": seed,
        "n_informative": n_informative, "generator": GENERATOR,
    })


# --------------------------------------------------------------------------
# splits


def make_splits(n: int, spec: SplitSpec, n_classes: int = 2) -> Splits:
    """Seeded shuffle then partition. Sizes are floored; the remainder goes to train."""
    n_val = math.floor(n * spec.val)
    n_test = math.floor(n * spec.test)
    n_train = n - n_val - n_test
    n_lab = math.floor(n_train * spec.labeled)
    if min(n_val, n_test) < 1 or n_train < 1:
        raise UsageError(f"split {spec} leaves an empty partition for n={n}")
    if n_lab < n_classes:
        raise UsageError(f"only {n_lab} labeled training rows for {n_classes} classes")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    train_idx = perm[:n_train]
    masks = {k: np.zeros(n, dtype=bool) for k in ("train", "val", "test", "labeled")}
    masks["train"][train_idx] = True
    masks["val"][perm[n_train:n_train + n_val]] = True
    masks["test"][perm[n_train + n_val:]] = True
    masks["labeled"][rng.choice(train_idx, size=n_lab, replace=False)] = True
    return Splits(**masks)


# --------------------------------------------------------------------------
# CSV I/O


def _read_rows(path: Path, allow_empty: bool):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = []
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}"
                )
            vals = []
            for cell in row:
                cell = cell.strip()
                if cell == "" and allow_empty:
                    vals.append(math.nan)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: non-numeric cell {cell!r}") from None
            rows.append(vals)
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def load_csv_dataset(features_path, labels_path, graph_features_path=None,
                     splits_path=None) -> Dataset:
    """Load the features / labels / graph-features CSV triple.

    Empty cells in the graph-features file mark missing values. Without a
    graph-features file the dataset has zero graph columns (enough for
    graph-free inference). An optional splits file has columns
    ``train,val,test,labeled`` of 0/1 flags.
    """
    paths = [Path(p) for p in (features_path, labels_path)]
    _, X = _read_rows(paths[0], allow_empty=False)
    _, lab = _read_rows(paths[1], allow_empty=False)
    if graph_features_path is None:
        G = np.zeros((X.shape[0], 0))
    else:
        paths.append(Path(graph_features_path))
        _, G = _read_rows(paths[2], allow_empty=True)
    if lab.shape[1] != 1:
        raise ParseError(f"{paths[1]}: expected a single label column")
    lab = lab[:, 0]
    bad = np.flatnonzero(lab != np.round(lab))
    if bad.size:
        raise ParseError(f"{paths[1]}:{bad[0] + 2}: label is not an integer")
    counts = {str(p): a.shape[0] for p, a in zip(paths, (X, lab, G))}
    if len(set(counts.values())) != 1:
        raise ParseError(f"inconsistent row counts: {counts}")
    splits = None
    if splits_path is not None:
        _, S = _read_rows(Path(splits_path), allow_empty=False)
        if S.shape != (X.shape[0], 4):
            raise ParseError(f"{splits_path}: expected {X.shape[0]} rows of 4 flags")
        splits = Splits(*(S[:, k] == 1 for k in range(4)))
    return Dataset(X, lab.astype(np.int64), G, splits=splits,
                   meta={"source": "csv", "paths": [str(p) for p in paths]})


def _write(path: Path, header, rows, fmt):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _num(v) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_csv_dataset(ds: Dataset, directory, prefix: str = "") -> dict[str, Path]:
    """Write the CSV triple (plus ``splits.csv`` when splits are set)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = {
        "features": directory / f"{prefix}features.csv",
        "labels": directory / f"{prefix}labels.csv",
        "graph_features": directory / f"{prefix}graph_features.csv",
    }
    _write(out["features"], [f"f{j}" for j in range(ds.X.shape[1])], ds.X, _num)
    _write(out["labels"], ["label"], ds.labels[:, None], str)
    _write(out["graph_features"], [f"g{j}" for j in range(ds.graph_features.shape[1])],
           ds.graph_features, _num)
    if ds.splits is not None:
        out["splits"] = write_splits(ds.splits, directory / f"{prefix}splits.csv")
    return out


def write_splits(s: Splits, path) -> Path:
    """One row per example: 0/1 flags for train, val, test, labeled."""
    path = Path(path)
    flags = np.column_stack([s.train, s.val, s.test, s.labeled]).astype(int)
    _write(path, ["train", "val", "test", "labeled"], flags, str)
    return path
