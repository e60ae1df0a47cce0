"""Teacher -> label propagation -> student training, plus the comparison
baselines (feature-only DNN, DNN-JFC with mean imputation, 2-layer GCN).

All functions read only the training rows of a dataset (and validation
rows for best-epoch selection). Test rows are never touched here.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .data import Dataset
from .graph import SparseGraph, row_normalize, sym_normalize
from .lpa import LPAConfig, propagate
from .nn import (
    AdamState,
    MLPParams,
    ShapeError,
    TrainConfig,
    UsageError,
    _ce_loss_grad,
    _rng,
    adam_step,
    init_mlp,
    mlp_forward,
    softmax_rows,
    train_mlp,
)

MAGIC = "GKD1"


@dataclass
class GKDModel:
    teacher: MLPParams
    student: MLPParams
    lpa: LPAConfig
    soft_labels: np.ndarray
    initial_labels: np.ndarray | None = None
    history: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.student.in_dim != self.teacher.in_dim:
            raise ShapeError("student must read the same node features as the teacher")


@dataclass
class JFCModel:
    params: MLPParams
    means: np.ndarray
    d_node: int


def _splits(dataset: Dataset):
    if dataset.splits is None:
        raise UsageError("dataset has no train/val/test splits")
    return dataset.splits


def _validation(dataset: Dataset, X=None):
    s = _splits(dataset)
    if not s.val.any():
        return None
    Xv = dataset.X[s.val] if X is None else X[s.val]
    return Xv, dataset.labels[s.val]


def predict_proba(params: MLPParams, X) -> np.ndarray:
    return softmax_rows(mlp_forward(params, X))


# --------------------------------------------------------------------------
# GKD


def train_teacher(X, Y_L, labeled_mask, cfg: TrainConfig, validation=None) -> MLPParams:
    """Supervised MLP on the labeled rows only (hard one-hot targets)."""
    Y_L = np.asarray(Y_L, dtype=float)
    mask = np.asarray(labeled_mask, dtype=bool)
    if Y_L.shape[0] != mask.shape[0]:
        Y_full = np.zeros((mask.shape[0], Y_L.shape[1]))
        Y_full[mask] = Y_L
        Y_L = Y_full
    present = Y_L[mask].sum(axis=0) > 0
    if not present.all():
        raise UsageError(f"classes {np.flatnonzero(~present).tolist()} have no labeled rows")
    return train_mlp(X, Y_L, mask, cfg, validation)


def pseudo_label(teacher: MLPParams, X, Y_L, labeled_mask) -> np.ndarray:
    """Teacher softmax on unlabeled rows, ground truth on labeled rows."""
    X = np.asarray(X, dtype=float)
    mask = np.asarray(labeled_mask, dtype=bool)
    if mask.shape != (X.shape[0],):
        raise ShapeError(f"mask shape {mask.shape} for {X.shape[0]} rows")
    Y0 = predict_proba(teacher, X)
    Y_L = np.asarray(Y_L, dtype=float)
    Y0[mask] = Y_L[mask] if Y_L.shape[0] == mask.shape[0] else Y_L
    return Y0


def distill_labels(X, Y_L, labeled_mask, graph: SparseGraph, teacher: MLPParams,
                   lpa_cfg: LPAConfig):
    """Initial pseudo-labels and their propagated version over ``graph``."""
    if graph.n != X.shape[0]:
        raise UsageError(f"graph has {graph.n} nodes but there are {X.shape[0]} training rows")
    Y0 = pseudo_label(teacher, X, Y_L, labeled_mask)
    YT = propagate(row_normalize(graph), Y0, Y0, labeled_mask, lpa_cfg)
    return Y0, YT


def train_student(X, soft_labels, cfg: TrainConfig, validation=None) -> MLPParams:
    """Graph-free MLP fit to the teacher's soft labels on every training row."""
    return train_mlp(X, soft_labels, None, cfg, validation)


def gkd_train(dataset: Dataset, graph: SparseGraph, teacher_cfg: TrainConfig,
              lpa_cfg: LPAConfig, student_cfg: TrainConfig, teacher: MLPParams | None = None
              ) -> GKDModel:
    """Full method on the training split. ``graph`` indexes training rows in order.

    A pre-trained ``teacher`` may be passed to skip retraining it (used by
    the hyperparameter search, which reuses one teacher across alphas).
    """
    s = _splits(dataset)
    X = dataset.X[s.train]
    Y = dataset.Y[s.train]
    lab = s.labeled[s.train]
    val = _validation(dataset)
    if graph.n != X.shape[0]:
        raise UsageError(f"graph has {graph.n} nodes but the training split has {X.shape[0]} rows")
    if teacher is None:
        teacher = train_teacher(X, Y, lab, teacher_cfg, val)
    Y0, YT = distill_labels(X, Y, lab, graph, teacher, lpa_cfg)
    student = train_student(X, YT, student_cfg, val)
    return GKDModel(teacher, student, lpa_cfg, YT, Y0)


def predict(model: GKDModel, X_test) -> np.ndarray:
    """Class probabilities from the student alone."""
    return predict_proba(model.student, X_test)


# --------------------------------------------------------------------------
# baselines


def dnn_baseline(dataset: Dataset, cfg: TrainConfig) -> MLPParams:
    s = _splits(dataset)
    return train_teacher(dataset.X[s.train], dataset.Y[s.train], s.labeled[s.train], cfg,
                         _validation(dataset))


def training_means(G: np.ndarray) -> np.ndarray:
    observed = ~np.isnan(G)
    counts = observed.sum(axis=0)
    if (counts == 0).any():
        raise UsageError(
            f"graph features {np.flatnonzero(counts == 0).tolist()} are never observed in training"
        )
    return np.where(observed, G, 0.0).sum(axis=0) / counts


def impute(G: np.ndarray | None, means: np.ndarray, n: int) -> np.ndarray:
    if G is None:
        return np.tile(means, (n, 1))
    G = np.asarray(G, dtype=float)
    return np.where(np.isnan(G), means, G)


def jfc_features(model: JFCModel, X, G=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[1] != model.d_node:
        raise ShapeError(f"expected {model.d_node} node features, got {X.shape[1]}")
    return np.hstack([X, impute(G, model.means, X.shape[0])])


def dnn_jfc_baseline(dataset: Dataset, cfg: TrainConfig) -> JFCModel:
    """MLP on [node features | mean-imputed graph features]. Means come from
    observed training entries only; validation rows are imputed fully, as
    at test time when the graph modality is unavailable."""
    s = _splits(dataset)
    G_train = dataset.graph_features[s.train]
    means = training_means(G_train)
    model = JFCModel(None, means, dataset.X.shape[1])
    Z = jfc_features(model, dataset.X[s.train], G_train)
    val = None
    if s.val.any():
        val = (jfc_features(model, dataset.X[s.val]), dataset.labels[s.val])
    model.params = train_teacher(Z, dataset.Y[s.train], s.labeled[s.train], cfg, val)
    return model


def predict_jfc(model: JFCModel, X, G=None) -> np.ndarray:
    """Without ``G`` every graph feature is replaced by its training mean."""
    return predict_proba(model.params, jfc_features(model, X, G))


# --------------------------------------------------------------------------
# GCN baseline: logits = A_hat relu(A_hat X W1 + b1) W2 + b2


def gcn_forward(params: MLPParams, A_hat, X, mode: str = "eval", seed=None, dropout: float = 0.0):
    logits, _ = _gcn_forward_cache(params, A_hat, X, mode == "train", dropout, _rng(seed))
    return logits


def _gcn_forward_cache(params, A_hat, X, train, dropout, rng):
    if len(params.layers) != 2:
        raise ShapeError("GCN expects exactly one hidden layer")
    X = np.asarray(X, dtype=float)
    if X.shape[1] != params.in_dim or A_hat.shape != (X.shape[0], X.shape[0]):
        raise ShapeError(f"GCN input {X.shape} / operator {A_hat.shape} mismatch")
    (W1, b1), (W2, b2) = params.layers
    Z1 = A_hat @ (X @ W1) + b1
    H1 = np.maximum(Z1, 0.0)
    mask = None
    if train and dropout > 0.0:
        mask = (rng.random(H1.shape) >= dropout) / (1.0 - dropout)
        H1 = H1 * mask
    Z2 = A_hat @ (H1 @ W2) + b2
    return Z2, (X, Z1, H1, mask)


def gcn_loss_and_grads(params, A_hat, X, target, row_mask=None, mode="eval", seed=None,
                       dropout=0.0):
    """Soft cross-entropy over masked nodes and gradients. ``A_hat`` must be symmetric."""
    logits, (X, Z1, H1, mask) = _gcn_forward_cache(
        params, A_hat, X, mode == "train", dropout, _rng(seed)
    )
    target = np.asarray(target, dtype=float)
    rows = np.ones(X.shape[0], bool) if row_mask is None else np.asarray(row_mask, bool)
    if not rows.any():
        raise UsageError("row mask selects no rows")
    loss, dZ2 = _ce_loss_grad(logits, target, rows)
    (W1, _), (W2, _) = params.layers
    M2 = A_hat.T @ dZ2
    gW2, gb2 = H1.T @ M2, dZ2.sum(axis=0)
    dH1 = M2 @ W2.T
    if mask is not None:
        dH1 = dH1 * mask
    dZ1 = dH1 * (Z1 > 0)
    M1 = A_hat.T @ dZ1
    gW1, gb1 = X.T @ M1, dZ1.sum(axis=0)
    return loss, MLPParams([(gW1, gb1), (gW2, gb2)])


def gcn_baseline(dataset: Dataset, graph: SparseGraph, cfg: TrainConfig) -> MLPParams:
    """Semi-supervised GCN on the training graph, labeled rows in the loss.

    Unseen nodes are isolated, so their normalized row is a unit self-loop
    and inference reduces to ``mlp_forward`` with the learned weights.
    """
    s = _splits(dataset)
    X = dataset.X[s.train]
    if graph.n != X.shape[0]:
        raise UsageError(f"graph has {graph.n} nodes but the training split has {X.shape[0]} rows")
    Y = dataset.Y[s.train]
    lab = s.labeled[s.train]
    A_hat = sym_normalize(graph)
    rng = np.random.default_rng(cfg.seed)
    params = init_mlp([X.shape[1], cfg.hidden[0], Y.shape[1]], rng)
    state = AdamState.fresh(params.arrays())
    val = _validation(dataset)
    best, best_acc = params, -1.0
    for _ in range(cfg.epochs):
        _, grads = gcn_loss_and_grads(params, A_hat, X, Y, lab, "train", rng, cfg.dropout)
        params, state = adam_step(params, grads, state, cfg.lr)
        if val is not None:
            acc = float((mlp_forward(params, val[0]).argmax(axis=1) == val[1]).mean())
            if acc > best_acc:
                best, best_acc = params, acc
    if val is not None and cfg.select_best_epoch and cfg.epochs > 0:
        params = best
    return params


def isolated_operator(n: int) -> sp.csr_matrix:
    """Normalized operator for ``n`` nodes without edges (the identity)."""
    return sym_normalize(SparseGraph(n))


# --------------------------------------------------------------------------
# model files
#
# GKD1
# kind <gkd|mlp|jfc>
# meta <json object>
# array <name> <rows> <cols>
# <rows lines of space-separated %.17g values>
# ...
# end


def _mlp_arrays(prefix: str, p: MLPParams) -> dict[str, np.ndarray]:
    out = {}
    for i, (w, b) in enumerate(p.layers):
        out[f"{prefix}.{i}.W"] = w
        out[f"{prefix}.{i}.b"] = b[None, :]
    return out


def _mlp_from(prefix: str, arrays: dict) -> MLPParams:
    layers, i = [], 0
    while f"{prefix}.{i}.W" in arrays:
        layers.append((arrays[f"{prefix}.{i}.W"], arrays[f"{prefix}.{i}.b"][0]))
        i += 1
    if not layers:
        raise ValueError(f"model file has no '{prefix}' layers")
    return MLPParams(layers)


def save_model(model, path, meta: dict | None = None) -> None:
    meta = dict(meta or {})
    if isinstance(model, GKDModel):
        kind = "gkd"
        arrays = {**_mlp_arrays("teacher", model.teacher), **_mlp_arrays("student", model.student),
                  "soft_labels": model.soft_labels}
        meta["lpa"] = {"alpha": model.lpa.alpha, "max_iterations": model.lpa.max_iterations,
                       "tol": model.lpa.tol}
    elif isinstance(model, JFCModel):
        kind = "jfc"
        arrays = {**_mlp_arrays("net", model.params), "means": model.means[None, :]}
        meta["d_node"] = model.d_node
    elif isinstance(model, MLPParams):
        kind = "mlp"
        arrays = _mlp_arrays("net", model)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    lines = [MAGIC, f"kind {kind}", "meta " + json.dumps(meta, sort_keys=True)]
    for name, a in arrays.items():
        a = np.atleast_2d(np.asarray(a, dtype=float))
        lines.append(f"array {name} {a.shape[0]} {a.shape[1]}")
        lines.extend(" ".join(f"{v:.17g}" for v in row) for row in a)
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path):
    """Inverse of :func:`save_model`. Returns ``(model, meta)``."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != MAGIC:
        raise ValueError(f"{path}: not a {MAGIC} model file")
    kind = lines[1].split(" ", 1)[1]
    meta = json.loads(lines[2].split(" ", 1)[1])
    arrays, k = {}, 3
    while lines[k] != "end":
        _, name, r, c = lines[k].split()
        r, c = int(r), int(c)
        body = lines[k + 1:k + 1 + r]
        arrays[name] = np.array([[float(v) for v in row.split()] for row in body]).reshape(r, c)
        k += 1 + r
    if kind == "gkd":
        model = GKDModel(_mlp_from("teacher", arrays), _mlp_from("student", arrays),
                         LPAConfig(**meta["lpa"]), arrays["soft_labels"])
    elif kind == "jfc":
        model = JFCModel(_mlp_from("net", arrays), arrays["means"][0], int(meta["d_node"]))
    elif kind == "mlp":
        model = _mlp_from("net", arrays)
    else:
        raise ValueError(f"{path}: unknown model kind {kind!r}")
    return model, meta
