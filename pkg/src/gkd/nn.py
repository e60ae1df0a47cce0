"""Dense MLP machinery: forward/backward passes, Adam, losses, and the
auxiliary autoencoder used to embed graph-modality features.

Everything here is plain numpy. Parameters are stored as a list of
``(weight, bias)`` pairs with ``weight`` shaped ``(in_dim, out_dim)`` so a
layer computes ``h @ W + b``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LOG_CLAMP = 1e-12


class ShapeError(ValueError):
    """Raised when array dimensions do not chain."""


class UsageError(ValueError):
    """Raised for invalid arguments (empty masks, bad hyperparameters...)."""


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class MLPParams:
    layers: list[tuple[np.ndarray, np.ndarray]]
    activation: str = "relu"

    def __post_init__(self):
        for (w0, _), (w1, _) in zip(self.layers, self.layers[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise ShapeError(f"layer dims do not chain: {w0.shape} -> {w1.shape}")
        for w, b in self.layers:
            if b.shape != (w.shape[1],):
                raise ShapeError(f"bias shape {b.shape} does not match weight {w.shape}")

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w, _ in self.layers[:-1])

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in self.layers for a in pair]

    def copy(self) -> "MLPParams":
        return MLPParams([(w.copy(), b.copy()) for w, b in self.layers], self.activation)

    def zeros_like(self) -> "MLPParams":
        return MLPParams(
            [(np.zeros_like(w), np.zeros_like(b)) for w, b in self.layers], self.activation
        )


def init_mlp(sizes: Sequence[int], seed=None) -> MLPParams:
    """Glorot-uniform weights, zero biases. ``sizes`` = [in, *hidden, out]."""
    if len(sizes) < 2:
        raise UsageError("need at least input and output sizes")
    rng = _rng(seed)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return MLPParams(layers)


@dataclass
class TrainConfig:
    hidden: tuple[int, ...] = (64,)
    lr: float = 1e-2
    dropout: float = 0.1
    epochs: int = 200
    seed: int = 0
    select_best_epoch: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lr <= 0:
            raise UsageError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 0:
            raise UsageError(f"epochs must be non-negative, got {self.epochs}")
        if not 1 <= len(self.hidden) <= 3:
            raise UsageError(f"expected 1-3 hidden layers, got {len(self.hidden)}")

    def with_seed(self, seed: int) -> "TrainConfig":
        return dataclasses.replace(self, seed=seed)

    def to_dict(self) -> dict:
        return {
            "hidden": list(self.hidden),
            "lr": self.lr,
            "dropout": self.dropout,
            "epochs": self.epochs,
            "seed": self.seed,
            "select_best_epoch": self.select_best_epoch,
        }


# --------------------------------------------------------------------------
# forward / backward


def _check_input(params: MLPParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.in_dim:
        raise ShapeError(f"input shape {X.shape} incompatible with in_dim {params.in_dim}")
    return X


def _forward_cache(params, X, train, dropout, rng):
    """Returns logits plus what the backward pass needs.

    cache holds, per hidden layer, (pre-activation, dropout mask or None),
    and the list of layer inputs.
    """
    h = X
    inputs, pre, masks = [], [], []
    n_layers = len(params.layers)
    for i, (w, b) in enumerate(params.layers):
        inputs.append(h)
        z = h @ w + b
        if i == n_layers - 1:
            return z, (inputs, pre, masks)
        pre.append(z)
        h = np.maximum(z, 0.0)
        if train and dropout > 0.0:
            keep = rng.random(h.shape) >= dropout
            mask = keep / (1.0 - dropout)
            h = h * mask
        else:
            mask = None
        masks.append(mask)
    raise AssertionError("unreachable")


def mlp_forward(params: MLPParams, X, mode: str = "eval", seed=None, dropout: float = 0.0):
    """Logits of ``X`` through the network.

    In ``"train"`` mode inverted dropout with rate ``dropout`` is applied
    after each hidden ReLU, with masks drawn from ``seed``. ``"eval"`` mode
    never drops anything.
    """
    if mode not in ("train", "eval"):
        raise UsageError(f"unknown mode {mode!r}")
    X = _check_input(params, X)
    logits, _ = _forward_cache(params, X, mode == "train", dropout, _rng(seed))
    return logits


def _backward_cache(params, cache, dlogits):
    """Gradients of a scalar loss given d loss / d logits. Also returns d/dX."""
    inputs, pre, masks = cache
    grads = [None] * len(params.layers)
    delta = dlogits
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        grads[i] = (inputs[i].T @ delta, delta.sum(axis=0))
        delta = delta @ w.T
        if i > 0:
            if masks[i - 1] is not None:
                delta = delta * masks[i - 1]
            delta = delta * (pre[i - 1] > 0)
    return MLPParams(grads, params.activation), delta


def softmax_rows(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _mask_rows(mask, n) -> np.ndarray:
    if mask is None:
        return np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ShapeError(f"row mask of shape {mask.shape} for {n} rows")
    if not mask.any():
        raise UsageError("row mask selects no rows")
    return mask


def cross_entropy_soft(pred, target, row_mask=None) -> float:
    """Mean over selected rows of ``-sum_c target * log(pred)``."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    mask = _mask_rows(row_mask, pred.shape[0])
    logp = np.log(np.maximum(pred[mask], LOG_CLAMP))
    return float(-(target[mask] * logp).sum(axis=1).mean())


def _ce_loss_grad(logits, target, mask):
    probs = softmax_rows(logits)
    loss = cross_entropy_soft(probs, target, mask)
    dlogits = np.zeros_like(logits)
    dlogits[mask] = (probs[mask] - target[mask]) / mask.sum()
    return loss, dlogits


def mlp_loss_and_grads(params, X, target, row_mask=None, mode="eval", seed=None, dropout=0.0):
    """Soft cross-entropy of softmax(mlp_forward) and its parameter gradients."""
    X = _check_input(params, X)
    target = np.asarray(target, dtype=float)
    if target.shape != (X.shape[0], params.out_dim):
        raise ShapeError(f"target shape {target.shape}, expected {(X.shape[0], params.out_dim)}")
    mask = _mask_rows(row_mask, X.shape[0])
    logits, cache = _forward_cache(params, X, mode == "train", dropout, _rng(seed))
    loss, dlogits = _ce_loss_grad(logits, target, mask)
    grads, _ = _backward_cache(params, cache, dlogits)
    return loss, grads


def mlp_backward(params, X, target, row_mask=None, mode="eval", seed=None, dropout=0.0) -> MLPParams:
    return mlp_loss_and_grads(params, X, target, row_mask, mode, seed, dropout)[1]


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_update(arrays, grads, state: AdamState, lr: float):
    """Functional Adam on flat lists of arrays. Returns (new_arrays, new_state)."""
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ShapeError("parameter, gradient and state lists differ in length")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


def _pack(arrays, like: MLPParams) -> MLPParams:
    it = iter(arrays)
    return MLPParams([(next(it), next(it)) for _ in like.layers], like.activation)


def adam_step(params: MLPParams, grads: MLPParams, state: AdamState, lr: float):
    new, state = adam_update(params.arrays(), grads.arrays(), state, lr)
    return _pack(new, params), state


# --------------------------------------------------------------------------
# training


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int | None = None


def _accuracy(params, X, y) -> float:
    return float((mlp_forward(params, X).argmax(axis=1) == y).mean())


def train_mlp(X, target, row_mask=None, config: TrainConfig | None = None, validation=None,
              return_history: bool = False):
    """Full-batch Adam training of an MLP against (soft) targets.

    ``validation`` is an optional ``(X_val, y_val)`` pair of features and
    integer labels. When given, validation accuracy is recorded after each
    epoch and, with ``config.select_best_epoch``, the parameters of the
    best epoch (first one on ties) are returned.
    """
    config = config or TrainConfig()
    X = np.asarray(X, dtype=float)
    target = np.asarray(target, dtype=float)
    mask = _mask_rows(row_mask, X.shape[0])
    rng = np.random.default_rng(config.seed)
    params = init_mlp([X.shape[1], *config.hidden, target.shape[1]], rng)
    state = AdamState.fresh(params.arrays())
    history = TrainHistory()

    best, best_acc = params, -1.0
    for epoch in range(config.epochs):
        loss, grads = mlp_loss_and_grads(params, X, target, mask, "train", rng, config.dropout)
        params, state = adam_step(params, grads, state, config.lr)
        history.loss.append(loss)
        if validation is not None:
            acc = _accuracy(params, *validation)
            history.val_accuracy.append(acc)
            if acc > best_acc:
                best, best_acc, history.best_epoch = params, acc, epoch
    if validation is not None and config.select_best_epoch and config.epochs > 0:
        params = best
    return (params, history) if return_history else params


# --------------------------------------------------------------------------
# autoencoder for graph-modality embedding


@dataclass
class Autoencoder:
    encoder: MLPParams
    decoder: MLPParams
    classifier: MLPParams
    loss_history: list[float] = field(default_factory=list)

    def encode(self, X) -> np.ndarray:
        return mlp_forward(self.encoder, X)


def _autoencoder_loss_grads(ae: Autoencoder, X, Y, mask, recon_weight, rng, dropout):
    z, enc_cache = _forward_cache(ae.encoder, X, True, dropout, rng)
    recon, dec_cache = _forward_cache(ae.decoder, z, False, 0.0, rng)
    logits, cls_cache = _forward_cache(ae.classifier, z, False, 0.0, rng)

    diff = recon - X
    mse = float((diff**2).mean())
    drecon = recon_weight * 2.0 * diff / diff.size
    ce, dlogits = _ce_loss_grad(logits, Y, mask)

    g_dec, dz_dec = _backward_cache(ae.decoder, dec_cache, drecon)
    g_cls, dz_cls = _backward_cache(ae.classifier, cls_cache, dlogits)
    g_enc, _ = _backward_cache(ae.encoder, enc_cache, dz_dec + dz_cls)
    return recon_weight * mse + ce, (g_enc, g_dec, g_cls)


def train_autoencoder(X_aux, Y_L, labeled_mask, recon_weight: float = 1.0, latent_dim: int = 8,
                      config: TrainConfig | None = None) -> Autoencoder:
    """Jointly train encoder, decoder and latent classifier.

    Loss is ``recon_weight * MSE(all rows) + CE(labeled rows)``. Encoder
    and decoder each have one hidden layer of width ``config.hidden[0]``;
    the classifier is linear on the latent code.
    """
    config = config or TrainConfig(hidden=(32,), dropout=0.0, lr=5e-3)
    X = np.asarray(X_aux, dtype=float)
    Y = np.asarray(Y_L, dtype=float)
    if latent_dim >= X.shape[1]:
        raise UsageError(f"latent dim {latent_dim} must be below input dim {X.shape[1]}")
    mask = _mask_rows(labeled_mask, X.shape[0])
    rng = np.random.default_rng(config.seed)
    width = config.hidden[0]
    ae = Autoencoder(
        encoder=init_mlp([X.shape[1], width, latent_dim], rng),
        decoder=init_mlp([latent_dim, width, X.shape[1]], rng),
        classifier=init_mlp([latent_dim, Y.shape[1]], rng),
    )
    nets = [ae.encoder, ae.decoder, ae.classifier]
    state = AdamState.fresh([a for n in nets for a in n.arrays()])
    for _ in range(config.epochs):
        loss, grads = _autoencoder_loss_grads(ae, X, Y, mask, recon_weight, rng, config.dropout)
        flat_p = [a for n in nets for a in n.arrays()]
        flat_g = [a for g in grads for a in g.arrays()]
        new, state = adam_update(flat_p, flat_g, state, config.lr)
        offset = 0
        for i, n in enumerate(nets):
            k = len(n.arrays())
            nets[i] = _pack(new[offset:offset + k], n)
            offset += k
        ae.encoder, ae.decoder, ae.classifier = nets
        ae.loss_history.append(loss)
    return ae


def autoencoder_embed(X_aux, Y_L, labeled_mask, recon_weight: float = 1.0, latent_dim: int = 8,
                      config: TrainConfig | None = None) -> np.ndarray:
    """Latent codes of every row after training the autoencoder."""
    ae = train_autoencoder(X_aux, Y_L, labeled_mask, recon_weight, latent_dim, config)
    return ae.encode(X_aux)
