"""Classifiers, link ranking, fusion strategies, and AUC scoring.

The numeric core is hand-rolled on numpy so that every gradient can be
checked against finite differences: L2-regularized logistic regression via
batch gradient descent, a small MLP (ReLU, BatchNorm, Dropout, Adam, early
stopping), and soft/hard attention over per-link feature sub-vectors.
AUC uses the Mann-Whitney rank formulation with average ranks for ties.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .pipeline import FEATURE_COUNT, FEATURE_NAMES
from .rng import stream

LinkKey = tuple[int, int]


@dataclass
class Dataset:
    """Per-sample, per-link feature tensor with labels and day indices.

    ``features`` has shape (n_samples, n_links, n_features); links are kept
    in lexicographic (tx, rx) order so concatenation order is reproducible.
    """

    features: np.ndarray
    labels: np.ndarray
    days: np.ndarray
    links: list[LinkKey]

    def __post_init__(self) -> None:
        f = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        d = np.asarray(self.days, dtype=np.int64)
        if f.ndim != 3:
            raise ValueError("features must be (n_samples, n_links, n_features)")
        if f.shape[0] != y.shape[0] or f.shape[0] != d.shape[0]:
            raise ValueError("features, labels, days must agree on sample count")
        if f.shape[1] != len(self.links):
            raise ValueError("link axis does not match link list")
        if not np.all(np.isin(y, [0, 1])):
            raise ValueError("labels must be binary")
        if self.links != sorted(self.links):
            raise ValueError("links must be sorted lexicographically")
        uniq = np.unique(d)
        if uniq.size and not np.array_equal(uniq, np.arange(uniq.min(), uniq.max() + 1)):
            raise ValueError("day indices must be contiguous")
        self.features = f
        self.labels = y
        self.days = d

    @property
    def n_samples(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_links(self) -> int:
        return int(self.features.shape[1])

    def day_mask(self, days: Sequence[int]) -> np.ndarray:
        return np.isin(self.days, list(days))

    def link_index(self, link: LinkKey) -> int:
        return self.links.index(link)


# --- AUC ----------------------------------------------------------------------


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties given the mean rank of their group."""
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts + 1
    return ((starts + ends) / 2.0)[inverse]


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """ROC AUC via the Mann-Whitney statistic; ties get average ranks."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = _average_ranks(s)
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# --- Link ranking and fusion ----------------------------------------------------


RANK_CRITERIA = ("snr", "temporal_variance", "random")

_SNR_IDX = FEATURE_NAMES.index("snr_proxy")
_NBVI_IDX = FEATURE_NAMES.index("nbvi")


@dataclass(frozen=True)
class LinkRanking:
    """Links ordered by a training-data criterion, best first."""

    criterion: str
    entries: tuple[tuple[LinkKey, float], ...]

    def links(self) -> list[LinkKey]:
        return [link for link, _ in self.entries]


def rank_links(train: Dataset, criterion: str, seed: int = 0) -> LinkRanking:
    """Score links on training samples only; ties break on (tx, rx).

    snr: mean snr_proxy feature.  temporal_variance: population variance of
    the NBVI series over time.  random: a seeded shuffle.
    """
    if train.n_samples < 1:
        raise ValueError("cannot rank links on an empty training set")
    if criterion == "snr":
        scores = train.features[:, :, _SNR_IDX].mean(axis=0)
    elif criterion == "temporal_variance":
        scores = train.features[:, :, _NBVI_IDX].var(axis=0)
    elif criterion == "random":
        perm = stream(seed, "rank-shuffle").permutation(train.n_links)
        scores = np.empty(train.n_links)
        scores[perm] = np.arange(train.n_links, 0, -1, dtype=np.float64)
    else:
        raise ValueError(f"unknown ranking criterion {criterion!r}")
    order = sorted(range(train.n_links), key=lambda i: (-scores[i], train.links[i]))
    return LinkRanking(
        criterion=criterion,
        entries=tuple((train.links[i], float(scores[i])) for i in order),
    )


def select_top_k(ranking: LinkRanking, k: int) -> list[LinkKey]:
    if not 1 <= k <= len(ranking.entries):
        raise ValueError(f"k={k} out of range for {len(ranking.entries)} links")
    return ranking.links()[:k]


def concat_fusion(dataset: Dataset, links: Sequence[LinkKey]) -> np.ndarray:
    """Concatenate the selected links' features in the given order."""
    try:
        idx = [dataset.link_index(l) for l in links]
    except ValueError as exc:
        raise ValueError("selected link missing from dataset") from exc
    n = dataset.n_samples
    return dataset.features[:, idx, :].reshape(n, len(idx) * dataset.features.shape[2])


# --- Class weights --------------------------------------------------------------


def inverse_frequency_weights(y: np.ndarray) -> np.ndarray:
    """Per-sample weights with mean 1 that balance the two classes."""
    y = np.asarray(y)
    n = len(y)
    n_pos = int(np.sum(y == 1))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need samples of both classes")
    w = np.where(y == 1, n / (2.0 * n_pos), n / (2.0 * n_neg))
    return w * (n / w.sum())


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bce(p: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    eps = 1e-12
    ll = y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)
    return float(-(w * ll).sum() / len(y))


# --- Logistic regression ---------------------------------------------------------


@dataclass
class LogisticModel:
    """Weights (bias last), trained by batch gradient descent."""

    weights: np.ndarray
    l2_lambda: float
    n_iter: int = 0
    converged: bool = False
    grad_norm: float = math.nan
    seed: int = 0

    def decision(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x @ self.weights[:-1] + self.weights[-1]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision(x))


def logistic_loss_and_grad(
    theta: np.ndarray, x: np.ndarray, y: np.ndarray, w: np.ndarray, l2_lambda: float
) -> tuple[float, np.ndarray]:
    """Weighted mean cross-entropy with L2 on everything except the bias."""
    n = len(y)
    z = x @ theta[:-1] + theta[-1]
    p = _sigmoid(z)
    loss = _bce(p, y, w) + 0.5 * l2_lambda * float(theta[:-1] @ theta[:-1])
    resid = w * (p - y) / n
    grad = np.empty_like(theta)
    grad[:-1] = x.T @ resid + l2_lambda * theta[:-1]
    grad[-1] = resid.sum()
    return loss, grad


def _lipschitz_bound(x: np.ndarray, w: np.ndarray, l2_lambda: float) -> float:
    """Upper bound on the loss curvature via power iteration on X'WX/n."""
    n, d = x.shape
    xb = np.hstack([x, np.ones((n, 1))])
    v = np.ones(d + 1) / math.sqrt(d + 1)
    lam = 1.0
    for _ in range(50):
        u = xb.T @ (w * (xb @ v)) / n
        lam = float(np.linalg.norm(u))
        if lam == 0.0:
            break
        v = u / lam
    return lam / 4.0 + l2_lambda


def train_logistic(
    x: np.ndarray,
    y: np.ndarray,
    l2_lambda: float = 0.01,
    seed: int = 0,
    max_iter: int = 5000,
    tol: float = 1e-6,
    class_weight: str | None = "balanced",
) -> LogisticModel:
    """Minimize L2-regularized weighted cross-entropy by batch gradient descent.

    Stops at gradient norm <= tol or after max_iter steps; the step size is
    the inverse curvature bound, so the descent is monotone and deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("x must be (n, d) matching y")
    if len(np.unique(y)) < 2:
        raise ValueError("training set must contain both classes")
    w = inverse_frequency_weights(y) if class_weight == "balanced" else np.ones(len(y))
    theta = np.zeros(x.shape[1] + 1)
    lr = 1.0 / _lipschitz_bound(x, w, l2_lambda)
    grad_norm = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        _, grad = logistic_loss_and_grad(theta, x, y, w, l2_lambda)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= tol:
            break
        theta -= lr * grad
    return LogisticModel(
        weights=theta,
        l2_lambda=l2_lambda,
        n_iter=it,
        converged=grad_norm <= tol,
        grad_norm=grad_norm,
        seed=seed,
    )


# --- MLP -------------------------------------------------------------------------


_BN_EPS = 1e-5


@dataclass
class MlpConfig:
    hidden: tuple[int, ...] = (64, 32, 16)
    dropout: float = 0.2
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 10
    val_day_fraction: float = 0.2
    l2_lambda: float = 0.0
    bn_momentum: float = 0.9


@dataclass
class MlpModel:
    """input -> hidden stack (Dense, BatchNorm, ReLU, Dropout) -> sigmoid."""

    params: dict[str, np.ndarray]
    running: dict[str, np.ndarray]
    config: MlpConfig
    input_dim: int
    seed: int
    epochs_trained: int = 0

    def scores(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode probabilities (running BatchNorm stats, no dropout)."""
        h = np.asarray(x, dtype=np.float64)
        for i in range(len(self.config.hidden)):
            a = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            xhat = (a - self.running[f"rm{i}"]) / np.sqrt(self.running[f"rv{i}"] + _BN_EPS)
            h = np.maximum(self.params[f"gamma{i}"] * xhat + self.params[f"beta{i}"], 0.0)
        z = h @ self.params["Wo"][:, 0] + self.params["bo"][0]
        return _sigmoid(z)


def init_mlp_params(
    input_dim: int, hidden: tuple[int, ...], seed: int
) -> dict[str, np.ndarray]:
    rng = stream(seed, "mlp-init")
    params: dict[str, np.ndarray] = {}
    fan_in = input_dim
    for i, width in enumerate(hidden):
        params[f"W{i}"] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, width))
        params[f"b{i}"] = np.zeros(width)
        params[f"gamma{i}"] = np.ones(width)
        params[f"beta{i}"] = np.zeros(width)
        fan_in = width
    params["Wo"] = rng.normal(0.0, math.sqrt(1.0 / fan_in), size=(fan_in, 1))
    params["bo"] = np.zeros(1)
    return params


def mlp_forward_train(
    params: dict[str, np.ndarray],
    hidden: tuple[int, ...],
    x: np.ndarray,
    dropout_masks: list[np.ndarray] | None = None,
) -> tuple[np.ndarray, list[dict]]:
    """Training-mode forward pass using batch statistics; returns caches."""
    h = x
    caches = []
    for i in range(len(hidden)):
        a = h @ params[f"W{i}"] + params[f"b{i}"]
        mu = a.mean(axis=0)
        var = a.var(axis=0)
        ivar = 1.0 / np.sqrt(var + _BN_EPS)
        xhat = (a - mu) * ivar
        z = params[f"gamma{i}"] * xhat + params[f"beta{i}"]
        r = np.maximum(z, 0.0)
        if dropout_masks is not None:
            r = r * dropout_masks[i]
        caches.append(
            {"h_in": h, "xhat": xhat, "ivar": ivar, "z": z, "mu": mu, "var": var, "r": r}
        )
        h = r
    z_out = h @ params["Wo"][:, 0] + params["bo"][0]
    return _sigmoid(z_out), caches


def _mlp_backward(
    params: dict[str, np.ndarray],
    hidden: tuple[int, ...],
    caches: list[dict],
    probs: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    l2_lambda: float,
    dropout_masks: list[np.ndarray] | None,
) -> dict[str, np.ndarray]:
    n = len(y)
    grads: dict[str, np.ndarray] = {}
    dz = (w * (probs - y) / n)[:, None]  # (n, 1)
    h_last = caches[-1]["r"] if caches else x
    grads["Wo"] = h_last.T @ dz + l2_lambda * params["Wo"]
    grads["bo"] = dz.sum(axis=0)
    dh = dz @ params["Wo"].T
    for i in reversed(range(len(hidden))):
        c = caches[i]
        if dropout_masks is not None:
            dh = dh * dropout_masks[i]
        dzl = dh * (c["z"] > 0)
        grads[f"gamma{i}"] = (dzl * c["xhat"]).sum(axis=0)
        grads[f"beta{i}"] = dzl.sum(axis=0)
        dxhat = dzl * params[f"gamma{i}"]
        m = dzl.shape[0]
        da = (
            c["ivar"]
            / m
            * (m * dxhat - dxhat.sum(axis=0) - c["xhat"] * (dxhat * c["xhat"]).sum(axis=0))
        )
        grads[f"W{i}"] = c["h_in"].T @ da + l2_lambda * params[f"W{i}"]
        grads[f"b{i}"] = da.sum(axis=0)
        dh = da @ params[f"W{i}"].T
    return grads


def mlp_loss_and_grads(
    params: dict[str, np.ndarray],
    hidden: tuple[int, ...],
    x: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    l2_lambda: float = 0.0,
    dropout_masks: list[np.ndarray] | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and analytic gradients in training mode (batch statistics).

    A pure function of params, so finite differences can check every entry.
    """
    probs, caches = mlp_forward_train(params, hidden, x, dropout_masks)
    loss = _bce(probs, y, w)
    for i in range(len(hidden)):
        loss += 0.5 * l2_lambda * float(np.sum(params[f"W{i}"] ** 2))
    loss += 0.5 * l2_lambda * float(np.sum(params["Wo"] ** 2))
    grads = _mlp_backward(params, hidden, caches, probs, x, y, w, l2_lambda, dropout_masks)
    return loss, grads


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


def _val_split(
    n: int, day_index: np.ndarray | None, fraction: float
) -> tuple[np.ndarray, np.ndarray]:
    """Boolean (train, val) masks; validation takes the last days (or rows)."""
    if day_index is not None:
        days = np.unique(day_index)
        if len(days) >= 2:
            n_val_days = max(1, int(math.ceil(fraction * len(days))))
            if n_val_days < len(days):
                val_days = days[-n_val_days:]
                val = np.isin(day_index, val_days)
                return ~val, val
    idx = np.arange(n)
    n_val = int(fraction * n)
    if n_val < 1 or n_val >= n:
        return np.ones(n, dtype=bool), np.zeros(n, dtype=bool)
    val = idx >= n - n_val
    return ~val, val


def train_mlp(
    x: np.ndarray,
    y: np.ndarray,
    config: MlpConfig | None = None,
    seed: int = 0,
    day_index: np.ndarray | None = None,
    class_weight: str | None = "balanced",
) -> MlpModel:
    """Adam-trained MLP with early stopping on held-out validation loss.

    The validation split takes the last ``val_day_fraction`` of training days
    (falling back to a row split when day indices are absent).  Training is
    deterministic for a fixed seed: init, shuffling, and dropout masks all
    come from counter-based streams.
    """
    cfg = config or MlpConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise ValueError("training set must contain both classes")
    weights_all = (
        inverse_frequency_weights(y) if class_weight == "balanced" else np.ones(len(y))
    )
    model = MlpModel(
        params=init_mlp_params(x.shape[1], cfg.hidden, seed),
        running={
            **{f"rm{i}": np.zeros(wd) for i, wd in enumerate(cfg.hidden)},
            **{f"rv{i}": np.ones(wd) for i, wd in enumerate(cfg.hidden)},
        },
        config=cfg,
        input_dim=x.shape[1],
        seed=seed,
    )
    if cfg.max_epochs == 0:
        return model

    train_mask, val_mask = _val_split(len(y), day_index, cfg.val_day_fraction)
    if len(np.unique(y[train_mask])) < 2:
        train_mask = np.ones(len(y), dtype=bool)
        val_mask = np.zeros(len(y), dtype=bool)
    xt, yt, wt = x[train_mask], y[train_mask], weights_all[train_mask]
    xv, yv, wv = x[val_mask], y[val_mask], weights_all[val_mask]

    adam = _Adam(model.params, cfg.learning_rate)
    best_val = math.inf
    best_params: dict[str, np.ndarray] | None = None
    best_running: dict[str, np.ndarray] | None = None
    best_epoch = 0
    stale = 0
    n_train = len(yt)
    batch = min(cfg.batch_size, n_train)
    for epoch in range(1, cfg.max_epochs + 1):
        order = stream(seed, "mlp-shuffle", epoch).permutation(n_train)
        for step, start in enumerate(range(0, n_train, batch)):
            sel = order[start : start + batch]
            masks = None
            if cfg.dropout > 0:
                drop_rng = stream(seed, "mlp-drop", epoch, step)
                masks = [
                    (drop_rng.random((len(sel), wd)) >= cfg.dropout) / (1.0 - cfg.dropout)
                    for wd in cfg.hidden
                ]
            probs, caches = mlp_forward_train(model.params, cfg.hidden, xt[sel], masks)
            grads = _mlp_backward(
                model.params, cfg.hidden, caches, probs, xt[sel], yt[sel], wt[sel],
                cfg.l2_lambda, masks,
            )
            mom = cfg.bn_momentum
            for i, c in enumerate(caches):
                model.running[f"rm{i}"] = mom * model.running[f"rm{i}"] + (1 - mom) * c["mu"]
                model.running[f"rv{i}"] = mom * model.running[f"rv{i}"] + (1 - mom) * c["var"]
            adam.step(model.params, grads)
        model.epochs_trained = epoch
        if len(yv):
            val_loss = _bce(model.scores(xv), yv, wv)
            if val_loss < best_val - 1e-9:
                best_val = val_loss
                best_params = {k: v.copy() for k, v in model.params.items()}
                best_running = {k: v.copy() for k, v in model.running.items()}
                best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if best_params is not None:
        model.params = best_params
        model.running = best_running or model.running
        model.epochs_trained = best_epoch
    return model


# --- Attention fusion --------------------------------------------------------------


@dataclass
class AttentionConfig:
    hidden: int = 16
    learning_rate: float = 3e-3
    max_epochs: int = 200
    l2_lambda: float = 1e-4


@dataclass
class AttentionModel:
    """Shared per-link scorer with softmax weights over links.

    soft: classify the attention-weighted sum of per-link feature vectors.
    hard(k): keep the k highest-scored links, then concat + logistic head.
    """

    mode: str
    params: dict[str, np.ndarray]
    config: AttentionConfig
    links: list[LinkKey]
    k: int | None = None
    selected: list[LinkKey] = field(default_factory=list)
    head: LogisticModel | None = None
    seed: int = 0

    def weights(self, features: np.ndarray) -> np.ndarray:
        """Per-sample link weights (rows on the probability simplex)."""
        _, a, _ = _attention_forward(self.params, np.asarray(features, dtype=np.float64))
        return a

    def scores(self, features: np.ndarray) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        if self.mode == "soft":
            probs, _, _ = _attention_forward(self.params, f)
            return probs
        idx = [self.links.index(l) for l in self.selected]
        flat = f[:, idx, :].reshape(len(f), -1)
        assert self.head is not None
        return self.head.predict_proba(flat)


def _attention_forward(
    params: dict[str, np.ndarray], x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, dict]:
    s1 = x @ params["W1"] + params["b1"]  # (n, L, H)
    r = np.maximum(s1, 0.0)
    e = r @ params["w2"] + params["b2"]  # (n, L)
    e_shift = e - e.max(axis=1, keepdims=True)
    expe = np.exp(e_shift)
    a = expe / expe.sum(axis=1, keepdims=True)
    fused = np.einsum("nl,nlf->nf", a, x)
    logit = fused @ params["v"] + params["c"]
    probs = _sigmoid(logit)
    return probs, a, {"s1": s1, "r": r, "a": a, "fused": fused}


def attention_loss_and_grads(
    params: dict[str, np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    l2_lambda: float,
) -> tuple[float, dict[str, np.ndarray]]:
    n = len(y)
    probs, a, cache = _attention_forward(params, x)
    loss = _bce(probs, y, w)
    for k in ("W1", "w2", "v"):
        loss += 0.5 * l2_lambda * float(np.sum(params[k] ** 2))
    g = w * (probs - y) / n  # (n,)
    grads: dict[str, np.ndarray] = {}
    grads["v"] = cache["fused"].T @ g + l2_lambda * params["v"]
    grads["c"] = np.array(g.sum())
    dfused = g[:, None] * params["v"][None, :]  # (n, F)
    da = np.einsum("nf,nlf->nl", dfused, x)
    de = a * (da - (a * da).sum(axis=1, keepdims=True))
    grads["w2"] = np.einsum("nlh,nl->h", cache["r"], de) + l2_lambda * params["w2"]
    grads["b2"] = np.array(de.sum())
    dr = de[:, :, None] * params["w2"][None, None, :]
    ds1 = dr * (cache["s1"] > 0)
    grads["W1"] = np.einsum("nlf,nlh->fh", x, ds1) + l2_lambda * params["W1"]
    grads["b1"] = ds1.sum(axis=(0, 1))
    return loss, grads


def attention_fusion(
    train: Dataset,
    mode: str = "soft",
    seed: int = 0,
    k: int | None = None,
    config: AttentionConfig | None = None,
) -> AttentionModel:
    """Learn per-link importance scores end to end with a logistic output.

    soft attention keeps the softmax-normalized weighted sum; hard attention
    ranks links by mean learned weight, keeps the top k, and fits a logistic
    head on their concatenation.
    """
    if mode not in ("soft", "hard"):
        raise ValueError(f"unknown attention mode {mode!r}")
    cfg = config or AttentionConfig()
    x = train.features
    y = train.labels
    if mode == "hard":
        if k is None or not 1 <= k <= train.n_links:
            raise ValueError("hard attention needs k in [1, n_links]")
    w = inverse_frequency_weights(y)
    rng = stream(seed, "attention-init")
    f = x.shape[2]
    params = {
        "W1": rng.normal(0.0, math.sqrt(2.0 / f), size=(f, cfg.hidden)),
        "b1": np.zeros(cfg.hidden),
        "w2": rng.normal(0.0, math.sqrt(1.0 / cfg.hidden), size=cfg.hidden),
        "b2": np.array(0.0),
        "v": rng.normal(0.0, math.sqrt(1.0 / f), size=f),
        "c": np.array(0.0),
    }
    adam = _Adam(params, cfg.learning_rate)
    for _ in range(cfg.max_epochs):
        _, grads = attention_loss_and_grads(params, x, y, w, cfg.l2_lambda)
        adam.step(params, grads)
    model = AttentionModel(
        mode=mode, params=params, config=cfg, links=list(train.links), k=k, seed=seed
    )
    if mode == "hard":
        mean_w = model.weights(x).mean(axis=0)
        order = sorted(range(train.n_links), key=lambda i: (-mean_w[i], train.links[i]))
        model.selected = [train.links[i] for i in order[: k or 1]]
        flat = concat_fusion(train, model.selected)
        model.head = train_logistic(flat, y, seed=seed)
    return model


# --- Checkpoints ---------------------------------------------------------------------


def save_model(model: LogisticModel | MlpModel, path: str | Path) -> None:
    """Persist a model as JSON (weights, config, seed)."""
    if isinstance(model, LogisticModel):
        doc = {
            "kind": "logistic",
            "weights": model.weights.tolist(),
            "l2_lambda": model.l2_lambda,
            "seed": model.seed,
            "n_iter": model.n_iter,
            "converged": model.converged,
        }
    elif isinstance(model, MlpModel):
        doc = {
            "kind": "mlp",
            "params": {k: v.tolist() for k, v in model.params.items()},
            "running": {k: v.tolist() for k, v in model.running.items()},
            "hidden": list(model.config.hidden),
            "dropout": model.config.dropout,
            "input_dim": model.input_dim,
            "seed": model.seed,
            "epochs_trained": model.epochs_trained,
        }
    else:
        raise TypeError(f"cannot save {type(model).__name__}")
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_model(path: str | Path) -> LogisticModel | MlpModel:
    doc = json.loads(Path(path).read_text())
    if doc["kind"] == "logistic":
        return LogisticModel(
            weights=np.array(doc["weights"]),
            l2_lambda=doc["l2_lambda"],
            seed=doc["seed"],
            n_iter=doc["n_iter"],
            converged=doc["converged"],
        )
    if doc["kind"] == "mlp":
        cfg = MlpConfig(hidden=tuple(doc["hidden"]), dropout=doc["dropout"])
        return MlpModel(
            params={k: np.array(v) for k, v in doc["params"].items()},
            running={k: np.array(v) for k, v in doc["running"].items()},
            config=cfg,
            input_dim=doc["input_dim"],
            seed=doc["seed"],
            epochs_trained=doc["epochs_trained"],
        )
    raise ValueError(f"unknown model kind {doc['kind']!r}")
