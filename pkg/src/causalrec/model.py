"""Pairwise user/item/treatment factorization with logistic-loss training.

The score for (user u, item i, treatment t) is the sum of the three pairwise
inner products

    s(u, i, t) = p_u . q_i  +  p_u . d_t  +  q_i . d_t

so the raw-score treatment contrast collapses to (p_u + q_i) . (d_1 - d_0).
Binary outcomes are fit with sigmoid cross-entropy plus an L2 penalty, via
mini-batch adaptive-gradient descent (per-parameter step size
learning_rate / sqrt(accumulated squared gradient + 1e-8)).

Latent vectors come either from id-indexed embedding rows or from a linear
projection of dense features; treatment vectors are always embedded rows.
With treatment factors frozen at zero the model degenerates to plain
logistic matrix factorization over p_u . q_i, which doubles as the
purchase-probability ranking baseline.

All gradients are hand-written; `gradient_check` compares every partial
derivative of the per-record loss against central finite differences.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data import Dataset
from .errors import TrainingError, ValidationError

ADAGRAD_EPS = 1e-8
INIT_RANGE = 0.05
MODE_ID = "id_embedding"
MODE_FEATURE = "feature_linear"
_CHECKPOINT_VERSION = "causalrec-checkpoint-1"
_PROB_CLIP = 1e-15


@dataclass(frozen=True)
class ModelConfig:
    k: int = 8
    l2_coeff: float = 1e-5
    learning_rate: float = 0.001
    batch_size: int = 512
    epochs: int = 5
    seed: int = 0
    encoder_mode: str = MODE_ID
    use_probability_scale_ite: bool = True
    train_treatment_factors: bool = True

    def validate(self) -> None:
        if self.k < 1:
            raise ValidationError(f"latent rank must be >= 1, got {self.k}")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be nonnegative")
        if self.l2_coeff < 0:
            raise ValidationError("l2_coeff must be nonnegative")
        if self.encoder_mode not in (MODE_ID, MODE_FEATURE):
            raise ValidationError(f"unknown encoder_mode {self.encoder_mode!r}")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class TrainRecord(NamedTuple):
    """One observation in index form, as consumed by the optimizer."""

    u: int
    i: int
    t: int
    y: int


@dataclass
class FactorSet:
    """Latent matrices plus optimizer state.

    In id mode `P` and `Q` are free embedding tables. In feature mode the
    user/item vectors are X @ W projections of the bound feature matrices and
    `P`/`Q` stay None. Accumulators mirror the trainable parameters.
    """

    mode: str
    k: int
    m: int
    n: int
    D: np.ndarray
    accum_D: np.ndarray
    P: np.ndarray | None = None
    Q: np.ndarray | None = None
    accum_P: np.ndarray | None = None
    accum_Q: np.ndarray | None = None
    W_u: np.ndarray | None = None
    W_i: np.ndarray | None = None
    accum_Wu: np.ndarray | None = None
    accum_Wi: np.ndarray | None = None
    user_features: np.ndarray | None = None
    item_features: np.ndarray | None = None
    user_table_hash: str = ""
    item_table_hash: str = ""
    loss_history: list[float] = field(default_factory=list)

    @property
    def l(self) -> int:
        return self.D.shape[0]

    def user_vectors(self, u: np.ndarray) -> np.ndarray:
        if self.mode == MODE_ID:
            return self.P[u]
        return self.user_features[u] @ self.W_u

    def item_vectors(self, i: np.ndarray) -> np.ndarray:
        if self.mode == MODE_ID:
            return self.Q[i]
        return self.item_features[i] @ self.W_i

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        """Trainable parameters, in the fixed order used for checksums."""
        if self.mode == MODE_ID:
            return {"P": self.P, "Q": self.Q, "D": self.D}
        return {"W_u": self.W_u, "W_i": self.W_i, "D": self.D}

    def accumulator_arrays(self) -> dict[str, np.ndarray]:
        if self.mode == MODE_ID:
            return {"P": self.accum_P, "Q": self.accum_Q, "D": self.accum_D}
        return {"W_u": self.accum_Wu, "W_i": self.accum_Wi, "D": self.accum_D}


def _hash_ids(ids: list[str]) -> str:
    h = hashlib.sha256()
    for s in ids:
        h.update(s.encode())
        h.update(b"\x00")
    return h.hexdigest()


def init_factors(config: ModelConfig, ds: Dataset) -> FactorSet:
    """Fresh factors, i.i.d. uniform on [-0.05, 0.05] from the seeded stream.

    Draw order: P, Q, D in id mode; W_u, W_i, D in feature mode. When
    treatment factors are frozen, D is zero and draws none of the stream.
    """
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    k, l = config.k, ds.l

    def draw(shape):
        return rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape)

    fs = FactorSet(
        mode=config.encoder_mode,
        k=k,
        m=ds.m,
        n=ds.n,
        D=np.zeros((l, k)),
        accum_D=np.zeros((l, k)),
        user_table_hash=_hash_ids(ds.user_ids),
        item_table_hash=_hash_ids(ds.item_ids),
    )
    if config.encoder_mode == MODE_ID:
        fs.P = draw((ds.m, k))
        fs.Q = draw((ds.n, k))
        fs.accum_P = np.zeros((ds.m, k))
        fs.accum_Q = np.zeros((ds.n, k))
    else:
        fs.W_u = draw((ds.schema.f_u, k))
        fs.W_i = draw((ds.schema.f_i, k))
        fs.accum_Wu = np.zeros((ds.schema.f_u, k))
        fs.accum_Wi = np.zeros((ds.schema.f_i, k))
        fs.user_features = ds.user_features
        fs.item_features = ds.item_features
    if config.train_treatment_factors:
        fs.D = draw((l, k))
    return fs


# -- scoring ------------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_index(name: str, value: int, bound: int) -> None:
    if not 0 <= value < bound:
        raise ValidationError(f"{name} {value} out of range [0, {bound})")


def predict_scores(
    fs: FactorSet, u: np.ndarray, i: np.ndarray, t: np.ndarray
) -> np.ndarray:
    """Vectorized pairwise-interaction scores for index arrays."""
    pu = fs.user_vectors(np.asarray(u))
    qi = fs.item_vectors(np.asarray(i))
    dt = fs.D[np.asarray(t)]
    return (
        np.einsum("ij,ij->i", pu, qi)
        + np.einsum("ij,ij->i", pu, dt)
        + np.einsum("ij,ij->i", qi, dt)
    )


def predict_score(fs: FactorSet, u: int, i: int, t: int) -> float:
    """p_u.q_i + p_u.d_t + q_i.d_t for one (user, item, treatment) triple."""
    _check_index("user index", u, fs.m)
    _check_index("item index", i, fs.n)
    _check_index("treatment index", t, fs.l)
    return float(predict_scores(fs, np.array([u]), np.array([i]), np.array([t]))[0])


def predict_probabilities(
    fs: FactorSet, u: np.ndarray, i: np.ndarray, t: np.ndarray
) -> np.ndarray:
    p = _sigmoid(predict_scores(fs, u, i, t))
    return np.clip(p, _PROB_CLIP, 1.0 - _PROB_CLIP)


def predict_probability(fs: FactorSet, u: int, i: int, t: int) -> float:
    """Sigmoid of the score, clipped away from exact 0/1."""
    s = predict_score(fs, u, i, t)
    return float(np.clip(_sigmoid(np.array([s]))[0], _PROB_CLIP, 1.0 - _PROB_CLIP))


def estimate_ites(
    fs: FactorSet, u: np.ndarray, i: np.ndarray, config: ModelConfig
) -> np.ndarray:
    """Treatment-arm contrast per (u, i) pair: probability scale by default,
    raw score scale otherwise (which is exactly (p_u + q_i) . (d_1 - d_0))."""
    if fs.l != 2:
        raise ValidationError(
            f"ITE is defined for binary treatments; l={fs.l} requires naming both arms"
        )
    u = np.asarray(u)
    i = np.asarray(i)
    ones = np.ones(len(u), dtype=np.int64)
    s1 = predict_scores(fs, u, i, ones)
    s0 = predict_scores(fs, u, i, np.zeros_like(ones))
    if config.use_probability_scale_ite:
        return _sigmoid(s1) - _sigmoid(s0)
    return s1 - s0


def estimate_ite(fs: FactorSet, u: int, i: int, config: ModelConfig) -> float:
    _check_index("user index", u, fs.m)
    _check_index("item index", i, fs.n)
    return float(estimate_ites(fs, np.array([u]), np.array([i]), config)[0])


def encode_user(fs: FactorSet, user) -> np.ndarray:
    """Latent vector for a user given as an index (both modes) or a raw
    feature vector (feature mode only)."""
    if isinstance(user, (int, np.integer)):
        _check_index("user index", int(user), fs.m)
        return fs.user_vectors(np.array([int(user)]))[0]
    if fs.mode != MODE_FEATURE:
        raise ValidationError("id-embedding mode encodes indices, not feature vectors")
    x = np.asarray(user, dtype=np.float64)
    if x.shape != (fs.W_u.shape[0],):
        raise ValidationError(
            f"user feature length {x.size} does not match encoder input {fs.W_u.shape[0]}"
        )
    return x @ fs.W_u


def encode_item(fs: FactorSet, item) -> np.ndarray:
    if isinstance(item, (int, np.integer)):
        _check_index("item index", int(item), fs.n)
        return fs.item_vectors(np.array([int(item)]))[0]
    if fs.mode != MODE_FEATURE:
        raise ValidationError("id-embedding mode encodes indices, not feature vectors")
    x = np.asarray(item, dtype=np.float64)
    if x.shape != (fs.W_i.shape[0],):
        raise ValidationError(
            f"item feature length {x.size} does not match encoder input {fs.W_i.shape[0]}"
        )
    return x @ fs.W_i


# -- training -----------------------------------------------------------------


def full_loss(fs: FactorSet, ds: Dataset, config: ModelConfig, chunk: int = 1 << 20) -> float:
    """Training objective over the whole dataset: mean per-record
    cross-entropy plus the L2 term each record contributes."""
    total = 0.0
    for lo in range(0, len(ds), chunk):
        sl = slice(lo, lo + chunk)
        u, i, t, y = ds.u[sl], ds.i[sl], ds.t[sl], ds.y[sl].astype(np.float64)
        s = predict_scores(fs, u, i, t)
        bce = np.logaddexp(0.0, s) - y * s
        if config.l2_coeff > 0:
            if fs.mode == MODE_ID:
                reg = (
                    np.einsum("ij,ij->i", fs.P[u], fs.P[u])
                    + np.einsum("ij,ij->i", fs.Q[i], fs.Q[i])
                )
            else:
                reg = np.full(len(s), np.sum(fs.W_u**2) + np.sum(fs.W_i**2))
            if config.train_treatment_factors:
                reg = reg + np.einsum("ij,ij->i", fs.D[t], fs.D[t])
            bce = bce + config.l2_coeff * reg
        total += float(bce.sum())
    return total / max(len(ds), 1)


def log_loss(fs: FactorSet, ds: Dataset, chunk: int = 1 << 20) -> float:
    """Plain mean cross-entropy (no regularization), e.g. for held-out data."""
    total = 0.0
    for lo in range(0, len(ds), chunk):
        sl = slice(lo, lo + chunk)
        s = predict_scores(fs, ds.u[sl], ds.i[sl], ds.t[sl])
        y = ds.y[sl].astype(np.float64)
        total += float((np.logaddexp(0.0, s) - y * s).sum())
    return total / max(len(ds), 1)


def _scatter_adagrad(
    matrix: np.ndarray,
    accum: np.ndarray,
    idx: np.ndarray,
    grads: np.ndarray,
    lr: float,
) -> None:
    """One Adagrad step on the rows named by idx (duplicates accumulate)."""
    uniq, inv = np.unique(idx, return_inverse=True)
    g = np.zeros((uniq.size, matrix.shape[1]))
    np.add.at(g, inv, grads)
    acc = accum[uniq] + g * g
    accum[uniq] = acc
    matrix[uniq] -= lr * g / np.sqrt(acc + ADAGRAD_EPS)


def _dense_adagrad(matrix: np.ndarray, accum: np.ndarray, grad: np.ndarray, lr: float) -> None:
    accum += grad * grad
    matrix -= lr * grad / np.sqrt(accum + ADAGRAD_EPS)


def train(fs: FactorSet, ds: Dataset, config: ModelConfig) -> FactorSet:
    """Mini-batch Adagrad on the sigmoid cross-entropy objective.

    Deterministic given config.seed (single-threaded); `fs.loss_history`
    records the full-dataset objective before training and after each epoch.
    Raises TrainingError when parameters go non-finite, naming the batch.
    """
    config.validate()
    if len(ds) == 0:
        raise TrainingError("cannot train on an empty dataset")
    if ds.l != fs.l:
        raise ValidationError(f"dataset has {ds.l} treatment arms, model has {fs.l}")
    bad = (ds.y != 0) & (ds.y != 1)
    if bad.any():
        raise TrainingError(f"non-binary outcome at record {int(np.flatnonzero(bad)[0])}")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    lr, l2, bs = config.learning_rate, config.l2_coeff, config.batch_size
    for name, arr in fs.parameter_arrays().items():
        if not np.isfinite(arr).all():
            raise TrainingError(f"non-finite values in {name} before epoch 0")
    fs.loss_history = [full_loss(fs, ds, config)]
    for epoch in range(config.epochs):
        perm = rng.permutation(len(ds))
        for start in range(0, len(ds), bs):
            batch = perm[start : start + bs]
            bn = batch.size
            u, i, t = ds.u[batch], ds.i[batch], ds.t[batch]
            y = ds.y[batch].astype(np.float64)
            pu = fs.user_vectors(u)
            qi = fs.item_vectors(i)
            dt = fs.D[t]
            s = (
                np.einsum("ij,ij->i", pu, qi)
                + np.einsum("ij,ij->i", pu, dt)
                + np.einsum("ij,ij->i", qi, dt)
            )
            if not np.isfinite(s).all():
                raise TrainingError(
                    f"non-finite scores in epoch {epoch}, batch {start // bs}"
                )
            g = (_sigmoid(s) - y)[:, None] / bn
            d_pu = g * (qi + dt)
            d_qi = g * (pu + dt)
            if fs.mode == MODE_ID:
                if l2 > 0:
                    d_pu = d_pu + (2.0 * l2 / bn) * pu
                    d_qi = d_qi + (2.0 * l2 / bn) * qi
                _scatter_adagrad(fs.P, fs.accum_P, u, d_pu, lr)
                _scatter_adagrad(fs.Q, fs.accum_Q, i, d_qi, lr)
            else:
                xu = fs.user_features[u]
                xi = fs.item_features[i]
                g_wu = xu.T @ d_pu + 2.0 * l2 * fs.W_u
                g_wi = xi.T @ d_qi + 2.0 * l2 * fs.W_i
                _dense_adagrad(fs.W_u, fs.accum_Wu, g_wu, lr)
                _dense_adagrad(fs.W_i, fs.accum_Wi, g_wi, lr)
            if config.train_treatment_factors:
                d_dt = g * (pu + qi)
                if l2 > 0:
                    d_dt = d_dt + (2.0 * l2 / bn) * dt
                _scatter_adagrad(fs.D, fs.accum_D, t, d_dt, lr)
        for name, arr in fs.parameter_arrays().items():
            if not np.isfinite(arr).all():
                raise TrainingError(f"non-finite values in {name} after epoch {epoch}")
        fs.loss_history.append(full_loss(fs, ds, config))
    return fs


# -- gradient verification ------------------------------------------------------


def _record_loss(fs: FactorSet, config: ModelConfig, rec: TrainRecord) -> float:
    s = predict_scores(
        fs, np.array([rec.u]), np.array([rec.i]), np.array([rec.t])
    )[0]
    loss = float(np.logaddexp(0.0, s) - rec.y * s)
    l2 = config.l2_coeff
    if l2 > 0:
        if fs.mode == MODE_ID:
            reg = float(np.sum(fs.P[rec.u] ** 2) + np.sum(fs.Q[rec.i] ** 2))
        else:
            reg = float(np.sum(fs.W_u**2) + np.sum(fs.W_i**2))
        if config.train_treatment_factors:
            reg += float(np.sum(fs.D[rec.t] ** 2))
        loss += l2 * reg
    return loss


def record_gradients(
    fs: FactorSet, config: ModelConfig, rec: TrainRecord
) -> dict[str, np.ndarray]:
    """Analytical gradients of the per-record loss for every parameter the
    record touches. Embedding-row parameters are reported as single rows."""
    u = np.array([rec.u])
    i = np.array([rec.i])
    t = np.array([rec.t])
    pu = fs.user_vectors(u)[0]
    qi = fs.item_vectors(i)[0]
    dt = fs.D[rec.t]
    s = float(pu @ qi + pu @ dt + qi @ dt)
    g = float(_sigmoid(np.array([s]))[0]) - rec.y
    l2 = config.l2_coeff
    out: dict[str, np.ndarray] = {}
    d_pu = g * (qi + dt)
    d_qi = g * (pu + dt)
    if fs.mode == MODE_ID:
        out["P"] = d_pu + 2.0 * l2 * pu
        out["Q"] = d_qi + 2.0 * l2 * qi
    else:
        out["W_u"] = np.outer(fs.user_features[rec.u], d_pu) + 2.0 * l2 * fs.W_u
        out["W_i"] = np.outer(fs.item_features[rec.i], d_qi) + 2.0 * l2 * fs.W_i
    if config.train_treatment_factors:
        out["D"] = g * (pu + qi) + 2.0 * l2 * dt
    return out


def numerical_gradients(
    fs: FactorSet, config: ModelConfig, rec: TrainRecord, eps: float
) -> dict[str, np.ndarray]:
    """Central finite differences of the per-record loss, matching the layout
    of `record_gradients`."""

    def diff_at(arr: np.ndarray, index) -> float:
        orig = arr[index]
        arr[index] = orig + eps
        up = _record_loss(fs, config, rec)
        arr[index] = orig - eps
        down = _record_loss(fs, config, rec)
        arr[index] = orig
        return (up - down) / (2.0 * eps)

    out: dict[str, np.ndarray] = {}
    if fs.mode == MODE_ID:
        targets = [("P", fs.P, rec.u), ("Q", fs.Q, rec.i)]
        for name, arr, row in targets:
            out[name] = np.array([diff_at(arr, (row, j)) for j in range(fs.k)])
    else:
        for name, arr in (("W_u", fs.W_u), ("W_i", fs.W_i)):
            grad = np.zeros_like(arr)
            for a in range(arr.shape[0]):
                for b in range(arr.shape[1]):
                    grad[a, b] = diff_at(arr, (a, b))
            out[name] = grad
    if config.train_treatment_factors:
        out["D"] = np.array([diff_at(fs.D, (rec.t, j)) for j in range(fs.k)])
    return out


def gradient_check(
    fs: FactorSet, config: ModelConfig, rec: TrainRecord, eps: float = 1e-5
) -> float:
    """Max relative error between analytical and central-difference partials
    of the per-record loss; denominators are floored at 1e-6 so that noise on
    vanishing gradients is measured absolutely."""
    if not 1e-8 < eps < 1e-2:
        raise ValidationError(f"eps must lie in (1e-8, 1e-2), got {eps}")
    analytic = record_gradients(fs, config, rec)
    numeric = numerical_gradients(fs, config, rec, eps)
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


# -- checkpointing ------------------------------------------------------------


def _params_checksum(fs: FactorSet) -> str:
    h = hashlib.sha256()
    for name in sorted(fs.parameter_arrays()):
        h.update(np.ascontiguousarray(fs.parameter_arrays()[name]).tobytes())
    return h.hexdigest()


def save_checkpoint(fs: FactorSet, config: ModelConfig, path: str | Path) -> None:
    """Self-contained dump of config, parameters, optimizer state, and (in
    feature mode) the bound feature matrices; content-checksummed."""
    arrays: dict[str, np.ndarray] = {}
    for name, arr in fs.parameter_arrays().items():
        arrays[f"param_{name}"] = arr
    for name, arr in fs.accumulator_arrays().items():
        arrays[f"accum_{name}"] = arr
    if fs.mode == MODE_FEATURE:
        arrays["user_features"] = fs.user_features
        arrays["item_features"] = fs.item_features
    meta = {
        "version": _CHECKPOINT_VERSION,
        "config": asdict(config),
        "mode": fs.mode,
        "k": fs.k,
        "m": fs.m,
        "n": fs.n,
        "l": fs.l,
        "user_table_hash": fs.user_table_hash,
        "item_table_hash": fs.item_table_hash,
        "loss_history": fs.loss_history,
        "checksum": _params_checksum(fs),
    }
    with Path(path).open("wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str | Path) -> tuple[FactorSet, ModelConfig]:
    """Inverse of save_checkpoint; verifies version and parameter checksum so
    a reloaded model reproduces predictions bit-exactly or fails loudly."""
    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("version") != _CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {meta.get('version')!r}")
        config = ModelConfig(**meta["config"])
        fs = FactorSet(
            mode=meta["mode"],
            k=meta["k"],
            m=meta["m"],
            n=meta["n"],
            D=z["param_D"],
            accum_D=z["accum_D"],
            user_table_hash=meta["user_table_hash"],
            item_table_hash=meta["item_table_hash"],
            loss_history=list(meta["loss_history"]),
        )
        if fs.mode == MODE_ID:
            fs.P, fs.Q = z["param_P"], z["param_Q"]
            fs.accum_P, fs.accum_Q = z["accum_P"], z["accum_Q"]
        else:
            fs.W_u, fs.W_i = z["param_W_u"], z["param_W_i"]
            fs.accum_Wu, fs.accum_Wi = z["accum_W_u"], z["accum_W_i"]
            fs.user_features = z["user_features"]
            fs.item_features = z["item_features"]
    if _params_checksum(fs) != meta["checksum"]:
        raise ValidationError("checkpoint parameter checksum mismatch")
    return fs, config


# -- shared optimizer machinery -------------------------------------------------


@dataclass
class LogisticRegressionDiagnostics:
    log_loss: float
    calibration_bins: list[tuple[float, float, int]]  # (mean predicted, mean actual, count)


def adagrad_logistic_regression(
    X: np.ndarray,
    y: np.ndarray,
    learning_rate: float = 0.05,
    l2_coeff: float = 1e-6,
    batch_size: int = 4096,
    epochs: int = 3,
    seed: int = 0,
) -> tuple[np.ndarray, LogisticRegressionDiagnostics]:
    """Dense logistic regression trained with the same Adagrad rule as the
    factor model. Returns weights (intercept last) and fit diagnostics."""
    n, f = X.shape
    Xb = np.hstack([X, np.ones((n, 1))])
    w = np.zeros(f + 1)
    accum = np.zeros(f + 1)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    yf = y.astype(np.float64)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            b = perm[start : start + batch_size]
            s = Xb[b] @ w
            g = Xb[b].T @ (_sigmoid(s) - yf[b]) / b.size + 2.0 * l2_coeff * w
            _dense_adagrad(w[None, :], accum[None, :], g[None, :], learning_rate)
    s = Xb @ w
    p = _sigmoid(s)
    ll = float((np.logaddexp(0.0, s) - yf * s).mean())
    bins: list[tuple[float, float, int]] = []
    edges = np.linspace(0.0, 1.0, 11)
    which = np.clip(np.digitize(p, edges) - 1, 0, 9)
    for bin_ix in range(10):
        mask = which == bin_ix
        if mask.any():
            bins.append((float(p[mask].mean()), float(yf[mask].mean()), int(mask.sum())))
    return w, LogisticRegressionDiagnostics(log_loss=ll, calibration_bins=bins)
