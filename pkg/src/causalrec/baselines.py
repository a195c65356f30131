"""Reference effect estimators: naive group difference and SNIPS.

The naive "statistic" estimate is the raw purchase-rate gap between treated
and control records; under preference-driven exposure it overstates the
effect. SNIPS reweights each arm by inverse estimated exposure probability,
self-normalized so the weights on each arm sum to one, which removes the
raw-scale sensitivity of plain inverse-propensity weighting.

The propensity model is a single-layer logistic regression of treatment on
the concatenated user and item features, trained with the same Adagrad rule
as the factor model; predictions are clipped to [p_min, 1 - p_min] to
enforce empirical positivity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .effects import EffectEstimate
from .errors import ValidationError
from .model import LogisticRegressionDiagnostics, _sigmoid, adagrad_logistic_regression

DEFAULT_P_MIN = 0.01


@dataclass
class PropensityModel:
    """Logistic exposure model over [user features, item features, intercept]."""

    weights: np.ndarray
    p_min: float = DEFAULT_P_MIN
    diagnostics: LogisticRegressionDiagnostics | None = None

    def raw_propensities(self, ds: Dataset) -> np.ndarray:
        X = _design_matrix(ds)
        return _sigmoid(X @ self.weights[:-1] + self.weights[-1])

    def propensities(self, ds: Dataset) -> np.ndarray:
        return np.clip(self.raw_propensities(ds), self.p_min, 1.0 - self.p_min)

    def pair_propensities(self, ds: Dataset, u: np.ndarray, i: np.ndarray) -> np.ndarray:
        """Clipped exposure probabilities for arbitrary (user, item) index pairs."""
        X = np.hstack([ds.user_features[u], ds.item_features[i]])
        raw = _sigmoid(X @ self.weights[:-1] + self.weights[-1])
        return np.clip(raw, self.p_min, 1.0 - self.p_min)


def _design_matrix(ds: Dataset) -> np.ndarray:
    return np.hstack([ds.user_features[ds.u], ds.item_features[ds.i]])


def statistic_ate(ds: Dataset) -> EffectEstimate:
    """Naive difference of outcome means between treated and control records."""
    treated = ds.t == 1
    n1 = int(treated.sum())
    n0 = len(ds) - n1
    if n1 == 0 or n0 == 0:
        raise ValidationError("statistic ATE needs both treated and control records")
    value = float(ds.y[treated].mean() - ds.y[~treated].mean())
    return EffectEstimate(value, scope="population", n_treated=n1, n_control=n0)


def _per_item_sweep(ds: Dataset, fn) -> dict[str, EffectEstimate]:
    """Apply fn(slice) per item over an item-sorted view of the records."""
    order = np.argsort(ds.i, kind="stable")
    sorted_i = ds.i[order]
    out: dict[str, EffectEstimate] = {}
    for ix, item in enumerate(ds.item_ids):
        lo, hi = np.searchsorted(sorted_i, [ix, ix + 1])
        out[item] = fn(item, order[lo:hi])
    return out


def statistic_ate_per_item(ds: Dataset) -> dict[str, EffectEstimate]:
    """Naive estimate per item; items missing an arm come back skipped."""

    def one(item: str, rows: np.ndarray) -> EffectEstimate:
        t = ds.t[rows]
        y = ds.y[rows]
        n1 = int((t == 1).sum())
        n0 = rows.size - n1
        if n1 == 0 or n0 == 0:
            return EffectEstimate.skipped("item", label=item)
        value = float(y[t == 1].mean() - y[t == 0].mean())
        return EffectEstimate(value, scope="item", n_treated=n1, n_control=n0, label=item)

    return _per_item_sweep(ds, one)


def fit_propensity(
    ds: Dataset,
    p_min: float = DEFAULT_P_MIN,
    learning_rate: float = 0.05,
    l2_coeff: float = 1e-6,
    batch_size: int = 4096,
    epochs: int = 3,
    seed: int = 0,
) -> PropensityModel:
    """Logistic regression of treatment on pre-treatment features.

    Raises on datasets missing a treatment arm and on degenerate fits whose
    predictions separate the arms completely (nothing usable survives
    clipping on one side).
    """
    if not 0.0 < p_min < 0.5:
        raise ValidationError(f"p_min must lie in (0, 0.5), got {p_min}")
    t = (ds.t == 1).astype(np.int8)
    if t.all() or not t.any():
        raise ValidationError("propensity fit needs both treatment arms observed")
    if ds.schema.f_u + ds.schema.f_i == 0:
        raise ValidationError("propensity fit needs user or item features")
    X = _design_matrix(ds)
    weights, diag = adagrad_logistic_regression(
        X,
        t,
        learning_rate=learning_rate,
        l2_coeff=l2_coeff,
        batch_size=batch_size,
        epochs=epochs,
        seed=seed,
    )
    model = PropensityModel(weights=weights, p_min=p_min, diagnostics=diag)
    raw = model.raw_propensities(ds)
    if raw.min() >= 1.0 - p_min or raw.max() <= p_min:
        raise ValidationError(
            "degenerate propensity fit: every prediction falls on one side of the clip range"
        )
    return model


def normalized_inverse_propensity_weights(propensities: np.ndarray) -> np.ndarray:
    """Inverse-propensity weights rescaled to sum to one."""
    w = 1.0 / np.asarray(propensities, dtype=np.float64)
    return w / w.sum()


def _snips_value(y: np.ndarray, t: np.ndarray, e: np.ndarray) -> float:
    w1 = normalized_inverse_propensity_weights(e[t == 1])
    w0 = normalized_inverse_propensity_weights(1.0 - e[t == 0])
    return float(w1 @ y[t == 1] - w0 @ y[t == 0])


def snips_ate(ds: Dataset, pm: PropensityModel) -> EffectEstimate:
    """Self-normalized inverse-propensity estimate of the population effect."""
    t = ds.t
    n1 = int((t == 1).sum())
    n0 = len(ds) - n1
    if n1 == 0 or n0 == 0:
        raise ValidationError("SNIPS needs both treated and control records")
    e = pm.propensities(ds)
    value = _snips_value(ds.y.astype(np.float64), t, e)
    return EffectEstimate(value, scope="population", n_treated=n1, n_control=n0)


def snips_ate_per_item(ds: Dataset, pm: PropensityModel) -> dict[str, EffectEstimate]:
    """SNIPS per item: one shared propensity model, weights self-normalized
    within each item's records."""
    e_all = pm.propensities(ds)

    def one(item: str, rows: np.ndarray) -> EffectEstimate:
        t = ds.t[rows]
        n1 = int((t == 1).sum())
        n0 = rows.size - n1
        if n1 == 0 or n0 == 0:
            return EffectEstimate.skipped("item", label=item)
        value = _snips_value(ds.y[rows].astype(np.float64), t, e_all[rows])
        return EffectEstimate(value, scope="item", n_treated=n1, n_control=n0, label=item)

    return _per_item_sweep(ds, one)
