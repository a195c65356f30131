"""Shared causal-effect algebra and the estimator-comparison harness.

`EffectEstimate` is the common currency between modules: a treatment-effect
value tagged with the population scope it describes and the sample counts
behind it. Aggregation always excludes skipped estimates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import ValidationError

Scope = str  # one of: pair, cutoff, item, subgroup, population
STATUS_OK = "ok"
STATUS_SKIPPED = "skipped"


@dataclass(frozen=True)
class EffectEstimate:
    """An ITE/CATE/ATE value with its scope and supporting sample counts."""

    value: float
    scope: Scope
    n_treated: int = 0
    n_control: int = 0
    status: str = STATUS_OK
    label: str = ""

    @property
    def count(self) -> int:
        return self.n_treated + self.n_control

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    @staticmethod
    def skipped(scope: Scope, label: str = "") -> "EffectEstimate":
        return EffectEstimate(float("nan"), scope, 0, 0, STATUS_SKIPPED, label)


def aggregate(
    estimates: Sequence[EffectEstimate],
    weights: str = "counts",
    scope: Scope = "population",
) -> EffectEstimate:
    """Weighted mean of the ok-status estimates; skipped entries are excluded
    and counts are summed. `weights` is "counts" or "uniform"."""
    ok = [e for e in estimates if e.ok]
    if not ok:
        raise ValidationError("nothing to aggregate: all estimates are skipped")
    if weights == "counts":
        w = np.array([e.count for e in ok], dtype=np.float64)
        if w.sum() <= 0:
            raise ValidationError("count weights sum to zero")
    elif weights == "uniform":
        w = np.ones(len(ok))
    else:
        raise ValidationError(f"unknown weighting {weights!r}")
    v = np.array([e.value for e in ok])
    return EffectEstimate(
        value=float(np.dot(w, v) / w.sum()),
        scope=scope,
        n_treated=int(sum(e.n_treated for e in ok)),
        n_control=int(sum(e.n_control for e in ok)),
    )


class Estimator(Protocol):
    """An ATE estimator fit once on the training split and then asked for
    per-item estimates on any split."""

    name: str

    def fit(self, ds_train) -> None: ...

    def per_item_ates(self, ds) -> dict[str, EffectEstimate]: ...


@dataclass
class EstimatorResult:
    """One estimator's output on one dataset split."""

    name: str
    per_item: dict[str, EffectEstimate]
    pooled: EffectEstimate
    seconds: float
    config_fingerprint: str = ""


@dataclass
class ComparisonRow:
    name: str
    ate_within: float | None
    ate_out: float | None
    eps_within: float | None
    eps_out: float | None
    eps_true_within: float | None = None
    eps_true_out: float | None = None
    seconds: float = 0.0
    error: str = ""


@dataclass
class ComparisonReport:
    rdd_within: EstimatorResult
    rdd_out: EstimatorResult
    rows: list[ComparisonRow] = field(default_factory=list)
    results: dict[str, tuple[EstimatorResult, EstimatorResult]] = field(default_factory=dict)


def compare_estimators(
    ds_train,
    ds_test,
    estimators: Sequence[Estimator],
    rdd_config=None,
    true_population_ate: float | None = None,
) -> ComparisonReport:
    """Run each estimator within-sample (train) and out-of-sample (test),
    scoring both against the RDD reference computed on the same split.

    Individual estimator failures are recorded on their row and do not stop
    the sweep. With a known true population ATE (synthetic logs), absolute
    errors against the truth are reported as well.
    """
    from .metrics import epsilon_ate
    from .rdd import RddConfig, population_ate_rdd

    rdd_config = rdd_config or RddConfig()
    refs = []
    for split_name, ds in (("within", ds_train), ("out", ds_test)):
        start = time.perf_counter()
        res = population_ate_rdd(ds, config=rdd_config)
        refs.append(
            EstimatorResult(
                name="rdd",
                per_item=res.per_item,
                pooled=res.pooled,
                seconds=time.perf_counter() - start,
            )
        )
    report = ComparisonReport(rdd_within=refs[0], rdd_out=refs[1])
    report.rows.append(
        ComparisonRow(
            name="rdd",
            ate_within=refs[0].pooled.value,
            ate_out=refs[1].pooled.value,
            eps_within=None,
            eps_out=None,
            eps_true_within=_abs_err(refs[0].pooled.value, true_population_ate),
            eps_true_out=_abs_err(refs[1].pooled.value, true_population_ate),
            seconds=refs[0].seconds + refs[1].seconds,
        )
    )
    for est in estimators:
        start = time.perf_counter()
        try:
            est.fit(ds_train)
            within = est.per_item_ates(ds_train)
            out = est.per_item_ates(ds_test)
            pooled_w = aggregate(list(within.values()))
            pooled_o = aggregate(list(out.values()))
            eps_w = epsilon_ate(within, refs[0].per_item)
            eps_o = epsilon_ate(out, refs[1].per_item)
        except Exception as exc:  # recorded, sweep continues
            report.rows.append(
                ComparisonRow(est.name, None, None, None, None, error=str(exc))
            )
            continue
        seconds = time.perf_counter() - start
        report.results[est.name] = (
            EstimatorResult(est.name, within, pooled_w, seconds),
            EstimatorResult(est.name, out, pooled_o, seconds),
        )
        report.rows.append(
            ComparisonRow(
                name=est.name,
                ate_within=pooled_w.value,
                ate_out=pooled_o.value,
                eps_within=eps_w.value,
                eps_out=eps_o.value,
                eps_true_within=_abs_err(pooled_w.value, true_population_ate),
                eps_true_out=_abs_err(pooled_o.value, true_population_ate),
                seconds=seconds,
            )
        )
    return report


def _abs_err(value: float | None, truth: float | None) -> float | None:
    if value is None or truth is None:
        return None
    return abs(value - truth)


# -- estimator adapters ---------------------------------------------------------
# Imports happen inside methods: baselines/model/metrics all depend on this
# module for EffectEstimate.


class StatisticEstimator:
    """Naive treated-vs-control mean difference per item."""

    name = "statistic"

    def fit(self, ds_train) -> None:
        pass

    def per_item_ates(self, ds) -> dict[str, EffectEstimate]:
        from .baselines import statistic_ate_per_item

        return statistic_ate_per_item(ds)


class SnipsEstimator:
    """Self-normalized inverse-propensity estimator; the propensity model is
    fit on the training split and reused out-of-sample."""

    name = "snips"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.propensity = None

    def fit(self, ds_train) -> None:
        from .baselines import fit_propensity

        self.propensity = fit_propensity(ds_train, seed=self.seed)

    def per_item_ates(self, ds) -> dict[str, EffectEstimate]:
        from .baselines import snips_ate_per_item

        if self.propensity is None:
            raise ValidationError("SNIPS estimator used before fit()")
        return snips_ate_per_item(ds, self.propensity)


class FactorModelEstimator:
    """Pairwise-factorization ITE estimator: per-item mean treatment contrast
    over the distinct (user, item) pairs observed in the split.

    Estimate counts hold the number of pairs behind each item mean, so
    pooling per-item values count-weighted equals the flat mean over pairs.
    """

    def __init__(self, config, factors=None, name: str = "pairwise_cf"):
        self.name = name
        self.config = config
        self.factors = factors

    def fit(self, ds_train) -> None:
        from .model import init_factors, train

        if self.factors is None:
            self.factors = train(init_factors(self.config, ds_train), ds_train, self.config)

    def per_item_ates(self, ds) -> dict[str, EffectEstimate]:
        from .model import estimate_ites

        if self.factors is None:
            raise ValidationError("model estimator used before fit()")
        key = ds.u.astype(np.int64) * ds.n + ds.i
        pair_key = np.unique(key)
        uu = (pair_key // ds.n).astype(np.int64)
        ii = (pair_key % ds.n).astype(np.int64)
        ites = estimate_ites(self.factors, uu, ii, self.config)
        sums = np.bincount(ii, weights=ites, minlength=ds.n)
        counts = np.bincount(ii, minlength=ds.n)
        out: dict[str, EffectEstimate] = {}
        for ix, item in enumerate(ds.item_ids):
            if counts[ix] == 0:
                out[item] = EffectEstimate.skipped("item", label=item)
            else:
                out[item] = EffectEstimate(
                    value=float(sums[ix] / counts[ix]),
                    scope="item",
                    n_treated=int(counts[ix]),
                    label=item,
                )
        return out
