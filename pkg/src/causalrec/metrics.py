"""Evaluation metrics: ATE error against the RDD reference, uplift-style
ranking metrics, precision, and subgroup effect tables.

The uplift metric compares, per user, the mean outcome of top-N items that
were actually recommended (treated records) against the mean outcome of
top-N items that were not (control records). Items the log never observed
for that user carry no outcome and are excluded, with counts reported in the
metric diagnostics; users missing either set are excluded the same way.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .baselines import PropensityModel, normalized_inverse_propensity_weights
from .data import Dataset
from .effects import EffectEstimate, aggregate
from .errors import MetricUndefinedError, ValidationError
from .model import FactorSet, ModelConfig, estimate_ites, predict_probabilities

RANK_BY_ITE = "ite"
RANK_BY_PROBABILITY = "probability"


@dataclass(frozen=True)
class RankedList:
    """One user's top-N ranking plus the set of items the log actually
    recommended to them."""

    user_id: str
    items: tuple[str, ...]
    scores: tuple[float, ...]
    logged_items: frozenset[str]

    def __post_init__(self):
        if len(set(self.items)) != len(self.items):
            raise ValidationError(f"ranked list for {self.user_id!r} has duplicate items")
        if len(self.scores) != len(self.items):
            raise ValidationError("scores and items must align")


@dataclass
class RankingMetric:
    value: float
    n_users: int
    n_excluded_users: int = 0
    n_unobserved_items: int = 0


@dataclass
class EpsilonResult:
    value: float
    model_pooled: float
    rdd_pooled: float
    per_item: dict[str, float] = field(default_factory=dict)


def epsilon_ate(
    model_ates: dict[str, EffectEstimate],
    rdd_ates: dict[str, EffectEstimate],
) -> EpsilonResult:
    """Absolute gap between the pooled model effect and the pooled RDD
    reference over their shared items, plus per-item absolute errors."""
    shared = [
        item
        for item, est in model_ates.items()
        if est.ok and item in rdd_ates and rdd_ates[item].ok
    ]
    if not shared:
        raise ValidationError("model and RDD estimates share no usable items")
    model_pooled = aggregate([model_ates[i] for i in shared]).value
    rdd_pooled = aggregate([rdd_ates[i] for i in shared]).value
    per_item = {i: abs(model_ates[i].value - rdd_ates[i].value) for i in shared}
    return EpsilonResult(
        value=abs(rdd_pooled - model_pooled),
        model_pooled=model_pooled,
        rdd_pooled=rdd_pooled,
        per_item=per_item,
    )


# -- ranked-list construction --------------------------------------------------


def build_ranked_lists(
    fs: FactorSet,
    config: ModelConfig,
    ds: Dataset,
    n: int,
    by: str = RANK_BY_ITE,
    max_users: int | None = None,
    seed: int = 0,
    chunk: int = 256,
) -> list[RankedList]:
    """Score every catalog item for each user in the log and keep the top n.

    `by` selects the ranking signal: the estimated treatment effect, or the
    predicted purchase probability under exposure. Ties break on item index
    so output is deterministic. `max_users` subsamples users with a seeded
    stream.
    """
    if by not in (RANK_BY_ITE, RANK_BY_PROBABILITY):
        raise ValidationError(f"unknown ranking signal {by!r}")
    users = np.unique(ds.u)
    if max_users is not None and users.size > max_users:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
        users = np.sort(rng.choice(users, size=max_users, replace=False))
    logged: dict[int, set[int]] = {int(u): set() for u in users}
    chosen = np.isin(ds.u, users) & (ds.t == 1)
    for u, i in zip(ds.u[chosen], ds.i[chosen]):
        logged[int(u)].add(int(i))

    n_items = ds.n
    item_grid = np.arange(n_items, dtype=np.int64)
    top_n = min(n, n_items)
    lists: list[RankedList] = []
    for lo in range(0, users.size, chunk):
        block = users[lo : lo + chunk]
        uu = np.repeat(block, n_items)
        ii = np.tile(item_grid, block.size)
        if by == RANK_BY_ITE:
            scores = estimate_ites(fs, uu, ii, config)
        else:
            scores = predict_probabilities(fs, uu, ii, np.ones(uu.size, dtype=np.int64))
        scores = scores.reshape(block.size, n_items)
        order = np.argsort(-scores, axis=1, kind="stable")[:, :top_n]
        for r, u in enumerate(block):
            picks = order[r]
            lists.append(
                RankedList(
                    user_id=ds.user_ids[int(u)],
                    items=tuple(ds.item_ids[int(j)] for j in picks),
                    scores=tuple(float(scores[r, j]) for j in picks),
                    logged_items=frozenset(ds.item_ids[j] for j in logged[int(u)]),
                )
            )
    return lists


# -- uplift / precision ----------------------------------------------------------


@dataclass
class _UserSets:
    u: int
    treated: list[tuple[int, int]]  # (item index, outcome) for top-N in the logged set
    control: list[tuple[int, int]]  # (item index, outcome) for top-N outside it
    unobserved: int


def _outcome_lookup(ds: Dataset, users: set[int]) -> dict[tuple[int, int, int], int]:
    mask = np.isin(ds.u, np.fromiter(users, dtype=np.int64, count=len(users)))
    return {
        (int(u), int(i), int(t)): int(y)
        for u, i, t, y in zip(ds.u[mask], ds.i[mask], ds.t[mask], ds.y[mask])
    }


def _user_sets(lists: Sequence[RankedList], ds: Dataset, n: int) -> list[_UserSets]:
    users = set()
    for rl in lists:
        if rl.user_id not in ds.user_index:
            raise ValidationError(f"ranked list user {rl.user_id!r} not in dataset")
        users.add(ds.user_index[rl.user_id])
    outcomes = _outcome_lookup(ds, users)
    sets: list[_UserSets] = []
    for rl in lists:
        u = ds.user_index[rl.user_id]
        treated: list[tuple[int, int]] = []
        control: list[tuple[int, int]] = []
        unobserved = 0
        for item in rl.items[:n]:
            if item not in ds.item_index:
                raise ValidationError(f"ranked item {item!r} not in dataset")
            i = ds.item_index[item]
            if item in rl.logged_items:
                y = outcomes.get((u, i, 1))
            else:
                y = outcomes.get((u, i, 0))
            if y is None:
                unobserved += 1
            elif item in rl.logged_items:
                treated.append((i, y))
            else:
                control.append((i, y))
        sets.append(_UserSets(u, treated, control, unobserved))
    return sets


def uplift_at_n(lists: Sequence[RankedList], ds: Dataset, n: int) -> RankingMetric:
    """Mean per-user gap between outcomes of recommended-and-ranked items and
    ranked-but-not-recommended items, over users where both sets are nonempty."""
    taus: list[float] = []
    excluded = 0
    unobserved = 0
    for us in _user_sets(lists, ds, n):
        unobserved += us.unobserved
        if not us.treated or not us.control:
            excluded += 1
            continue
        t_mean = float(np.mean([y for _, y in us.treated]))
        c_mean = float(np.mean([y for _, y in us.control]))
        taus.append(t_mean - c_mean)
    if not taus:
        raise MetricUndefinedError(
            "uplift undefined: no user has both recommended and non-recommended ranked items"
        )
    return RankingMetric(float(np.mean(taus)), len(taus), excluded, unobserved)


def uplift_snips_at_n(
    lists: Sequence[RankedList], ds: Dataset, pm: PropensityModel, n: int
) -> RankingMetric:
    """Uplift with each arm's mean replaced by the self-normalized
    inverse-propensity weighted mean."""
    taus: list[float] = []
    excluded = 0
    unobserved = 0
    for us in _user_sets(lists, ds, n):
        unobserved += us.unobserved
        if not us.treated or not us.control:
            excluded += 1
            continue
        ti = np.array([i for i, _ in us.treated], dtype=np.int64)
        ty = np.array([y for _, y in us.treated], dtype=np.float64)
        ci = np.array([i for i, _ in us.control], dtype=np.int64)
        cy = np.array([y for _, y in us.control], dtype=np.float64)
        uu = np.full(ti.size, us.u, dtype=np.int64)
        e_t = pm.pair_propensities(ds, uu, ti)
        e_c = pm.pair_propensities(ds, np.full(ci.size, us.u, dtype=np.int64), ci)
        w_t = normalized_inverse_propensity_weights(e_t)
        w_c = normalized_inverse_propensity_weights(1.0 - e_c)
        taus.append(float(w_t @ ty - w_c @ cy))
    if not taus:
        raise MetricUndefinedError(
            "uplift undefined: no user has both recommended and non-recommended ranked items"
        )
    return RankingMetric(float(np.mean(taus)), len(taus), excluded, unobserved)


def precision_at_n(lists: Sequence[RankedList], ds: Dataset, n: int) -> RankingMetric:
    """Purchased fraction of the top-N items that were actually recommended,
    averaged over users with at least one such item."""
    vals: list[float] = []
    excluded = 0
    unobserved = 0
    for us in _user_sets(lists, ds, n):
        unobserved += us.unobserved
        if not us.treated:
            excluded += 1
            continue
        vals.append(float(np.mean([y for _, y in us.treated])))
    if not vals:
        raise MetricUndefinedError("precision undefined: no recommended items in any list")
    return RankingMetric(float(np.mean(vals)), len(vals), excluded, unobserved)


# -- subgroup effects -----------------------------------------------------------


@dataclass
class SubgroupReport:
    attribute: str
    group_means: dict[float, EffectEstimate]
    item_group_means: dict[tuple[float, str], EffectEstimate]


def subgroup_cate(
    ites: Iterable[tuple[str, str, float]],
    ds: Dataset,
    attribute: str,
    max_groups: int = 32,
) -> SubgroupReport:
    """Average per-pair effects within groups defined by one discrete user
    attribute; also averaged per (group, item) to support advantage-item
    rankings."""
    names = ds.schema.user_feature_names
    if names is None or attribute not in names:
        raise ValidationError(f"unknown user attribute {attribute!r}")
    col = names.index(attribute)
    values = ds.user_features[:, col]
    if np.unique(values).size > max_groups:
        raise ValidationError(
            f"attribute {attribute!r} has more than {max_groups} distinct values; "
            "subgroup analysis expects a discrete attribute"
        )
    group_acc: dict[float, list[float]] = {}
    item_acc: dict[tuple[float, str], list[float]] = {}
    for user_id, item_id, ite in ites:
        if user_id not in ds.user_index:
            raise ValidationError(f"unknown user {user_id!r} in ITE table")
        g = float(values[ds.user_index[user_id]])
        group_acc.setdefault(g, []).append(ite)
        item_acc.setdefault((g, item_id), []).append(ite)
    if not group_acc:
        raise ValidationError("empty ITE table")
    group_means = {
        g: EffectEstimate(float(np.mean(v)), "subgroup", n_treated=len(v), label=f"{attribute}={g}")
        for g, v in sorted(group_acc.items())
    }
    item_group_means = {
        key: EffectEstimate(float(np.mean(v)), "subgroup", n_treated=len(v), label=f"{attribute}={key[0]}:{key[1]}")
        for key, v in sorted(item_acc.items())
    }
    return SubgroupReport(attribute, group_means, item_group_means)


def advantage_items(
    report: SubgroupReport, group_a: float, group_b: float
) -> list[tuple[str, float]]:
    """Items ranked by how much larger the mean effect is in group_a than in
    group_b (items observed in both groups only)."""
    diffs: list[tuple[str, float]] = []
    for (g, item), est in report.item_group_means.items():
        if g != group_a:
            continue
        other = report.item_group_means.get((group_b, item))
        if other is not None:
            diffs.append((item, est.value - other.value))
    return sorted(diffs, key=lambda pair: (-pair[1], pair[0]))


# -- emission ---------------------------------------------------------------------


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


def write_comparison_csv(report, path: str | Path) -> None:
    """Table-style comparison: one row per method, ATE and error per split."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            [
                "method",
                "ate_within",
                "ate_out",
                "eps_within",
                "eps_out",
                "eps_true_within",
                "eps_true_out",
                "error",
            ]
        )
        for row in report.rows:
            w.writerow(
                [
                    row.name,
                    _cell(row.ate_within),
                    _cell(row.ate_out),
                    _cell(row.eps_within),
                    _cell(row.eps_out),
                    _cell(row.eps_true_within),
                    _cell(row.eps_true_out),
                    row.error,
                ]
            )


@dataclass
class RankingRow:
    method: str
    n: int
    uplift: float | None
    uplift_snips: float | None
    precision: float | None


def write_ranking_csv(rows: Sequence[RankingRow], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "n", "uplift", "uplift_snips", "precision"])
        for row in rows:
            w.writerow(
                [row.method, row.n, _cell(row.uplift), _cell(row.uplift_snips), _cell(row.precision)]
            )


def write_subgroups_csv(report: SubgroupReport, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attribute", "group", "item_id", "mean_ite", "n_pairs"])
        for g, est in report.group_means.items():
            w.writerow([report.attribute, _cell(g), "__all__", repr(est.value), est.n_treated])
        for (g, item), est in report.item_group_means.items():
            w.writerow([report.attribute, _cell(g), item, repr(est.value), est.n_treated])
