"""Regression-discontinuity analysis of recommendation effects.

Treatment in a browsing log follows a hard rule: an item is treated exactly
when its display position is at or before the position where the session's
user stopped browsing. That leave position is therefore a cutoff, and
observations of the same item just before and just after it form local
treated/control groups. Comparing their outcome means estimates the effect
at the cutoff; a standardized-mean-difference gate drops cutoffs where the
two groups are visibly different populations; per-item effects are the
sample-size-weighted mean over admitted cutoffs.

Cutoff admission thresholds 0.1 (balanced) and 0.2 (seriously imbalanced)
are fixed by convention and not configurable.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import NO_POSITION, Dataset
from .effects import EffectEstimate
from .errors import RddError, ValidationError

SMD_BALANCED_MAX = 0.1
SMD_CAUTION_MAX = 0.2

VERDICT_BALANCED = "balanced"
VERDICT_CAUTION = "caution"
VERDICT_IMBALANCED = "imbalanced"

REPRESENTATION_FEATURES = "features"
REPRESENTATION_EMBEDDING = "embedding"


@dataclass(frozen=True)
class RddConfig:
    window: int = 1
    position_range: tuple[int, int] = (1, 200)
    min_samples: int = 30
    representation: str = REPRESENTATION_FEATURES

    def validate(self) -> None:
        if self.window < 1:
            raise ValidationError("window must be >= 1")
        s, e = self.position_range
        if not 1 <= s <= e:
            raise ValidationError(f"bad position range [{s}, {e}]")
        if self.min_samples < 1:
            raise ValidationError("min_samples must be >= 1")
        if self.representation not in (REPRESENTATION_FEATURES, REPRESENTATION_EMBEDDING):
            raise ValidationError(f"unknown representation {self.representation!r}")


@dataclass
class CutoffRow:
    """Windowed outcome statistics around one cutoff position."""

    position: int
    treated_count: int
    treated_sum: int
    control_count: int
    control_sum: int
    treated_users: np.ndarray
    control_users: np.ndarray


@dataclass
class CutoffTable:
    item_id: str
    window: int
    rows: dict[int, CutoffRow]


@dataclass
class HomogeneityRow:
    position: int
    smd: float
    smd_j: np.ndarray
    n_treated: int
    n_control: int
    verdict: str


@dataclass
class HomogeneityReport:
    item_id: str
    rows: list[HomogeneityRow]


@dataclass
class CutoffEffect:
    item_id: str
    position: int
    cate: float
    weight: int
    smd: float
    admitted: bool


@dataclass
class RddResult:
    per_item: dict[str, EffectEstimate]
    pooled: EffectEstimate
    homogeneity: list[tuple[str, HomogeneityRow]] = field(default_factory=list)
    cutoff_effects: list[CutoffEffect] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def smd_verdict(smd: float) -> str:
    if smd < SMD_BALANCED_MAX:
        return VERDICT_BALANCED
    if smd <= SMD_CAUTION_MAX:
        return VERDICT_CAUTION
    return VERDICT_IMBALANCED


def smd_test(treated_reps: np.ndarray, control_reps: np.ndarray) -> tuple[float, np.ndarray]:
    """Absolute standardized mean difference per dimension, and their mean.

    Per dimension j: |mean_T - mean_C| / sqrt(0.5 (var_T + var_C)) with
    population variances. A dimension with zero pooled variance scores 0 when
    the means agree and +inf when they differ.
    """
    t = np.asarray(treated_reps, dtype=np.float64)
    c = np.asarray(control_reps, dtype=np.float64)
    if t.ndim != 2 or c.ndim != 2 or t.shape[1] != c.shape[1]:
        raise ValidationError("representation sets must be 2-d with equal dimension")
    if len(t) < 2 or len(c) < 2:
        raise ValidationError("each side needs at least 2 samples for the smd test")
    diff = np.abs(t.mean(axis=0) - c.mean(axis=0))
    denom = np.sqrt(0.5 * (t.var(axis=0) + c.var(axis=0)))
    smd_j = np.empty_like(diff)
    zero = denom == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        smd_j[~zero] = diff[~zero] / denom[~zero]
    smd_j[zero] = np.where(diff[zero] == 0.0, 0.0, np.inf)
    return float(smd_j.mean()), smd_j


def representation_matrix(ds: Dataset, config: RddConfig, factors=None) -> np.ndarray:
    """Per-user vectors used by the homogeneity gate: raw features by
    default, or the trained user embeddings when configured (passing the
    model whose evaluation depends on that gate makes the gate circular;
    that trade-off is the caller's)."""
    if config.representation == REPRESENTATION_FEATURES:
        if ds.schema.f_u == 0:
            raise RddError("feature-based homogeneity needs user features")
        return ds.user_features
    if factors is None:
        raise ValidationError("embedding representation requires trained factors")
    return factors.user_vectors(np.arange(ds.m))


def _require_positions(ds: Dataset) -> None:
    if not ds.has_browsing_positions():
        raise RddError(
            "RDD requires browsing positions (position and leave_position); "
            "this dataset has none"
        )


def _build_rows(
    item_id: str,
    window: int,
    u: np.ndarray,
    t: np.ndarray,
    y: np.ndarray,
    position: np.ndarray,
    leave: np.ndarray,
) -> CutoffTable:
    valid = (position != NO_POSITION) & (leave != NO_POSITION)
    offset = position.astype(np.int64) - leave
    treated_w = valid & (offset > -window) & (offset <= 0) & (t == 1)
    control_w = valid & (offset >= 1) & (offset <= window) & (t == 0)
    rows: dict[int, CutoffRow] = {
        int(c): CutoffRow(int(c), 0, 0, 0, 0, np.empty(0, np.int64), np.empty(0, np.int64))
        for c in np.unique(leave[valid])
    }
    for mask, side in ((treated_w, "treated"), (control_w, "control")):
        lv = leave[mask]
        users = u[mask].astype(np.int64)
        outcomes = y[mask].astype(np.int64)
        order = np.argsort(lv, kind="stable")
        lv, users, outcomes = lv[order], users[order], outcomes[order]
        cuts, starts = np.unique(lv, return_index=True)
        bounds = np.append(starts, lv.size)
        for j, c in enumerate(cuts):
            row = rows[int(c)]
            chunk = slice(bounds[j], bounds[j + 1])
            if side == "treated":
                row.treated_count = bounds[j + 1] - bounds[j]
                row.treated_sum = int(outcomes[chunk].sum())
                row.treated_users = users[chunk]
            else:
                row.control_count = bounds[j + 1] - bounds[j]
                row.control_sum = int(outcomes[chunk].sum())
                row.control_users = users[chunk]
    return CutoffTable(item_id=item_id, window=window, rows=rows)


def build_cutoff_table(ds: Dataset, item: str, window: int = 1) -> CutoffTable:
    """Windowed treated/control outcome statistics for one item, grouped by
    the leave position of each record's session."""
    if window < 1:
        raise ValidationError("window must be >= 1")
    _require_positions(ds)
    if item not in ds.item_index:
        raise ValidationError(f"unknown item {item!r}")
    mask = ds.i == ds.item_index[item]
    return _build_rows(
        item,
        window,
        ds.u[mask],
        ds.t[mask],
        ds.y[mask],
        ds.position[mask],
        ds.leave_position[mask],
    )


def cate_at_cutoff(table: CutoffTable, c: int, min_samples: int = 1) -> EffectEstimate:
    """Local effect at cutoff c: treated mean outcome minus control mean
    outcome inside the table window. Skipped when either side has fewer than
    min_samples observations."""
    row = table.rows.get(c)
    if row is None or row.treated_count < min_samples or row.control_count < min_samples:
        return EffectEstimate.skipped("cutoff", label=f"{table.item_id}@{c}")
    value = row.treated_sum / row.treated_count - row.control_sum / row.control_count
    return EffectEstimate(
        value=value,
        scope="cutoff",
        n_treated=row.treated_count,
        n_control=row.control_count,
        label=f"{table.item_id}@{c}",
    )


def _item_analysis(
    table: CutoffTable,
    rep: np.ndarray,
    config: RddConfig,
) -> tuple[EffectEstimate, list[HomogeneityRow], list[CutoffEffect]]:
    s, e = config.position_range
    min_side = max(config.min_samples, 2)
    homogeneity: list[HomogeneityRow] = []
    effects: list[CutoffEffect] = []
    weights: list[int] = []
    values: list[float] = []
    n_treated = n_control = 0
    for c in sorted(table.rows):
        if not s <= c <= e:
            continue
        row = table.rows[c]
        if row.treated_count < 2 or row.control_count < 2:
            continue
        smd, smd_j = smd_test(rep[row.treated_users], rep[row.control_users])
        homogeneity.append(
            HomogeneityRow(
                position=c,
                smd=smd,
                smd_j=smd_j,
                n_treated=row.treated_count,
                n_control=row.control_count,
                verdict=smd_verdict(smd),
            )
        )
        enough = row.treated_count >= min_side and row.control_count >= min_side
        admitted = enough and np.isfinite(smd_j).all() and smd < SMD_BALANCED_MAX
        estimate = cate_at_cutoff(table, c, min_samples=1)
        if admitted and estimate.ok:
            weight = row.treated_count + row.control_count
            weights.append(weight)
            values.append(estimate.value)
            n_treated += row.treated_count
            n_control += row.control_count
            effects.append(CutoffEffect(table.item_id, c, estimate.value, weight, smd, True))
        else:
            effects.append(
                CutoffEffect(table.item_id, c, estimate.value if estimate.ok else float("nan"), 0, smd, False)
            )
    if not weights:
        return EffectEstimate.skipped("item", label=table.item_id), homogeneity, effects
    w = np.asarray(weights, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    ate = EffectEstimate(
        value=float(np.dot(w, v) / w.sum()),
        scope="item",
        n_treated=n_treated,
        n_control=n_control,
        label=table.item_id,
    )
    return ate, homogeneity, effects


def item_ate_rdd(
    ds: Dataset,
    item: str,
    config: RddConfig | None = None,
    factors=None,
) -> EffectEstimate:
    """Per-item effect: sample-size-weighted mean of cutoff effects over the
    configured position range, admitting only cutoffs that pass both the
    minimum-sample rule and the smd < 0.1 balance gate."""
    config = config or RddConfig()
    config.validate()
    table = build_cutoff_table(ds, item, config.window)
    rep = representation_matrix(ds, config, factors)
    estimate, _, _ = _item_analysis(table, rep, config)
    if not estimate.ok:
        raise RddError(f"no admissible cutoffs for item {item!r}")
    return estimate


def homogeneity_report(
    ds: Dataset,
    item: str,
    config: RddConfig | None = None,
    factors=None,
) -> HomogeneityReport:
    """Balance diagnostics per cutoff position for one item (positions with
    fewer than 2 samples on a side carry no defined smd and are omitted)."""
    config = config or RddConfig()
    config.validate()
    table = build_cutoff_table(ds, item, config.window)
    rep = representation_matrix(ds, config, factors)
    _, rows, _ = _item_analysis(table, rep, config)
    return HomogeneityReport(item_id=item, rows=rows)


def population_ate_rdd(
    ds: Dataset,
    items: list[str] | None = None,
    config: RddConfig | None = None,
    factors=None,
    threads: int = 1,
) -> RddResult:
    """Per-item RDD sweep plus the interaction-count-weighted pooled effect.

    Per-item failures (no admissible cutoffs) become skipped estimates with a
    warning; the sweep never aborts.
    """
    config = config or RddConfig()
    config.validate()
    _require_positions(ds)
    rep = representation_matrix(ds, config, factors)
    if items is None:
        items = list(ds.item_ids)
    unknown = [it for it in items if it not in ds.item_index]
    if unknown:
        raise ValidationError(f"unknown items: {unknown[:5]}")

    order = np.argsort(ds.i, kind="stable")
    sorted_i = ds.i[order]
    u_s, t_s, y_s = ds.u[order], ds.t[order], ds.y[order]
    pos_s, lv_s = ds.position[order], ds.leave_position[order]

    def analyze(item: str):
        ix = ds.item_index[item]
        lo, hi = np.searchsorted(sorted_i, [ix, ix + 1])
        sl = slice(lo, hi)
        table = _build_rows(item, config.window, u_s[sl], t_s[sl], y_s[sl], pos_s[sl], lv_s[sl])
        return item, hi - lo, _item_analysis(table, rep, config)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            analyses = list(pool.map(analyze, items))
    else:
        analyses = [analyze(item) for item in items]

    result = RddResult(per_item={}, pooled=EffectEstimate.skipped("population"))
    pooled_w: list[float] = []
    pooled_v: list[float] = []
    n_treated = n_control = 0
    for item, interaction_count, (estimate, hom_rows, effects) in analyses:
        result.per_item[item] = estimate
        result.homogeneity.extend((item, row) for row in hom_rows)
        result.cutoff_effects.extend(effects)
        if estimate.ok:
            pooled_w.append(interaction_count)
            pooled_v.append(estimate.value)
            n_treated += estimate.n_treated
            n_control += estimate.n_control
        else:
            result.warnings.append(f"item {item}: no admissible cutoffs")
    if pooled_w:
        w = np.asarray(pooled_w)
        v = np.asarray(pooled_v)
        result.pooled = EffectEstimate(
            value=float(np.dot(w, v) / w.sum()),
            scope="population",
            n_treated=n_treated,
            n_control=n_control,
        )
    else:
        result.warnings.append("all items skipped: no admissible cutoffs anywhere")
    return result


# -- emission -----------------------------------------------------------------


def write_homogeneity_csv(result: RddResult, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "position", "smd", "n_treated", "n_control", "verdict"])
        for item, row in result.homogeneity:
            w.writerow([item, row.position, repr(row.smd), row.n_treated, row.n_control, row.verdict])


def write_cutoff_effects_csv(result: RddResult, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "position", "cate", "weight"])
        for eff in result.cutoff_effects:
            w.writerow([eff.item_id, eff.position, repr(eff.cate), eff.weight])


def write_item_ate_csv(result: RddResult, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "ate", "total_weight"])
        for item, est in result.per_item.items():
            if est.ok:
                w.writerow([item, repr(est.value), est.count])
