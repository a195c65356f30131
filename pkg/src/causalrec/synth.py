"""Synthetic browsing-log generator with planted ground-truth effects.

The generator owns the one thing observational data never has: both
potential outcomes for every (user, item) pair. Outcome probabilities come
from planted latent factors combined through the same pairwise form the
estimators assume, so estimation error can be separated from approximation
error (a misspecification switch adds a three-way term outside that form).

Sessions are the experimental units. Each session draws a base user, ranks
the full item catalog by a policy score (preference-weighted when gamma > 0,
pure noise when gamma = 0), draws a leave position, and logs every item
ranked at or before the leave position as treated plus a random sample of
deeper items as control. Units therefore observe each item at most once,
and unit ids are session-scoped ("u00003s0000042") while features are those
of the base user.

All randomness flows from per-block seeds derived from (seed, block index),
so serial and parallel simulation emit identical logs.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import NO_POSITION, Dataset, DatasetSchema
from .errors import ValidationError

_BLOCK_SESSIONS = 4096


@dataclass(frozen=True)
class WorldConfig:
    """Parameters of a synthetic world. Every value is artifact-owned and is
    echoed into the world manifest; none comes from observed platform data."""

    m: int = 500
    n: int = 200
    k_star: int = 4
    gamma: float = 0.0            # exposure-preference coupling; 0 = randomized policy
    rho: float = 0.04             # geometric leave-position parameter, mean ~ 1/rho
    max_position: int | None = None  # leave positions clamp here; defaults to n
    control_ratio: int = 5        # logged control records per treated record
    control_logging_bias: float = 0.0  # >0 tilts control logging toward high-score users
    n_days: int = 7
    seed: int = 0
    factor_mean: float = 0.25     # coordinate mean of user/item factors
    factor_scale: float = 0.35    # coordinate std of user/item factors
    treat_base: float = -1.0      # coordinate mean of the control-arm factor
    treat_lift: float = 0.2       # added per coordinate for the treated arm
    treat_scale: float = 0.1      # coordinate std of treatment factors
    group_shift: float = 0.0      # coordinate-0 shift for group-1 users
    misspec_strength: float = 0.0 # weight of the non-pairwise interaction term

    def validate(self) -> None:
        if self.m < 1 or self.n < 1 or self.k_star < 1:
            raise ValidationError("m, n, k_star must all be >= 1")
        if not 0.0 < self.rho < 1.0:
            raise ValidationError(f"rho must lie in (0, 1), got {self.rho}")
        if self.gamma < 0:
            raise ValidationError("gamma must be nonnegative")
        if self.control_ratio < 0:
            raise ValidationError("control_ratio must be nonnegative")
        if self.max_position is not None and self.max_position < 1:
            raise ValidationError("max_position must be >= 1")
        if self.n_days < 1:
            raise ValidationError("n_days must be >= 1")


class SyntheticWorld:
    """Planted factors, exposure policy, and potential-outcome oracles."""

    def __init__(self, config: WorldConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
        m, n, k = config.m, config.n, config.k_star
        # Draw order: group, user factors, item factors, treatment factors.
        self.user_group = rng.integers(0, 2, size=m).astype(np.int8)
        self.user_factors = rng.normal(config.factor_mean, config.factor_scale, size=(m, k))
        self.user_factors[:, 0] += config.group_shift * self.user_group
        self.item_factors = rng.normal(config.factor_mean, config.factor_scale, size=(n, k))
        d0 = rng.normal(config.treat_base, config.treat_scale, size=k)
        d1 = d0 + config.treat_lift + rng.normal(0.0, config.treat_scale, size=k)
        self.treat_factors = np.vstack([d0, d1])
        self.prob_control = self._probability_matrix(0)
        self.prob_treated = self._probability_matrix(1)
        z = self.prob_treated
        spread = z.std()
        self._pref_z = (z - z.mean()) / spread if spread > 0 else np.zeros_like(z)
        # Control-logging tilt score per base user: standardized mean latent + group.
        raw = self.user_factors.mean(axis=1) + self.user_group
        s = raw.std()
        self._tilt_z = (raw - raw.mean()) / s if s > 0 else np.zeros_like(raw)

    # -- oracles -------------------------------------------------------------

    def _score_matrix(self, t: int) -> np.ndarray:
        P, Q = self.user_factors, self.item_factors
        d = self.treat_factors[t]
        s = P @ Q.T + (P @ d)[:, None] + (Q @ d)[None, :]
        if self.config.misspec_strength != 0.0 and t == 1:
            s = s + self.config.misspec_strength * np.outer(P[:, 0], Q[:, 0])
        return s

    def _probability_matrix(self, t: int) -> np.ndarray:
        return _sigmoid(self._score_matrix(t))

    def true_ite_matrix(self) -> np.ndarray:
        """pi(u, i, 1) - pi(u, i, 0) for every base user x item pair."""
        return self.prob_treated - self.prob_control

    def true_ite(self, user: int, item: int) -> float:
        return float(self.prob_treated[user, item] - self.prob_control[user, item])

    def true_item_ate(self, item: int) -> float:
        """Mean of true_ite over the user population for one item."""
        return float((self.prob_treated[:, item] - self.prob_control[:, item]).mean())

    def true_population_ate(self) -> float:
        return float((self.prob_treated - self.prob_control).mean())

    def record_probabilities(self, ds: Dataset) -> np.ndarray:
        """True outcome probability of each record, computed from the record's
        user features (which carry the planted latent factors exactly)."""
        k = self.config.k_star
        p = ds.user_features[ds.u][:, :k]
        q = self.item_factors[ds.i]
        d = self.treat_factors[ds.t]
        s = np.einsum("ij,ij->i", p, q) + np.einsum("ij,ij->i", p, d) + np.einsum("ij,ij->i", q, d)
        if self.config.misspec_strength != 0.0:
            s = s + self.config.misspec_strength * p[:, 0] * q[:, 0] * ds.t
        return _sigmoid(s)

    def bayes_log_loss(self, ds: Dataset) -> float:
        """Log-loss of the true probabilities on a log drawn from this world:
        the floor no outcome model can beat in expectation."""
        p = self.record_probabilities(ds)
        y = ds.y.astype(np.float64)
        return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())

    # -- naming --------------------------------------------------------------

    def item_id(self, item: int) -> str:
        return f"i{item:04d}"

    def unit_id(self, base_user: int, session: int) -> str:
        return f"u{base_user:05d}s{session:07d}"

    def schema(self) -> DatasetSchema:
        k = self.config.k_star
        return DatasetSchema(
            f_u=k + 1,
            f_i=k,
            l=2,
            user_feature_names=tuple(f"f{j}" for j in range(k)) + ("group",),
            item_feature_names=tuple(f"f{j}" for j in range(k)),
        )

    def unit_features(self, base_users: np.ndarray) -> np.ndarray:
        return np.hstack(
            [
                self.user_factors[base_users],
                self.user_group[base_users, None].astype(np.float64),
            ]
        )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def generate_world(config: WorldConfig) -> SyntheticWorld:
    """Deterministically build a world from its config (same seed, same world)."""
    return SyntheticWorld(config)


def _simulate_block(
    world: SyntheticWorld, block_index: int, first_session: int, n_sessions_block: int, n_total: int
) -> dict[str, np.ndarray]:
    """Simulate one block of sessions with a block-derived RNG stream.

    Per-block draw order: base users, leave positions, ranking noise,
    control-selection uniforms, control-thinning uniforms (only when the
    logging bias is nonzero), treated outcomes, control outcomes.
    """
    cfg = world.config
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, block_index]))
    B, n = n_sessions_block, cfg.n
    max_pos = min(cfg.max_position or n, n)

    base = rng.integers(0, cfg.m, size=B)
    leave = np.minimum(rng.geometric(cfg.rho, size=B), max_pos).astype(np.int64)
    noise = rng.gumbel(size=(B, n))
    score = noise if cfg.gamma == 0.0 else cfg.gamma * world._pref_z[base] + noise
    ranking = np.argsort(-score, axis=1, kind="stable")

    cols = np.arange(n)[None, :]
    treated_mask = cols < leave[:, None]

    # Uniform sample (without replacement) of deeper items per session: rank
    # each session's selection uniforms, excluding the treated prefix.
    n_control = np.minimum(cfg.control_ratio * leave, n - leave)
    sel = rng.random((B, n))
    sel[treated_mask] = np.inf
    sel_rank = np.empty((B, n), dtype=np.int64)
    np.put_along_axis(sel_rank, np.argsort(sel, axis=1), np.broadcast_to(cols, (B, n)).copy(), axis=1)
    control_mask = sel_rank < n_control[:, None]

    if cfg.control_logging_bias != 0.0:
        keep_p = _sigmoid(cfg.control_logging_bias * world._tilt_z[base])
        keep = rng.random((B, n)) < keep_p[:, None]
        control_mask &= keep

    rows_t, cols_t = np.nonzero(treated_mask)
    rows_c, cols_c = np.nonzero(control_mask)
    items_t = ranking[rows_t, cols_t]
    items_c = ranking[rows_c, cols_c]
    y_t = (rng.random(rows_t.size) < world.prob_treated[base[rows_t], items_t]).astype(np.int8)
    y_c = (rng.random(rows_c.size) < world.prob_control[base[rows_c], items_c]).astype(np.int8)

    sess = (np.concatenate([rows_t, rows_c]) + first_session).astype(np.int32)
    item = np.concatenate([items_t, items_c]).astype(np.int32)
    pos = (np.concatenate([cols_t, cols_c]) + 1).astype(np.int32)
    t = np.concatenate(
        [np.ones(rows_t.size, dtype=np.int8), np.zeros(rows_c.size, dtype=np.int8)]
    )
    y = np.concatenate([y_t, y_c])
    lv = np.concatenate([leave[rows_t], leave[rows_c]]).astype(np.int32)

    order = np.lexsort((pos, sess))
    day = 1.0 + (sess[order].astype(np.int64) * cfg.n_days) // n_total
    return {
        "session": sess[order],
        "base": base,
        "item": item[order],
        "t": t[order],
        "y": y[order],
        "position": pos[order],
        "leave": lv[order],
        "timestamp": day.astype(np.float64),
    }


def simulate_log(world: SyntheticWorld, n_sessions: int, threads: int = 1) -> Dataset:
    """Sample a browsing log of `n_sessions` sessions from the world policy.

    Output is canonical (sessions ascending, positions ascending within a
    session) and identical for any `threads` value.
    """
    if n_sessions < 1:
        raise ValidationError("n_sessions must be >= 1")
    cfg = world.config
    starts = list(range(0, n_sessions, _BLOCK_SESSIONS))
    jobs = [
        (b, s, min(_BLOCK_SESSIONS, n_sessions - s), n_sessions)
        for b, s in enumerate(starts)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(lambda j: _simulate_block(world, *j), jobs))
    else:
        blocks = [_simulate_block(world, *j) for j in jobs]

    base_all = np.concatenate([b["base"] for b in blocks])
    columns = {
        key: np.concatenate([b[key] for b in blocks])
        for key in ("session", "item", "t", "y", "position", "leave", "timestamp")
    }
    del blocks

    user_ids = [world.unit_id(int(base_all[s]), s) for s in range(n_sessions)]
    item_ids = [world.item_id(j) for j in range(cfg.n)]
    return Dataset(
        world.schema(),
        user_ids,
        item_ids,
        u=columns["session"],
        i=columns["item"],
        t=columns["t"],
        y=columns["y"],
        position=columns["position"],
        leave_position=columns["leave"],
        timestamp=columns["timestamp"],
        user_features=world.unit_features(base_all),
        item_features=world.item_factors.copy(),
        validate=False,
    )


def positivity_audit(ds: Dataset, segment_column: str = "group") -> float:
    """Fraction of (user-segment x item) cells containing both treatment arms,
    among cells with at least one record."""
    names = ds.schema.user_feature_names
    if names is None or segment_column not in names:
        raise ValidationError(f"no user feature named {segment_column!r}")
    seg = ds.user_features[ds.u, names.index(segment_column)]
    seg_codes = np.unique(seg, return_inverse=True)[1]
    cell = seg_codes * ds.n + ds.i
    both = np.zeros(int(cell.max()) + 1, dtype=np.int8)
    np.bitwise_or.at(both, cell, (ds.t == 1).astype(np.int8) + 2 * (ds.t == 0).astype(np.int8))
    seen = both > 0
    return float((both[seen] == 3).mean()) if seen.any() else 0.0


def write_truth(world: SyntheticWorld, path: str | Path, include_pairs: bool = False) -> None:
    """Emit the ground-truth oracle table: per-item true ATE, and optionally
    the full per-pair true ITE table."""
    path = Path(path)
    ite = world.true_ite_matrix()
    with path.open("w") as fh:
        fh.write("item_id,true_ate\n")
        for j in range(world.config.n):
            fh.write(f"{world.item_id(j)},{float(ite[:, j].mean())!r}\n")
    if include_pairs:
        pair_path = path.with_name(path.stem + "_pairs" + path.suffix)
        with pair_path.open("w") as fh:
            fh.write("base_user,item_id,true_ite\n")
            for u in range(world.config.m):
                for j in range(world.config.n):
                    fh.write(f"u{u:05d},{world.item_id(j)},{float(ite[u, j])!r}\n")


def load_truth(path: str | Path) -> dict[str, float]:
    table: dict[str, float] = {}
    with Path(path).open() as fh:
        header = fh.readline().strip()
        if header != "item_id,true_ate":
            raise ValidationError(f"unexpected truth header {header!r}")
        for line in fh:
            item, value = line.rstrip("\n").split(",")
            table[item] = float(value)
    return table


def world_manifest(world: SyntheticWorld) -> dict:
    cfg = asdict(world.config)
    return {
        "kind": "synthetic_world",
        "config": cfg,
        "true_population_ate": world.true_population_ate(),
        "numpy_version": np.__version__,
    }


def write_world_manifest(world: SyntheticWorld, path: str | Path) -> None:
    Path(path).write_text(json.dumps(world_manifest(world), indent=2) + "\n")
