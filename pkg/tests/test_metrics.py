import numpy as np
import pytest

from causalrec.baselines import PropensityModel, fit_propensity
from causalrec.effects import EffectEstimate
from causalrec.errors import MetricUndefinedError, ValidationError
from causalrec.metrics import (
    RankedList,
    advantage_items,
    build_ranked_lists,
    epsilon_ate,
    precision_at_n,
    subgroup_cate,
    uplift_at_n,
    uplift_snips_at_n,
)
from causalrec.model import ModelConfig, estimate_ites, init_factors, train
from causalrec.synth import WorldConfig, generate_world, simulate_log

from conftest import dataset_from, make_record
from oracles import brute_precision, brute_uplift, brute_uplift_snips


def item_estimate(value, n=100, item="i0"):
    return {item: EffectEstimate(value, "item", n_treated=n, label=item)}


def test_epsilon_reported_values():
    # headline comparison figures: pooled model effects vs the 0.000741 reference
    eps = epsilon_ate(item_estimate(0.001515), item_estimate(0.000741))
    assert eps.value == pytest.approx(0.000774, abs=1e-12)
    eps2 = epsilon_ate(item_estimate(0.002906), item_estimate(0.000741))
    assert eps2.value == pytest.approx(0.002165, abs=1e-12)


def test_epsilon_zero_on_exact_match():
    eps = epsilon_ate(item_estimate(0.37), item_estimate(0.37))
    assert eps.value == 0.0
    assert eps.per_item["i0"] == 0.0


def test_epsilon_nonnegative_and_pooled_weighting():
    model = {
        "a": EffectEstimate(0.2, "item", n_treated=10, label="a"),
        "b": EffectEstimate(0.4, "item", n_treated=30, label="b"),
    }
    rdd = {
        "a": EffectEstimate(0.1, "item", n_treated=5, n_control=5, label="a"),
        "b": EffectEstimate(0.1, "item", n_treated=15, n_control=15, label="b"),
    }
    eps = epsilon_ate(model, rdd)
    assert eps.model_pooled == pytest.approx(0.35)
    assert eps.rdd_pooled == pytest.approx(0.1)
    assert eps.value == pytest.approx(0.25)
    assert eps.value >= 0.0


def test_epsilon_disjoint_items_error():
    with pytest.raises(ValidationError):
        epsilon_ate(item_estimate(0.1, item="a"), item_estimate(0.1, item="b"))


def uplift_fixture():
    """One user; intersection outcomes {1, 0}, difference outcomes {0, 0}."""
    records = [
        make_record(user="u", item="a", treatment=1, outcome=1),
        make_record(user="u", item="b", treatment=1, outcome=0),
        make_record(user="u", item="c", treatment=0, outcome=0),
        make_record(user="u", item="d", treatment=0, outcome=0),
    ]
    ds = dataset_from(records)
    rl = RankedList(
        user_id="u",
        items=("a", "b", "c", "d"),
        scores=(4.0, 3.0, 2.0, 1.0),
        logged_items=frozenset({"a", "b"}),
    )
    return ds, [rl]


def test_uplift_hand_arithmetic():
    ds, lists = uplift_fixture()
    metric = uplift_at_n(lists, ds, 4)
    assert metric.value == pytest.approx(0.5)
    assert metric.n_users == 1


def test_uplift_undefined_when_no_difference_set():
    records = [
        make_record(user="u", item="a", treatment=1, outcome=1),
        make_record(user="u", item="b", treatment=1, outcome=0),
    ]
    ds = dataset_from(records)
    rl = RankedList("u", ("a", "b"), (2.0, 1.0), frozenset({"a", "b"}))
    with pytest.raises(MetricUndefinedError):
        uplift_at_n([rl], ds, 2)


def test_uplift_excludes_users_and_counts_unobserved():
    ds, lists = uplift_fixture()
    # second user whose control items were never logged: excluded
    extra = RankedList("u2", ("a", "b"), (2.0, 1.0), frozenset({"a"}))
    ds2 = dataset_from(
        [
            make_record(user="u", item="a", treatment=1, outcome=1),
            make_record(user="u", item="b", treatment=1, outcome=0),
            make_record(user="u", item="c", treatment=0, outcome=0),
            make_record(user="u", item="d", treatment=0, outcome=0),
            make_record(user="u2", item="a", treatment=1, outcome=1),
        ]
    )
    metric = uplift_at_n(lists + [extra], ds2, 4)
    assert metric.n_users == 1
    assert metric.n_excluded_users == 1
    assert metric.n_unobserved_items == 1  # u2's item b has no record


def test_uplift_invariant_under_monotone_score_transform():
    ds, lists = uplift_fixture()
    transformed = [
        RankedList(rl.user_id, rl.items, tuple(np.exp(s) + 7 for s in rl.scores), rl.logged_items)
        for rl in lists
    ]
    assert uplift_at_n(transformed, ds, 4).value == uplift_at_n(lists, ds, 4).value


def test_uplift_snips_uniform_weights_collapse():
    ds, lists = uplift_fixture()
    pm = PropensityModel(weights=np.zeros(4), p_min=0.01)  # sigmoid(0) = 0.5 everywhere
    assert uplift_snips_at_n(lists, ds, pm, 4).value == pytest.approx(
        uplift_at_n(lists, ds, 4).value
    )


def test_uplift_snips_single_item_sets():
    records = [
        make_record(user="u", item="a", treatment=1, outcome=1),
        make_record(user="u", item="c", treatment=0, outcome=0),
    ]
    ds = dataset_from(records)
    rl = RankedList("u", ("a", "c"), (2.0, 1.0), frozenset({"a"}))
    pm = PropensityModel(weights=np.array([1.5, -0.5, 0.3, 0.2]), p_min=0.01)
    assert uplift_snips_at_n([rl], ds, pm, 2).value == pytest.approx(
        uplift_at_n([rl], ds, 2).value
    )


def test_precision_hand_arithmetic():
    records = [
        make_record(user="u", item=f"i{k}", treatment=1, outcome=int(k < 2)) for k in range(10)
    ]
    ds = dataset_from(records)
    rl = RankedList(
        "u",
        tuple(f"i{k}" for k in range(10)),
        tuple(float(10 - k) for k in range(10)),
        frozenset(f"i{k}" for k in range(10)),
    )
    metric = precision_at_n([rl], ds, 10)
    assert metric.value == pytest.approx(0.2)


def test_precision_zero_without_purchases():
    records = [make_record(user="u", item=f"i{k}", treatment=1, outcome=0) for k in range(5)]
    ds = dataset_from(records)
    rl = RankedList("u", tuple(f"i{k}" for k in range(5)), tuple(map(float, range(5, 0, -1))), frozenset(f"i{k}" for k in range(5)))
    assert precision_at_n([rl], ds, 5).value == 0.0


def test_ranked_list_rejects_duplicates():
    with pytest.raises(ValidationError):
        RankedList("u", ("a", "a"), (1.0, 0.5), frozenset())


@pytest.fixture(scope="module")
def trained_ranking_setup():
    world = generate_world(WorldConfig(m=80, n=20, k_star=3, gamma=1.0, rho=0.15, seed=55))
    ds = simulate_log(world, 3000)
    cfg = ModelConfig(
        k=3, encoder_mode="feature_linear", epochs=2, learning_rate=0.05, batch_size=512, seed=5
    )
    fs = train(init_factors(cfg, ds), ds, cfg)
    pm = fit_propensity(ds, seed=6)
    lists = build_ranked_lists(fs, cfg, ds, n=10, by="ite", max_users=120, seed=7)
    return world, ds, cfg, fs, pm, lists


def test_ranking_metrics_match_brute_force(trained_ranking_setup):
    _, ds, _, _, pm, lists = trained_ranking_setup
    outcome_map = {}
    for k in range(ds.n_records):
        rec = ds.record(k)
        outcome_map[(rec.user_id, rec.item_id, rec.treatment)] = rec.outcome

    def outcome_of(user_id, item_id, t):
        return outcome_map.get((user_id, item_id, t))

    def propensity_of_pair(user_id, item_id):
        u = np.array([ds.user_index[user_id]])
        i = np.array([ds.item_index[item_id]])
        return float(pm.pair_propensities(ds, u, i)[0])

    for n in (5, 10):
        got = uplift_at_n(lists, ds, n)
        expected = brute_uplift(lists, outcome_of, n)
        assert got.value == pytest.approx(expected, rel=1e-9)
        got_s = uplift_snips_at_n(lists, ds, pm, n)
        expected_s = brute_uplift_snips(lists, outcome_of, propensity_of_pair, n)
        assert got_s.value == pytest.approx(expected_s, rel=1e-9)
        got_p = precision_at_n(lists, ds, n)
        expected_p = brute_precision(lists, outcome_of, n)
        assert got_p.value == pytest.approx(expected_p, rel=1e-9)


def test_build_ranked_lists_shapes_and_determinism(trained_ranking_setup):
    _, ds, cfg, fs, _, lists = trained_ranking_setup
    assert all(len(rl.items) == 10 for rl in lists)
    again = build_ranked_lists(fs, cfg, ds, n=10, by="ite", max_users=120, seed=7)
    assert [rl.items for rl in again] == [rl.items for rl in lists]
    probs = build_ranked_lists(fs, cfg, ds, n=10, by="probability", max_users=50, seed=7)
    assert all(0.0 < s < 1.0 for rl in probs for s in rl.scores)


def test_subgroup_single_group_equals_population_mean():
    from causalrec.data import DatasetSchema

    schema = DatasetSchema(f_u=2, f_i=1, l=2, user_feature_names=("flag", "other"))
    records = [
        make_record(user=f"u{k}", item="i0", treatment=1, outcome=0, user_features=(1.0, 0.0))
        for k in range(4)
    ]
    ds = dataset_from(records, schema)
    ites = [(f"u{k}", "i0", 0.1 * k) for k in range(4)]
    report = subgroup_cate(ites, ds, "flag")
    assert list(report.group_means) == [1.0]
    assert report.group_means[1.0].value == pytest.approx(np.mean([0.0, 0.1, 0.2, 0.3]))


def test_subgroup_identical_multisets_zero_difference():
    from causalrec.data import DatasetSchema

    schema = DatasetSchema(f_u=2, f_i=1, l=2, user_feature_names=("g", "other"))
    records = [
        make_record(user="a", item="x", treatment=1, user_features=(0.0, 0.0)),
        make_record(user="b", item="x", treatment=0, user_features=(1.0, 0.0)),
        make_record(user="a", item="y", treatment=0, user_features=(0.0, 0.0)),
        make_record(user="b", item="y", treatment=1, user_features=(1.0, 0.0)),
    ]
    ds = dataset_from(records, schema)
    ites = [("a", "x", 0.2), ("b", "x", 0.2), ("a", "y", 0.5), ("b", "y", 0.5)]
    report = subgroup_cate(ites, ds, "g")
    for item, diff in advantage_items(report, 0.0, 1.0):
        assert diff == 0.0


def test_subgroup_recovers_planted_ordering():
    world = generate_world(
        WorldConfig(m=300, n=15, k_star=3, group_shift=1.2, rho=0.15, seed=91)
    )
    ds = simulate_log(world, 12_000)
    cfg = ModelConfig(
        k=3, encoder_mode="feature_linear", epochs=2, learning_rate=0.05, batch_size=1024, seed=8
    )
    fs = train(init_factors(cfg, ds), ds, cfg)
    key = ds.u.astype(np.int64) * ds.n + ds.i
    pair = np.unique(key)
    uu = (pair // ds.n).astype(np.int64)
    ii = (pair % ds.n).astype(np.int64)
    ites = estimate_ites(fs, uu, ii, cfg)
    triples = [(ds.user_ids[a], ds.item_ids[b], float(v)) for a, b, v in zip(uu, ii, ites)]
    report = subgroup_cate(triples, ds, "group")
    est_order = report.group_means[1.0].value > report.group_means[0.0].value
    ite_matrix = world.true_ite_matrix()
    g = world.user_group.astype(bool)
    true_order = float(ite_matrix[g].mean()) > float(ite_matrix[~g].mean())
    assert est_order == true_order


def test_subgroup_unknown_attribute_errors(small_log):
    with pytest.raises(ValidationError, match="unknown user attribute"):
        subgroup_cate([("u", "i", 0.1)], small_log, "nope")
