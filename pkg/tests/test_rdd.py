import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalrec.data import Dataset, DatasetSchema
from causalrec.errors import RddError, ValidationError
from causalrec.model import ModelConfig, init_factors
from causalrec.rdd import (
    RddConfig,
    build_cutoff_table,
    cate_at_cutoff,
    homogeneity_report,
    item_ate_rdd,
    population_ate_rdd,
    smd_test,
    smd_verdict,
    write_cutoff_effects_csv,
    write_homogeneity_csv,
    write_item_ate_csv,
)
from causalrec.synth import WorldConfig, generate_world, simulate_log

from conftest import dataset_from, make_record
from oracles import brute_cate, brute_item_ate, brute_smd, window_sides


def session_records(item, cutoff, treated_outcomes, control_outcomes, start_user=0, feature=0.0):
    """One record per session: `item` at position `cutoff` (treated) or
    cutoff+1 (control), with constant features so the smd gate passes."""
    records = []
    u = start_user
    for y in treated_outcomes:
        records.append(
            make_record(
                user=f"u{u}",
                item=item,
                treatment=1,
                outcome=y,
                position=cutoff,
                leave_position=cutoff,
                user_features=(feature, feature),
            )
        )
        u += 1
    for y in control_outcomes:
        records.append(
            make_record(
                user=f"u{u}",
                item=item,
                treatment=0,
                outcome=y,
                position=cutoff + 1,
                leave_position=cutoff,
                user_features=(feature, feature),
            )
        )
        u += 1
    return records, u


def test_cutoff_table_trivial_two_sessions():
    records = [
        make_record(user="s1", item="a", treatment=1, outcome=1, position=3, leave_position=3),
        make_record(user="s2", item="a", treatment=0, outcome=0, position=4, leave_position=3),
    ]
    ds = dataset_from(records)
    table = build_cutoff_table(ds, "a", window=1)
    row = table.rows[3]
    assert (row.treated_count, row.treated_sum) == (1, 1)
    assert (row.control_count, row.control_sum) == (1, 0)


def test_cutoff_table_far_records_are_zero_rows():
    records = [
        make_record(user="s1", item="a", treatment=1, outcome=1, position=2, leave_position=9),
        make_record(user="s2", item="a", treatment=0, outcome=1, position=30, leave_position=9),
    ]
    ds = dataset_from(records)
    table = build_cutoff_table(ds, "a", window=1)
    row = table.rows[9]
    assert row.treated_count == 0 and row.control_count == 0


def test_cutoff_table_requires_positions():
    ds = dataset_from([make_record(), make_record(user="u1", treatment=0)])
    with pytest.raises(RddError, match="browsing positions"):
        build_cutoff_table(ds, "i0")


def test_cutoff_table_recount_against_full_scan(small_log):
    ds = small_log
    records = list(ds)
    for item in ds.item_ids[:4]:
        table = build_cutoff_table(ds, item, window=2)
        for c, row in table.rows.items():
            treated, control = window_sides(records, item, c, 2)
            assert row.treated_count == len(treated)
            assert row.treated_sum == sum(r.outcome for r in treated)
            assert row.control_count == len(control)
            assert row.control_sum == sum(r.outcome for r in control)


def test_smd_identical_groups_zero():
    g = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]])
    smd, smd_j = smd_test(g, g.copy())
    assert smd == 0.0
    assert np.all(smd_j == 0.0)


def test_smd_hand_arithmetic():
    treated = np.array([[0.0], [2.0]])  # mean 1, population var 1
    control = np.array([[-1.0], [1.0]])  # mean 0, population var 1
    smd, smd_j = smd_test(treated, control)
    assert smd == pytest.approx(1.0)
    assert smd_j[0] == pytest.approx(1.0)


def test_smd_zero_variance_cases():
    same = np.array([[2.0], [2.0]])
    smd, smd_j = smd_test(same, same.copy())
    assert smd == 0.0
    other = np.array([[3.0], [3.0]])
    smd, smd_j = smd_test(same, other)
    assert math.isinf(smd) and math.isinf(smd_j[0])


def test_smd_needs_two_samples_per_side():
    with pytest.raises(ValidationError):
        smd_test(np.array([[1.0]]), np.array([[1.0], [2.0]]))


@settings(deadline=None, max_examples=40)
@given(
    st.integers(0, 2**32 - 1),
    st.floats(0.1, 50.0),
    st.floats(-20.0, 20.0),
)
def test_smd_symmetry_and_affine_invariance(seed, scale, shift):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(6, 3))
    c = rng.normal(size=(5, 3))
    ab = smd_test(t, c)
    ba = smd_test(c, t)
    assert ab[0] == pytest.approx(ba[0], rel=1e-12)
    scaled = smd_test(t * scale + shift, c * scale + shift)
    assert scaled[0] == pytest.approx(ab[0], rel=1e-9)


def test_smd_large_same_distribution_samples_balanced():
    rng = np.random.default_rng(7)
    t = rng.normal(size=(5000, 4))
    c = rng.normal(size=(5000, 4))
    smd, _ = smd_test(t, c)
    assert smd < 0.1


def test_smd_recount_against_brute_force():
    rng = np.random.default_rng(3)
    t = rng.normal(size=(40, 3))
    c = rng.normal(size=(25, 3)) + 0.4
    smd, smd_j = smd_test(t, c)
    b_smd, b_smd_j = brute_smd(t.tolist(), c.tolist())
    assert smd == pytest.approx(b_smd, rel=1e-12)
    assert np.allclose(smd_j, b_smd_j, rtol=1e-12)


def test_verdict_thresholds_exact():
    assert smd_verdict(0.0999999) == "balanced"
    assert smd_verdict(0.1) == "caution"
    assert smd_verdict(0.2) == "caution"
    assert smd_verdict(0.2000001) == "imbalanced"
    assert smd_verdict(float("inf")) == "imbalanced"


def test_cate_hand_arithmetic():
    records, _ = session_records("a", 5, [1, 0, 1], [0, 0])
    ds = dataset_from(records)
    table = build_cutoff_table(ds, "a")
    est = cate_at_cutoff(table, 5)
    assert est.value == pytest.approx(2.0 / 3.0)
    assert (est.n_treated, est.n_control) == (3, 2)


def test_cate_symmetric_distributions():
    records, _ = session_records("a", 4, [1, 0, 1, 0], [0, 1, 0, 1])
    ds = dataset_from(records)
    est = cate_at_cutoff(build_cutoff_table(ds, "a"), 4)
    assert est.value == 0.0


def test_cate_skipped_when_thin():
    records, _ = session_records("a", 5, [1, 0, 1], [0, 0])
    ds = dataset_from(records)
    table = build_cutoff_table(ds, "a")
    est = cate_at_cutoff(table, 5, min_samples=3)
    assert not est.ok
    missing = cate_at_cutoff(table, 77)
    assert not missing.ok


def test_cate_sign_stable_under_tied_additions():
    base, nxt = session_records("a", 5, [1, 1, 0], [0, 0, 0])
    ds = dataset_from(base)
    est = cate_at_cutoff(build_cutoff_table(ds, "a"), 5)
    extra_t, _ = session_records("a", 5, [1], [], start_user=nxt)
    extra_c, _ = session_records("a", 5, [], [1], start_user=nxt + 1)
    ds2 = dataset_from(base + extra_t + extra_c)
    est2 = cate_at_cutoff(build_cutoff_table(ds2, "a"), 5)
    assert np.sign(est.value) == np.sign(est2.value)


def test_item_ate_weighted_mean_of_cutoffs():
    r1, nxt = session_records("a", 5, [1, 1, 1, 0, 0], [1, 1, 0, 0, 0])   # cate 0.2, weight 10
    r2, _ = session_records("a", 9, [1, 1, 1, 1, 0], [1, 1, 0, 0, 0], start_user=nxt)  # cate 0.4
    ds = dataset_from(r1 + r2)
    cfg = RddConfig(min_samples=5, position_range=(1, 200))
    est = item_ate_rdd(ds, "a", cfg)
    assert est.value == pytest.approx(0.3)
    assert est.count == 20


def test_item_ate_single_admissible_cutoff():
    r1, nxt = session_records("a", 5, [1, 1, 1, 0, 0], [1, 1, 0, 0, 0])
    r2, _ = session_records("a", 9, [1, 1], [0, 0], start_user=nxt)  # below min_samples
    ds = dataset_from(r1 + r2)
    est = item_ate_rdd(ds, "a", RddConfig(min_samples=5))
    assert est.value == pytest.approx(0.2)


def test_item_ate_position_cap_at_200():
    r1, nxt = session_records("a", 5, [1, 1, 1, 0, 0], [1, 1, 0, 0, 0])
    deep, _ = session_records("a", 250, [1] * 8, [0] * 8, start_user=nxt)  # huge but too deep
    with_deep = dataset_from(r1 + deep)
    without = dataset_from(r1)
    cfg = RddConfig(min_samples=5)
    assert item_ate_rdd(with_deep, "a", cfg).value == pytest.approx(
        item_ate_rdd(without, "a", cfg).value
    )


def test_item_ate_no_admissible_cutoffs_errors():
    records, _ = session_records("a", 5, [1, 0], [0, 0])
    ds = dataset_from(records)
    with pytest.raises(RddError, match="no admissible cutoffs"):
        item_ate_rdd(ds, "a", RddConfig(min_samples=30))


def test_item_ate_matches_brute_force_on_synthetic(small_world, small_log):
    ds = small_log
    records = list(ds)
    cfg = RddConfig(window=1, min_samples=8, position_range=(1, 200))
    rep = ds.user_features

    def rep_of_user(user_id):
        return rep[ds.user_index[user_id]]

    checked = 0
    for item in ds.item_ids:
        expected = brute_item_ate(records, item, 1, (1, 200), 8, rep_of_user)
        if expected is None:
            with pytest.raises(RddError):
                item_ate_rdd(ds, item, cfg)
        else:
            got = item_ate_rdd(ds, item, cfg)
            assert got.value == pytest.approx(expected, rel=1e-9)
            checked += 1
    assert checked >= 5


def test_population_sweep_pools_and_skips(small_log):
    cfg = RddConfig(min_samples=8)
    result = population_ate_rdd(small_log, config=cfg)
    ok_items = [i for i, e in result.per_item.items() if e.ok]
    assert ok_items
    assert result.pooled.ok
    # pooled equals the interaction-count-weighted mean, recomputed here
    counts = {
        item: int((small_log.i == small_log.item_index[item]).sum()) for item in ok_items
    }
    num = sum(counts[i] * result.per_item[i].value for i in ok_items)
    den = sum(counts.values())
    assert result.pooled.value == pytest.approx(num / den, rel=1e-12)


def test_population_single_item_equals_item_op(small_log):
    cfg = RddConfig(min_samples=8)
    item = None
    for cand, est in population_ate_rdd(small_log, config=cfg).per_item.items():
        if est.ok:
            item = cand
            break
    res = population_ate_rdd(small_log, items=[item], config=cfg)
    assert res.pooled.value == pytest.approx(item_ate_rdd(small_log, item, cfg).value)


def test_population_all_skipped_warns():
    records, _ = session_records("a", 5, [1, 0], [0, 1])
    ds = dataset_from(records)
    result = population_ate_rdd(ds, config=RddConfig(min_samples=50))
    assert not result.pooled.ok
    assert any("all items skipped" in w for w in result.warnings)


def test_population_threads_match_serial(small_log):
    cfg = RddConfig(min_samples=8)
    serial = population_ate_rdd(small_log, config=cfg)
    threaded = population_ate_rdd(small_log, config=cfg, threads=2)
    assert serial.pooled.value == threaded.pooled.value
    for item in serial.per_item:
        a, b = serial.per_item[item], threaded.per_item[item]
        assert a.ok == b.ok
        if a.ok:
            assert a.value == b.value


def test_homogeneity_report_balanced_when_randomized(small_log):
    report = homogeneity_report(small_log, small_log.item_ids[0], RddConfig(min_samples=8))
    assert report.rows
    for row in report.rows:
        assert row.verdict == smd_verdict(row.smd)
        assert row.smd_j.shape == (small_log.schema.f_u,)


def test_homogeneity_embedding_representation(small_log):
    cfg = ModelConfig(k=3, seed=0)
    fs = init_factors(cfg, small_log)
    rep_cfg = RddConfig(min_samples=8, representation="embedding")
    report = homogeneity_report(small_log, small_log.item_ids[0], rep_cfg, factors=fs)
    assert report.rows
    with pytest.raises(ValidationError, match="factors"):
        homogeneity_report(small_log, small_log.item_ids[0], rep_cfg)


def test_csv_emission(tmp_path, small_log):
    result = population_ate_rdd(small_log, config=RddConfig(min_samples=8))
    write_homogeneity_csv(result, tmp_path / "homogeneity.csv")
    write_cutoff_effects_csv(result, tmp_path / "cutoff_effects.csv")
    write_item_ate_csv(result, tmp_path / "item_ate.csv")
    hom = (tmp_path / "homogeneity.csv").read_text().splitlines()
    assert hom[0] == "item_id,position,smd,n_treated,n_control,verdict"
    assert len(hom) > 1
    ate = (tmp_path / "item_ate.csv").read_text().splitlines()
    assert ate[0] == "item_id,ate,total_weight"
    for line in ate[1:]:
        float(line.split(",")[1])  # parseable
