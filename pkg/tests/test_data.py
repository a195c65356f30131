import numpy as np
import pytest

from causalrec.data import (
    Dataset,
    DatasetSchema,
    dataset_manifest,
    datasets_equal,
    load_dataset,
    save_dataset,
    split_by_time,
)
from causalrec.errors import ParseError, ValidationError
from causalrec.synth import WorldConfig, generate_world, simulate_log

from conftest import dataset_from, make_record


def test_load_three_valid_rows(tmp_path):
    records = [
        make_record(user="a", item="x", treatment=1, outcome=1, position=1, leave_position=2),
        make_record(user="a", item="y", treatment=0, outcome=0, position=3, leave_position=2),
        make_record(user="b", item="x", treatment=1, outcome=0, position=2, leave_position=5),
    ]
    ds = dataset_from(records)
    path = tmp_path / "log.csv"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert loaded.n_records == 3
    assert loaded.m == 2 and loaded.n == 2
    assert datasets_equal(ds, loaded)


def test_exposure_rule_violation_names_row(tmp_path):
    path = tmp_path / "log.csv"
    good = make_record(position=1, leave_position=3, treatment=1)
    bad = make_record(user="u1", position=5, leave_position=3, treatment=1)
    ds_ok = dataset_from([good])
    save_dataset(ds_ok, path)
    # Hand-append an inconsistent row: treated but shown after the user left.
    with path.open("a") as fh:
        fh.write("u9,i0,1,0,5,3,,0.0;0.0,0.0\n")
    with pytest.raises(ValidationError, match="record 1"):
        load_dataset(path)
    with pytest.raises(ValidationError, match="inconsistent with position"):
        dataset_from([good, bad])


def test_duplicate_triple_rejected():
    records = [
        make_record(user="a", item="x", treatment=1, outcome=1),
        make_record(user="a", item="x", treatment=1, outcome=0),
    ]
    with pytest.raises(ValidationError, match="duplicate"):
        dataset_from(records)


def test_same_pair_under_both_arms_is_fine():
    ds = dataset_from(
        [
            make_record(user="a", item="x", treatment=1, outcome=1),
            make_record(user="a", item="x", treatment=0, outcome=0),
        ]
    )
    assert ds.n_records == 2


def test_malformed_row_has_line_number(tmp_path):
    path = tmp_path / "log.csv"
    save_dataset(dataset_from([make_record()]), path)
    with path.open("a") as fh:
        fh.write("u1,i0,not_an_int,0,,,,0.0;0.0,0.0\n")
    with pytest.raises(ParseError, match="line 4"):
        load_dataset(path)


def test_feature_length_mismatch(tmp_path):
    path = tmp_path / "log.csv"
    save_dataset(dataset_from([make_record()]), path)
    with path.open("a") as fh:
        fh.write("u1,i0,1,0,,,,0.5,0.0\n")  # one user feature instead of two
    with pytest.raises(ParseError, match="feature vector has 1"):
        load_dataset(path)


def test_inconsistent_user_features_rejected():
    records = [
        make_record(user="a", item="x", user_features=(1.0, 2.0)),
        make_record(user="a", item="y", treatment=0, user_features=(1.0, 3.0)),
    ]
    with pytest.raises(ValidationError, match="inconsistent features"):
        dataset_from(records)


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_synthetic_log_roundtrip_bit_exact(tmp_path, fmt):
    world = generate_world(WorldConfig(m=40, n=12, k_star=3, rho=0.2, seed=9))
    ds = simulate_log(world, 1000)
    assert ds.n_records >= 10_000
    path = tmp_path / f"log.{fmt}"
    save_dataset(ds, path, fmt)
    loaded = load_dataset(path)
    assert datasets_equal(ds, loaded)
    # and the save of the load is byte-identical to the first save
    path2 = tmp_path / f"log2.{fmt}"
    save_dataset(loaded, path2, fmt)
    assert path.read_bytes() == path2.read_bytes()


def test_index_remap_is_bijection(small_log):
    ds = small_log
    for uid, ix in list(ds.user_index.items())[:100]:
        assert ds.user_ids[ix] == uid
    decoded = {ds.item_ids[ds.i[k]] for k in range(0, ds.n_records, 997)}
    assert decoded <= set(ds.item_index)
    assert len(ds.user_ids) == len(set(ds.user_ids))
    assert len(ds.item_ids) == len(set(ds.item_ids))


def test_split_fraction_preserves_order():
    records = [
        make_record(user=f"u{k}", item="i0", treatment=1, outcome=0) for k in range(10)
    ]
    ds = dataset_from(records)
    train, test = split_by_time(ds, 0.7)
    assert train.n_records == 7 and test.n_records == 3
    assert [train.user_ids[u] for u in train.u] == [f"u{k}" for k in range(7)]
    assert [test.user_ids[u] for u in test.u] == [f"u{k}" for k in range(7, 10)]


def test_split_degenerate_fraction_errors():
    ds = dataset_from([make_record(), make_record(user="u1")])
    with pytest.raises(ValidationError):
        split_by_time(ds, 0.0)
    with pytest.raises(ValidationError, match="empty side"):
        split_by_time(ds, 0.0001)


def test_split_day_boundary_matches_generator():
    world = generate_world(WorldConfig(m=30, n=10, k_star=2, rho=0.25, n_days=7, seed=3))
    ds = simulate_log(world, 2100)
    train, test = split_by_time(ds, 6)
    assert set(np.unique(train.timestamp)) == {1.0, 2.0, 3.0, 4.0, 5.0, 6.0}
    assert set(np.unique(test.timestamp)) == {7.0}
    # independent recount from the raw column
    assert train.n_records == int((ds.timestamp <= 6).sum())
    assert train.n_records + test.n_records == ds.n_records


def test_split_sides_are_disjoint_and_cover(small_log):
    train, test = split_by_time(small_log, 0.6)
    assert train.n_records + test.n_records == small_log.n_records
    key = lambda d: set(
        zip(d.u.tolist(), d.i.tolist(), d.t.tolist())
    )
    assert not key(train) & key(test)


def test_timestamp_boundary_requires_timestamps():
    ds = dataset_from([make_record(), make_record(user="u1")])
    with pytest.raises(ValidationError, match="timestamp"):
        split_by_time(ds, 5)


def test_manifest_counts_and_checksum(tmp_path, small_log):
    path = tmp_path / "log.csv"
    save_dataset(small_log, path)
    man = dataset_manifest(small_log, path)
    assert man["m"] == small_log.m
    assert man["n"] == small_log.n
    assert man["n_records"] == small_log.n_records
    assert man["f_u"] == small_log.schema.f_u
    import hashlib

    assert man["checksum_sha256"] == hashlib.sha256(path.read_bytes()).hexdigest()


def test_absent_positions_are_admitted():
    ds = dataset_from(
        [
            make_record(user="a", item="x"),
            make_record(user="b", item="x", treatment=0),
        ]
    )
    assert not ds.has_browsing_positions()
    rec = ds.record(0)
    assert rec.position is None and rec.leave_position is None


def test_schema_validation():
    with pytest.raises(ValidationError):
        DatasetSchema(f_u=2, f_i=1, l=1)
    with pytest.raises(ValidationError):
        DatasetSchema(f_u=2, f_i=1, user_feature_names=("only_one",))
