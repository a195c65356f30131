import numpy as np
import pytest

from causalrec.data import Dataset, DatasetSchema, InteractionRecord


@pytest.fixture
def schema():
    return DatasetSchema(f_u=2, f_i=1, l=2)


def make_record(
    user="u0",
    item="i0",
    treatment=1,
    outcome=0,
    position=None,
    leave_position=None,
    user_features=(0.0, 0.0),
    item_features=(0.0,),
    timestamp=None,
):
    return InteractionRecord(
        user_id=user,
        item_id=item,
        treatment=treatment,
        outcome=outcome,
        position=position,
        leave_position=leave_position,
        user_features=np.asarray(user_features, dtype=np.float64),
        item_features=np.asarray(item_features, dtype=np.float64),
        timestamp=timestamp,
    )


def dataset_from(records, schema=None):
    if schema is None:
        f_u = len(records[0].user_features)
        f_i = len(records[0].item_features)
        schema = DatasetSchema(f_u=f_u, f_i=f_i, l=2)
    return Dataset.from_records(records, schema)


@pytest.fixture(scope="session")
def small_world():
    from causalrec.synth import WorldConfig, generate_world

    return generate_world(
        WorldConfig(m=60, n=15, k_star=3, gamma=0.0, rho=0.15, seed=42)
    )


@pytest.fixture(scope="session")
def small_log(small_world):
    from causalrec.synth import simulate_log

    return simulate_log(small_world, 4000)
