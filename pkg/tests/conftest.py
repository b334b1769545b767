import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from hypothesis import HealthCheck, settings  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

import pytest  # noqa: E402

RANK_STUDY_BASE = {"iterations": 20000, "width": 25, "depth": 4, "n_funcs": 20, "N": 32}


@pytest.fixture(scope="session")
def heat_test_100():
    from seponet import train

    return train.make_test_set("heat", 100, seed=0)


@pytest.fixture(scope="session")
def rank1_study(heat_test_100):
    """Desk rank study at r=1 with the series compared at K=1, 4, 16."""
    from seponet import bench

    return bench.rank_study([1], [1, 4, 16], RANK_STUDY_BASE, heat_test_100)
