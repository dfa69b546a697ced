"""Session-scoped trained fixtures shared by the bench and acceptance tests.

Training the three compared methods on a committed fixture takes tens of
seconds; every test that needs a given fixture reuses the same trained
bundle and, where possible, the same experiment report.
"""

import numpy as np
import pytest

from softrom.bench import (
    load_fixture,
    prepare_fixture,
    run_cubature_robustness,
    run_direction_generalization,
    run_magnitude_generalization,
    run_sparse_keyframes,
)


@pytest.fixture(scope="session")
def direction_bundle():
    cfg = load_fixture("direction-generalization")
    assets = prepare_fixture(cfg)
    return cfg, assets, run_direction_generalization(cfg, assets)


@pytest.fixture(scope="session")
def magnitude_bundle():
    cfg = load_fixture("magnitude-generalization")
    assets = prepare_fixture(cfg)
    return cfg, assets, run_magnitude_generalization(cfg, assets)


@pytest.fixture(scope="session")
def cubature_bundle():
    cfg = load_fixture("cubature-robustness")
    assets = prepare_fixture(cfg)
    return cfg, assets, run_cubature_robustness(cfg, assets)


@pytest.fixture(scope="session")
def sparse_bundle():
    cfg = load_fixture("sparse-keyframes")
    assets = prepare_fixture(cfg)
    return cfg, assets, run_sparse_keyframes(cfg, assets)
