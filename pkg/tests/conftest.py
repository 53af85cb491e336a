from pathlib import Path

import numpy as np
import pytest

from glucoloop.linmodel import ContinuousModel, discretize

REPO_ROOT = Path(__file__).resolve().parent.parent
TABLE3_CFG = REPO_ROOT / "configs" / "table3.cfg"


@pytest.fixture(scope="session")
def cont_model():
    return ContinuousModel.nominal()


@pytest.fixture(scope="session")
def disc_model(cont_model):
    return discretize(cont_model, 5.0)


@pytest.fixture(scope="session")
def table3_path():
    return TABLE3_CFG


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
