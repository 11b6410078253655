import numpy as np
import pytest

from src.components.forward_models import DenseModel, FieldTag, mean_intensity
from src.components.objectives import PoissonObjective


@pytest.fixture(autouse=True)
def isolated_dirs(tmp_path, monkeypatch):
    monkeypatch.setenv("PPR_OUTPUT_DIR", str(tmp_path / "artifacts"))
    monkeypatch.setenv("PPR_LOG_DIR", str(tmp_path / "logs"))
    return tmp_path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def complex_model():
    return DenseModel.gaussian(48, 6, seed=7, background=0.2)


@pytest.fixture
def real_model():
    return DenseModel.gaussian(40, 8, seed=11, complex_valued=False, background=0.1)


@pytest.fixture
def real_instance(real_model):
    """Real Gaussian model, a real signal and Poisson counts from it."""
    rng = np.random.default_rng(3)
    x_true = rng.standard_normal(real_model.cols)
    y = rng.poisson(mean_intensity(real_model, x_true)).astype(float)
    return real_model, x_true, y


@pytest.fixture
def noiseless_problem():
    """N=16, M=128 real Gaussian model with b=0.1 and the exact means as data."""
    model = DenseModel.gaussian(128, 16, seed=5, complex_valued=False, background=0.1)
    x_true = np.random.default_rng(8).standard_normal(16)
    y = mean_intensity(model, x_true)
    return PoissonObjective(model, y, FieldTag.REAL), x_true
