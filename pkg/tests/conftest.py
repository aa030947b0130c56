import numpy as np
import pytest

from cointliq.bench import BENCH_INITIAL, BENCH_PARAMS
from cointliq.models import MarketState, ModelParams

SETTINGS1 = ModelParams(mu1=0.0, sigma1=0.1, sigma2=0.1, rho=-0.4, k=0.2, eta=0.003, chi=0.5,
                        phi1=0.003, phi2=0.06, phi3=0.06, T=0.5)
SETTINGS2 = SETTINGS1.replace(sigma1=0.4, sigma2=0.4, T=1.0)
SETTINGS_INITIAL = MarketState(t=0.0, a=1.0, eps=0.0, q=20.0, m=1.0)

# single-stock limit: the cointegration factor is switched off
ONE_STOCK = ModelParams(mu1=0.0, sigma1=0.3, sigma2=0.0, rho=0.0, k=0.0, eta=0.01, chi=0.007,
                        phi1=0.07, phi2=0.0, phi3=0.0, T=1.0)


@pytest.fixture(scope="session")
def settings1():
    return SETTINGS1


@pytest.fixture(scope="session")
def settings2():
    return SETTINGS2


@pytest.fixture(scope="session")
def bench_params():
    return BENCH_PARAMS


@pytest.fixture(scope="session")
def bench_initial():
    return BENCH_INITIAL


@pytest.fixture(scope="session")
def settings_initial():
    return SETTINGS_INITIAL


@pytest.fixture(scope="session")
def trained_settings1():
    """5 000-step network for the first setting, shared by the slow tests."""
    from cointliq.fbsde import TrainConfig, train

    cfg = TrainConfig(max_train_steps=5000, seed=0)
    net, report = train(SETTINGS1, cfg, SETTINGS_INITIAL)
    return net, report


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
