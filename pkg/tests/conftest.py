import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from robust_ic.model import NetworkConfig, RngStream, init_filters, sample_network

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion lines collected by the acceptance module
ACCEPTANCE_LINES = []


def make_instance(seed, K=4, M=3, N=3, D=1, sigma2=0.1, snr_db=10.0, batch=()):
    cfg = NetworkConfig(K=K, M=M, N=N, D=D, sigma2=sigma2).with_snr_db(snr_db)
    base = RngStream(seed, (99,))
    ch = sample_network(cfg, base.child(0), batch=batch)
    f = init_filters(cfg, base.child(1), batch=batch)
    return cfg, ch, f


@pytest.fixture
def instance():
    return make_instance(0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
