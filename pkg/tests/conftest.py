import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fstar_noma.bench import default_scenario
from fstar_noma.channels import Scenario, dbm_to_watt

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = {}


def paper(seed=0, p_dbm=10.0, **kw) -> Scenario:
    """The shipped deployment with a seed, a power in dBm and any other overrides."""
    return default_scenario().with_updates(seed=seed, p_max=float(dbm_to_watt(p_dbm)), **kw)


def toy(K=1, Q=1, L=4, M=2, seed=0, **kw) -> Scenario:
    """Small deployment with users at distinct angles, for fast solver tests."""
    r = np.radians
    base = dict(M=M, K=K, Q=Q, L=L, wavelength=0.03, kappa=1.0, aperture_side=0.135, min_spacing=0.015,
                p_max=float(dbm_to_watt(10)), gamma_min=0.0, noise_r=[1e-11] * K, noise_t=[1e-11] * Q,
                phi_t=r(120), phi_r=r(330), psi_r=r(30),
                phi_R=r([-45, 30, 10][:K]), psi_R=r([-30] * K), phi_T=r([140, 210, 170][:Q]), psi_T=r([-30] * Q),
                phi_b=r([100, 130, 115][:K]), d_bs_surface=70.0, d_R=[15.0, 30.0, 40.0][:K],
                d_T=[5.0, 3.0, 2.0][:Q], d_b=[np.hypot(70, d) for d in [15.0, 30.0, 40.0][:K]], seed=seed)
    base.update(kw)
    return Scenario(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
