import numpy as np
import pytest

import ccrb

PAPER_SIGMA = 1.0
PAPER_ALPHA = 1.0
PAPER_GAMMA = 1.0
PAPER_THETA = (0.0, 0.0)


@pytest.fixture(scope="session")
def quad_cfg():
    return ccrb.PairingConfig(backend="gauss_hermite", gh_order=20)


@pytest.fixture(scope="session")
def closed_cfg():
    return ccrb.PairingConfig(backend="closed_form")


@pytest.fixture(scope="session")
def mc_cfg():
    return ccrb.PairingConfig(backend="monte_carlo", mc_samples=100_000, seed=314159)


@pytest.fixture(scope="session")
def paper_model():
    return ccrb.builtin_curved_gaussian(PAPER_SIGMA, PAPER_ALPHA)


@pytest.fixture(scope="session")
def paper_estimator(paper_model):
    return ccrb.builtin_gamma_estimator(PAPER_GAMMA, paper_model, PAPER_THETA)


@pytest.fixture(scope="session")
def paper_report(paper_model, paper_estimator, quad_cfg):
    return ccrb.geometry_report(paper_model, paper_estimator, PAPER_THETA, quad_cfg)


@pytest.fixture(scope="session")
def paper_report_mc(paper_model, paper_estimator, mc_cfg):
    return ccrb.geometry_report(paper_model, paper_estimator, PAPER_THETA, mc_cfg)


@pytest.fixture(scope="session")
def toy_report():
    return ccrb.rank_one_toy_report([1.0, 2.0], 4.0)


@pytest.fixture(scope="session")
def toy_system(toy_report):
    return ccrb.build_system(toy_report)


@pytest.fixture(scope="session")
def toy_certificate(toy_system):
    return ccrb.solve_sos_sdp(toy_system)


@pytest.fixture(scope="session")
def paper_system(paper_report):
    return ccrb.build_system(paper_report)


@pytest.fixture(scope="session")
def paper_certificate(paper_system):
    return ccrb.solve_sos_sdp(paper_system)


def paper_normal_gram(sigma=PAPER_SIGMA, alpha=PAPER_ALPHA):
    """Closed-form normal Gram over pairs ((0,0), (0,1), (1,1))."""
    s2, s4 = sigma**2, sigma**4
    g_n = np.zeros((3, 3))
    g_n[0, 0] = 3.0 / (16.0 * s4) + alpha**2 / s2
    g_n[1, 1] = 1.0 / (16.0 * s4)
    g_n[2, 2] = 3.0 / (16.0 * s4)
    g_n[0, 2] = g_n[2, 0] = 1.0 / (16.0 * s4)
    return g_n


def closed_form_correction(vs, sigma, alpha, gamma):
    """Rational closed form of the directional correction at theta_1 = 0."""
    vs = np.atleast_2d(np.asarray(vs, dtype=float))
    v1, v2 = vs[:, 0], vs[:, 1]
    numer = 16.0 * sigma**4 * v2**2 * v1**4 * gamma**2 * alpha**2
    denom = 3.0 * (v1**2 + v2**2) ** 2 + 16.0 * sigma**2 * alpha**2 * v1**4
    return numer / denom
