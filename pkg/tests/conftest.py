"""Shared oracles and instance builders for the test suite."""

import numpy as np
import pytest

from nclasso import DesignSpec, ModelSpec, NoiseSpec, empirical_risk, gen_theta0, make_dataset


def fd_gradient(f, theta, step=1e-5):
    """Central-difference gradient oracle, step scaled per coordinate.

    Deliberately a plain loop so it shares nothing with the analytic path.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for j in range(theta.size):
        h = step * max(1.0, abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        grad[j] = (f(up) - f(dn)) / (2.0 * h)
    return grad


def fd_risk_gradient(model, data, theta, step=1e-5):
    return fd_gradient(lambda th: empirical_risk(model, data, th), theta, step)


def make_instance(kind, n=200, d=8, s0=3, magnitude=1.0, seed=0,
                  noise_sd=1.0, nls_sd=0.5, t0=4.685):
    """A model plus dataset for quick checks."""
    theta0 = gen_theta0(d, s0, magnitude, seed)
    if kind == "robust":
        model = ModelSpec.robust(theta0, t0=t0)
        noise = NoiseSpec.gaussian(noise_sd)
    elif kind == "binary":
        model = ModelSpec.binary(theta0)
        noise = None
    else:
        model = ModelSpec.nls(theta0, noise_sd=nls_sd)
        noise = None
    data = make_dataset(model, DesignSpec(d=d), noise, n, seed)
    return model, data


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
