import numpy as np
import pytest

from nvpulse.experiments import Register
from nvpulse.pulses import NoiseParams


@pytest.fixture(scope="session")
def register():
    return Register.build()


@pytest.fixture(scope="session")
def calibrated_noise():
    """The pinned noise calibration shipped in the default config."""
    return NoiseParams(t2_electron_us=6.0, t2_nuclear_us=100.0,
                       linewidth_a_mhz=7.7, linewidth_c_mhz=0.55,
                       ensemble_size=21)


def random_pure(rng, dim=4):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    v /= np.linalg.norm(v)
    return np.outer(v, v.conj())


def random_mixed(rng, dim=4):
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    m = g @ g.conj().T
    return m / m.trace()


def random_unitary(rng, dim=4):
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(g)
    return q * (np.diagonal(r) / np.abs(np.diagonal(r)))
