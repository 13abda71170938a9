import numpy as np
import pytest

from nvqpt.spincore import ChiMatrix, chi_from_kraus


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)


def random_kraus_set(rng, n_kraus=3):
    """Random CPTP channel as a normalized Kraus set."""
    ks = [
        rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        for _ in range(n_kraus)
    ]
    s = sum(k.conj().T @ k for k in ks)
    w, v = np.linalg.eigh(s)
    s_inv_half = v @ np.diag(w**-0.5) @ v.conj().T
    return [k @ s_inv_half for k in ks]


def random_cptp_chi(rng, n_kraus=3) -> ChiMatrix:
    return chi_from_kraus(random_kraus_set(rng, n_kraus))
