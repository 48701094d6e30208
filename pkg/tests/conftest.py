import numpy as np
import pytest


def random_density_matrix(rng) -> np.ndarray:
    """Full-rank random state from a complex Ginibre matrix."""
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = g @ g.conj().T
    return rho / np.real(np.trace(rho))


def random_unitary_2(rng) -> np.ndarray:
    g = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_max_entangled(rng) -> np.ndarray:
    """(U_A x U_B)|Phi+> for Haar-ish random single-qubit unitaries."""
    w = random_unitary_2(rng) @ random_unitary_2(rng).T
    return w.reshape(-1) / np.sqrt(2.0)


def trace_distance(a, b) -> float:
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(a - b))))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
