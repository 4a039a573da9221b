"""Small dense linear-algebra helpers for complex Hermitian operators.

Everything in the simulator lives on 4- or 6-dimensional Hilbert spaces, so
exact eigendecomposition is always the cheapest correct tool: unitaries are
built as exp(-i H) of a Hermitian generator via ``numpy.linalg.eigh``.
"""

from __future__ import annotations

import numpy as np

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10


class InvariantViolation(Exception):
    """A simulation object broke one of its declared invariants."""


def dag(m: np.ndarray) -> np.ndarray:
    return m.conj().T


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    return bool(np.abs(m - dag(m)).max(initial=0.0) <= tol * scale)


def assert_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL, what: str = "operator") -> None:
    if not is_hermitian(m, tol):
        raise InvariantViolation(f"{what} is not Hermitian within {tol:g}")


def is_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    eye = np.eye(u.shape[0])
    return bool(np.abs(dag(u) @ u - eye).max() <= tol)


def assert_unitary(u: np.ndarray, tol: float = UNITARY_TOL, what: str = "propagator") -> None:
    if not is_unitary(u, tol):
        raise InvariantViolation(f"{what} is not unitary within {tol:g}")


def expi_hermitian(h: np.ndarray) -> np.ndarray:
    """exp(-i h) for Hermitian h, exact via eigendecomposition."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w)) @ dag(v)


def nearest_psd(m: np.ndarray) -> tuple[np.ndarray, float]:
    """Project a Hermitian matrix onto the positive-semidefinite cone.

    Clips negative eigenvalues to zero (the Frobenius-nearest PSD matrix)
    and returns the projected matrix together with the Frobenius distance
    moved. The trace is not renormalized here.
    """
    h = (m + dag(m)) / 2.0
    w, v = np.linalg.eigh(h)
    w_clipped = np.clip(w, 0.0, None)
    proj = (v * w_clipped) @ dag(v)
    return proj, float(np.linalg.norm(proj - m))


def gauss_hermite_offsets(std: float, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic quadrature nodes for averaging over a Gaussian N(0, std^2).

    Returns (offsets, weights) with weights summing to 1. ``std == 0`` or a
    single node collapses to the degenerate point mass at zero.
    """
    if std < 0:
        raise ValueError("std must be non-negative")
    if std == 0.0 or n_nodes <= 1:
        return np.zeros(1), np.ones(1)
    x, w = np.polynomial.hermite.hermgauss(n_nodes)
    return std * np.sqrt(2.0) * x, w / np.sqrt(np.pi)
