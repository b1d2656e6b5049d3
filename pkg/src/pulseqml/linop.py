"""Dense complex linear algebra used throughout the package.

Everything here works on plain ``numpy`` arrays of dtype ``complex128``.
Operators are square matrices, states are 1-d vectors.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

MAX_QUBITS = 10
DEFAULT_TOL = 1e-10

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"I": I2, "X": SX, "Y": SY, "Z": SZ}


class DimensionError(ValueError):
    """Raised when operands have incompatible or oversized dimensions."""


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-d array, got shape {a.shape}")
    return a


def _check_square_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise DimensionError(f"need equal square operands, got {a.shape} and {b.shape}")


def kron(a, b, max_qubits: int = MAX_QUBITS) -> np.ndarray:
    """Kronecker product ``a ⊗ b``.

    Raises ``DimensionError`` if the result would exceed ``2**max_qubits``
    rows or columns.
    """
    a, b = _as_matrix(a), _as_matrix(b)
    limit = 2**max_qubits
    rows, cols = a.shape[0] * b.shape[0], a.shape[1] * b.shape[1]
    if rows > limit or cols > limit:
        raise DimensionError(f"kron result {rows}x{cols} exceeds {max_qubits} qubits")
    return np.kron(a, b)


def kron_all(factors: Iterable, max_qubits: int = MAX_QUBITS) -> np.ndarray:
    out = np.eye(1, dtype=complex)
    for f in factors:
        out = kron(out, f, max_qubits=max_qubits)
    return out


def commutator(a, b) -> np.ndarray:
    a, b = _as_matrix(a), _as_matrix(b)
    _check_square_pair(a, b)
    return a @ b - b @ a


def is_hermitian(a, tol: float = 1e-12) -> bool:
    a = _as_matrix(a)
    return a.shape[0] == a.shape[1] and bool(np.max(np.abs(a - a.conj().T), initial=0.0) <= tol)


def expm(a) -> np.ndarray:
    """Matrix exponential.

    Hermitian and anti-Hermitian inputs go through an exact eigendecomposition;
    anything else falls back to scaling-and-squaring Padé (``scipy.linalg.expm``).
    """
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"expm needs a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("expm input contains NaN or Inf")
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    if np.max(np.abs(a - a.conj().T), initial=0.0) <= 1e-14 * scale:
        w, v = np.linalg.eigh((a + a.conj().T) / 2)
        return (v * np.exp(w)) @ v.conj().T
    if np.max(np.abs(a + a.conj().T), initial=0.0) <= 1e-14 * scale:
        # a = -iH with H Hermitian
        h = 1j * a
        w, v = np.linalg.eigh((h + h.conj().T) / 2)
        return (v * np.exp(-1j * w)) @ v.conj().T
    return scipy.linalg.expm(a)


def propagator(h, dt: float) -> np.ndarray:
    """``exp(-i h dt)`` for Hermitian ``h``; works on stacks of shape ``(..., d, d)``."""
    h = np.asarray(h, dtype=complex)
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * dt * w)[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def hs_inner(a, b) -> complex:
    """Hilbert-Schmidt inner product ``Tr(a† b)``."""
    a, b = _as_matrix(a), _as_matrix(b)
    if a.shape != b.shape:
        raise DimensionError(f"hs_inner shapes differ: {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def hs_norm(a) -> float:
    return float(np.linalg.norm(np.asarray(a)))


def orthonormalize(mats: Sequence, tol: float = DEFAULT_TOL, real: bool = False) -> list[np.ndarray]:
    """Modified Gram-Schmidt over the HS inner product, with one re-orthogonalization pass.

    Vectors whose residual falls below ``tol`` times the largest input norm are
    dropped. With ``real=True`` the span is taken over the reals (coefficients
    are ``Re Tr(a†b)``), which is what real Lie algebras and Hermitian operator
    spaces need.
    """
    mats = [_as_matrix(m) for m in mats]
    if not mats:
        return []
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise DimensionError("orthonormalize needs matrices of equal shape")
    vecs = np.array([m.ravel() for m in mats])
    if real:
        vecs = np.concatenate([vecs.real, vecs.imag], axis=1)
    basis = _gram_schmidt(vecs, tol)
    if real:
        half = basis.shape[1] // 2
        basis = basis[:, :half] + 1j * basis[:, half:]
    return [b.reshape(shape) for b in basis]


def _gram_schmidt(vecs: np.ndarray, tol: float) -> np.ndarray:
    norms = np.linalg.norm(vecs, axis=1)
    cutoff = tol * max(float(norms.max(initial=0.0)), np.finfo(float).tiny)
    out: list[np.ndarray] = []
    for v in vecs:
        w = v.astype(vecs.dtype, copy=True)
        for _ in range(2):
            for q in out:
                w = w - np.vdot(q, w) * q
        nrm = np.linalg.norm(w)
        if nrm > cutoff:
            out.append(w / nrm)
    if not out:
        return np.zeros((0, vecs.shape[1]), dtype=vecs.dtype)
    return np.array(out)


def gram_matrix(mats: Sequence) -> np.ndarray:
    vecs = np.array([np.asarray(m).ravel() for m in mats])
    return vecs.conj() @ vecs.T


def matrix_rank(mats: Sequence, tol: float = DEFAULT_TOL) -> int:
    """Numerical rank of a set of matrices viewed as vectors."""
    if len(mats) == 0:
        return 0
    vecs = np.array([np.asarray(m).ravel() for m in mats])
    s = np.linalg.svd(vecs, compute_uv=False)
    return int(np.sum(s > tol * s[0])) if s[0] > 0 else 0


def normalize_state(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).ravel()
    nrm = np.linalg.norm(psi)
    if nrm == 0:
        raise ValueError("cannot normalize the zero vector")
    return psi / nrm
