"""Dense complex linear-algebra helpers shared by the whole package.

Column-major (Fortran) ordering is used for vec/unvec everywhere, so that
vec(A X B) = (B^T kron A) vec(X) holds without surprises.
"""

import numpy as np


class InvalidInputError(ValueError):
    pass


def herm(A):
    """Conjugate transpose."""
    return np.conj(A).T


def hermitian_residual(A):
    """max |A - A^H| entrywise."""
    return float(np.max(np.abs(A - herm(A)))) if A.size else 0.0


def check_hermitian(A, rtol=1e-10):
    """Raise InvalidInputError if A is not Hermitian within tolerance."""
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A))) if A.size else 0.0)
    if hermitian_residual(A) > rtol * scale:
        raise InvalidInputError("matrix is not Hermitian within tolerance")
    return A


def hermitize(A):
    """Symmetrize numerically: (A + A^H)/2."""
    return 0.5 * (A + herm(A))


def hermitian_eig_max(A, rtol=1e-10):
    """Largest eigenpair of a Hermitian matrix.

    Returns (lambda_max, u_max) with u_max unit norm and its
    largest-magnitude entry phase-rotated to be real nonnegative.
    """
    A = check_hermitian(A, rtol=rtol)
    if A.shape[0] < 1:
        raise InvalidInputError("matrix must have size >= 1")
    w, V = np.linalg.eigh(hermitize(A))
    u = V[:, -1]
    # fix the global phase so the result is deterministic
    i = int(np.argmax(np.abs(u)))
    if np.abs(u[i]) > 0:
        u = u * (np.conj(u[i]) / np.abs(u[i]))
    return float(w[-1]), u


def hermitian_eig(A, rtol=1e-10):
    """All eigenvalues/vectors (ascending) of a Hermitian matrix."""
    A = check_hermitian(A, rtol=rtol)
    return np.linalg.eigh(hermitize(A))


def vec(A):
    """Column-stacking vectorization."""
    A = np.asarray(A)
    if A.ndim != 2:
        raise InvalidInputError(f"vec expects a matrix, got ndim={A.ndim}")
    return A.flatten(order="F")


def unvec(v, rows, cols):
    """Inverse of vec for the given shape."""
    v = np.asarray(v)
    if v.ndim != 1 or v.size != rows * cols:
        raise InvalidInputError(
            f"unvec: length {v.size} incompatible with shape ({rows}, {cols})")
    return v.reshape((rows, cols), order="F")


def kron(A, B):
    return np.kron(np.asarray(A), np.asarray(B))


def psd_project(A, rtol=1e-10):
    """Nearest (Frobenius) PSD matrix: clip negative eigenvalues at zero."""
    A = check_hermitian(A, rtol=rtol)
    w, V = np.linalg.eigh(hermitize(A))
    w = np.clip(w, 0.0, None)
    return hermitize((V * w) @ herm(V))


def rank_one_ratio(A):
    """e_max / Tr, the SROCR rank-one quality measure. 1.0 for rank-one PSD."""
    tr = float(np.real(np.trace(A)))
    if tr <= 0:
        raise InvalidInputError("rank_one_ratio needs positive trace")
    lam, _ = hermitian_eig_max(A)
    return lam / tr


def rank_one_residual(A):
    """|| A - e_max u u^H ||_F / ||A||_F; 0.0 for the zero matrix."""
    nrm = float(np.linalg.norm(A))
    if nrm == 0.0:
        return 0.0
    lam, u = hermitian_eig_max(A)
    return float(np.linalg.norm(A - lam * np.outer(u, np.conj(u)))) / nrm
