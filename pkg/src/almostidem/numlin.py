"""Dense complex linear algebra kernel.

Conventions used throughout the package:

* matrices are dense complex ``numpy`` arrays in row-major layout;
* ``vec`` stacks the *columns* of a matrix, so ``vec(A X B) = (B.T kron A) vec(X)``;
* all tolerances are collected in :class:`ToleranceConfig`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class NumLinError(Exception):
    """Base class for numerical kernel failures."""


class NotHermitian(NumLinError):
    pass


class NotPositive(NumLinError):
    pass


class NoConvergence(NumLinError):
    pass


class SingularIterate(NumLinError):
    pass


class DimMismatch(NumLinError):
    pass


@dataclass(frozen=True)
class ToleranceConfig:
    """Numerical knobs shared by every module.

    ``eq_tol`` bounds residuals of algebraic identities, ``rank_rel_tol`` is the
    relative singular value threshold for rank decisions, ``newton_max_iter``
    caps all Newton-type iterations.
    """

    eq_tol: float = 1e-9
    rank_rel_tol: float = 1e-6
    newton_max_iter: int = 100

    def __post_init__(self):
        if self.eq_tol <= 0 or self.rank_rel_tol <= 0 or self.newton_max_iter <= 0:
            raise ValueError("tolerances must be positive")


DEFAULT_TOL = ToleranceConfig()


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigendecomposition of a Hermitian matrix, eigenvalues sorted descending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # unitary, columns are eigenvectors

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.conj().T


def dagger(a: np.ndarray) -> np.ndarray:
    """Hermitian conjugate."""
    return a.conj().T


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return (a + a.conj().T) / 2


def is_hermitian(a: np.ndarray, tol: float = DEFAULT_TOL.eq_tol) -> bool:
    scale = max(operator_norm(a), 1.0)
    return operator_norm(a - a.conj().T) <= tol * scale


def herm_eig(m: np.ndarray, tol: ToleranceConfig = DEFAULT_TOL) -> SpectralDecomposition:
    """Eigendecomposition of a Hermitian matrix with descending eigenvalues."""
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimMismatch(f"expected square matrix, got shape {m.shape}")
    scale = max(operator_norm(m), 1.0)
    if operator_norm(m - m.conj().T) > tol.eq_tol * scale:
        raise NotHermitian("matrix is not Hermitian within tolerance")
    try:
        w, u = np.linalg.eigh(hermitian_part(m))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NoConvergence(str(exc)) from exc
    order = np.argsort(w)[::-1]
    return SpectralDecomposition(w[order].copy(), u[:, order].copy())


def matrix_sqrt_inv_sqrt(
    m: np.ndarray, tol: ToleranceConfig = DEFAULT_TOL
) -> tuple[np.ndarray, np.ndarray]:
    """Principal square root and inverse square root of a positive definite matrix."""
    dec = herm_eig(m, tol)
    if dec.eigenvalues[-1] <= tol.eq_tol:
        raise NotPositive(
            f"matrix not positive definite: min eigenvalue {dec.eigenvalues[-1]:.3e}"
        )
    u = dec.eigenvectors
    sq = np.sqrt(dec.eigenvalues)
    return (u * sq) @ u.conj().T, (u / sq) @ u.conj().T


def matrix_sign(m: np.ndarray, tol: ToleranceConfig = DEFAULT_TOL) -> np.ndarray:
    """Matrix sign function via the scaled Newton iteration.

    Converges quadratically whenever the spectrum stays off the imaginary
    axis; determinant scaling keeps early iterates well conditioned.
    """
    s = np.asarray(m, dtype=complex)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimMismatch(f"expected square matrix, got shape {s.shape}")
    n = s.shape[0]
    ident = np.eye(n)
    prev_err = np.inf
    stalls = 0
    for _ in range(tol.newton_max_iter):
        err = operator_norm(s @ s - ident)
        if err <= 1e-13 * max(1.0, operator_norm(s)) ** 2:
            return s
        if err >= prev_err:
            stalls += 1
            if stalls >= 3:
                # stalled at the floor set by roundoff
                if err <= tol.eq_tol:
                    return s
                raise NoConvergence(
                    "matrix sign iteration stalled; spectrum is likely too "
                    "close to the imaginary axis"
                )
        else:
            stalls = 0
        prev_err = err
        try:
            lu, piv = scipy.linalg.lu_factor(s)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise SingularIterate(str(exc)) from exc
        diag = np.abs(np.diag(lu))
        if np.any(diag < 1e-300):
            raise SingularIterate("singular Newton iterate in matrix sign")
        # |det| from the LU factors, in log space to dodge overflow
        mu = float(np.exp(-np.mean(np.log(diag)))) if err > 0.1 else 1.0
        s_inv = scipy.linalg.lu_solve((lu, piv), ident)
        s = 0.5 * (mu * s + s_inv / mu)
    raise NoConvergence(
        "matrix sign iteration did not converge; spectrum is likely "
        "too close to the imaginary axis"
    )


def theta(m: np.ndarray, tol: ToleranceConfig = DEFAULT_TOL) -> np.ndarray:
    """Spectral step function (I + sign(M))/2: the idempotent commuting with M
    that projects onto the right-half-plane spectrum."""
    s = matrix_sign(m, tol)
    return 0.5 * (np.eye(s.shape[0]) + s)


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(np.asarray(a), np.asarray(b))


def vec(x: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(x).reshape(x.shape[0] * x.shape[1], order="F")


def unvec(v: np.ndarray, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Inverse of :func:`vec`; square by default."""
    v = np.asarray(v).ravel()
    if rows is None:
        rows = int(round(np.sqrt(v.size)))
    if cols is None:
        cols = v.size // rows
    if rows * cols != v.size:
        raise DimMismatch(f"cannot reshape length {v.size} into {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


def partial_trace(m: np.ndarray, dims: tuple[int, ...], keep: int | tuple[int, ...]) -> np.ndarray:
    """Partial trace over the factors *not* listed in ``keep``.

    ``dims`` are the tensor factor dimensions of both row and column index,
    ``keep`` the factor positions that survive.
    """
    m = np.asarray(m)
    dims = tuple(int(d) for d in dims)
    total = int(np.prod(dims))
    if m.shape != (total, total):
        raise DimMismatch(f"dims {dims} do not match matrix shape {m.shape}")
    if isinstance(keep, (int, np.integer)):
        keep = (int(keep),)
    keep = tuple(sorted(keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise DimMismatch(f"keep={keep} out of range for {len(dims)} factors")
    n = len(dims)
    t = m.reshape(dims + dims)
    # trace factors in descending position order so remaining axis numbers stay valid
    for pos in sorted(set(range(n)) - set(keep), reverse=True):
        n_act = t.ndim // 2
        t = np.trace(t, axis1=pos, axis2=pos + n_act)
    d_keep = int(np.prod([dims[k] for k in keep])) if keep else 1
    return t.reshape(d_keep, d_keep)


def operator_norm(m: np.ndarray) -> float:
    """Largest singular value."""
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    return float(np.linalg.norm(m, 2))


def trace_norm(m: np.ndarray) -> float:
    """Sum of singular values."""
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def hs_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Hilbert-Schmidt inner product Tr(a† b), conjugate linear in ``a``."""
    return complex(np.sum(np.conj(a) * b))


def hs_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))


def rank_from_singular_values(s: np.ndarray, rel_tol: float) -> int:
    s = np.asarray(s, dtype=float)
    if s.size == 0 or s[0] <= 0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def column_space(
    m: np.ndarray, rel_tol: float = DEFAULT_TOL.rank_rel_tol
) -> np.ndarray:
    """Orthonormal basis of the column space at a relative rank threshold.

    Uses a pivoted QR so the result is deterministic for a fixed input.
    """
    m = np.asarray(m, dtype=complex)
    if m.size == 0:
        return np.zeros((m.shape[0], 0), dtype=complex)
    q, r, _ = scipy.linalg.qr(m, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = rank_from_singular_values(diag, rel_tol)
    return q[:, :rank]


def hermitian_basis(dim: int) -> list[np.ndarray]:
    """HS-orthonormal Hermitian basis of B(C^dim): diagonal units first."""
    out = []
    for i in range(dim):
        b = np.zeros((dim, dim), dtype=complex)
        b[i, i] = 1.0
        out.append(b)
    for i in range(dim):
        for j in range(i + 1, dim):
            b = np.zeros((dim, dim), dtype=complex)
            b[i, j] = b[j, i] = 1 / np.sqrt(2)
            out.append(b)
            b = np.zeros((dim, dim), dtype=complex)
            b[i, j] = -1j / np.sqrt(2)
            b[j, i] = 1j / np.sqrt(2)
            out.append(b)
    return out


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return hermitian_part(g) / np.sqrt(2)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    # fix the phase ambiguity so the distribution is Haar
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_isometry(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if cols > rows:
        raise DimMismatch("isometry needs rows >= cols")
    g = rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = dim if rank is None else rank
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real
