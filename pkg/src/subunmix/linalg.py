"""Dense linear-algebra primitives shared by the rest of the package.

Bases are stored as ``(D, d)`` float64 arrays with orthonormal columns. The
:class:`BasisMatrix` wrapper validates that once and then freezes the array.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class InvalidArgumentError(ValueError):
    """Raised on a shape, range or finiteness violation of an input."""


class DegenerateInputError(ValueError):
    """Raised when an input is numerically rank deficient."""


@dataclass(frozen=True)
class Tolerances:
    orthonormal: float = 1e-10
    rank_rel: float = 1e-12
    disjoint: float = 1e-12
    power_iter_tol: float = 1e-12
    power_iter_max: int = 10_000
    svd_max_dim: int = 64


TOL = Tolerances()


def _as_finite_matrix(M, name="matrix") -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return M


class BasisMatrix:
    """A ``D x d`` matrix with orthonormal columns.

    Parameters
    ----------
    entries : array_like, shape (D, d)
        Candidate basis. It is copied, checked against
        ``max|U^T U - I| <= TOL.orthonormal`` and made read-only.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries, *, check: bool = True):
        U = np.array(_as_finite_matrix(entries, "basis"), dtype=np.float64, copy=True)
        D, d = U.shape
        if d < 1 or d > D:
            raise InvalidArgumentError(f"need 1 <= d <= D, got D={D}, d={d}")
        if check:
            err = np.max(np.abs(U.T @ U - np.eye(d)))
            if err > TOL.orthonormal:
                raise InvalidArgumentError(
                    f"columns are not orthonormal (max deviation {err:.3e})"
                )
        U.setflags(write=False)
        object.__setattr__(self, "_entries", U)

    def __setattr__(self, name, value):
        raise AttributeError("BasisMatrix is immutable")

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def ambient_dim(self) -> int:
        return self._entries.shape[0]

    @property
    def subspace_dim(self) -> int:
        return self._entries.shape[1]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._entries
        return self._entries.astype(dtype)

    def __repr__(self):
        return f"BasisMatrix(D={self.ambient_dim}, d={self.subspace_dim})"


def _check_dims(ambient_dim: int, subspace_dim: int) -> None:
    if int(ambient_dim) != ambient_dim or int(subspace_dim) != subspace_dim:
        raise InvalidArgumentError("dimensions must be integers")
    if not 1 <= subspace_dim <= ambient_dim:
        raise InvalidArgumentError(
            f"need 1 <= d <= D, got D={ambient_dim}, d={subspace_dim}"
        )


def _haar_from_gaussian(Z: np.ndarray) -> np.ndarray:
    # Thin QR of a Gaussian matrix, with the sign fix that makes the law of Q
    # exactly Haar (Mezzadri's correction): column j times sign(R_jj).
    Q, R = np.linalg.qr(Z)
    signs = np.sign(np.diagonal(R, axis1=-2, axis2=-1)).copy()
    signs[signs == 0] = 1.0
    return Q * signs[..., None, :]


def haar_stiefel_sample(
    ambient_dim: int, subspace_dim: int, rng: np.random.Generator
) -> BasisMatrix:
    """Draw a ``D x d`` orthonormal basis from the Haar measure on the Stiefel manifold.

    The law of the result is invariant under left multiplication by any fixed
    orthogonal matrix, so ``span(U)`` is uniform on the Grassmannian.
    """
    _check_dims(ambient_dim, subspace_dim)
    Z = rng.standard_normal((ambient_dim, subspace_dim))
    return BasisMatrix(_haar_from_gaussian(Z), check=False)


def haar_stiefel_batch(
    count: int, ambient_dim: int, subspace_dim: int, rng: np.random.Generator
) -> np.ndarray:
    """``count`` independent Haar draws stacked as a ``(count, D, d)`` array."""
    _check_dims(ambient_dim, subspace_dim)
    if count < 1:
        raise InvalidArgumentError("count must be positive")
    Z = rng.standard_normal((count, ambient_dim, subspace_dim))
    return _haar_from_gaussian(Z)


def _fix_column_signs(Q: np.ndarray) -> np.ndarray:
    # Largest-magnitude entry of every column made positive; argmax returns the
    # lowest row index on ties.
    idx = np.argmax(np.abs(Q), axis=0)
    signs = np.sign(Q[idx, np.arange(Q.shape[1])])
    signs[signs == 0] = 1.0
    return Q * signs


def orthonormalize(raw) -> BasisMatrix:
    """Orthonormal basis of ``span(raw)`` with a deterministic sign convention.

    Raises
    ------
    DegenerateInputError
        If the smallest singular value of ``raw`` is at most
        ``TOL.rank_rel`` times the largest.
    """
    A = _as_finite_matrix(raw, "raw")
    D, d = A.shape
    if d < 1 or d > D:
        raise DegenerateInputError(f"cannot span {d} dimensions in R^{D}")
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= TOL.rank_rel * s[0]:
        raise DegenerateInputError("input does not have full column rank")
    Q, _ = np.linalg.qr(A)
    return BasisMatrix(_fix_column_signs(Q), check=False)


def _power_norm(M: np.ndarray) -> float:
    # Power iteration on M^T M for the top singular value.
    G = M.T @ M
    rng = np.random.default_rng(0)
    v = rng.standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(TOL.power_iter_max):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = float(v @ (G @ v))
        if abs(new - lam) <= TOL.power_iter_tol * max(new, 1e-300):
            lam = new
            break
        lam = new
    return float(np.sqrt(max(lam, 0.0)))


def operator_norm_2(M) -> float:
    """Largest singular value of ``M``."""
    A = _as_finite_matrix(M)
    if A.size == 0:
        return 0.0
    if max(A.shape) <= TOL.svd_max_dim:
        return float(np.linalg.svd(A, compute_uv=False)[0])
    # iterate on the smaller Gram matrix
    return _power_norm(A if A.shape[1] <= A.shape[0] else A.T)


def projection_energy(basis, y) -> float:
    """``||U^T y||^2``, the energy of ``y`` projected onto ``span(U)``."""
    U = np.asarray(basis)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != U.shape[0]:
        raise InvalidArgumentError(
            f"observation of shape {y.shape} does not match ambient dim {U.shape[0]}"
        )
    c = U.T @ y
    return float(c @ c)


def save_bases(path, bases: Sequence | np.ndarray) -> None:
    """Write bases as text: a ``D d N`` header then ``N*D`` rows of ``d`` values."""
    stack = np.asarray([np.asarray(b) for b in bases], dtype=np.float64)
    N, D, d = stack.shape
    with open(path, "w") as fh:
        fh.write(f"{D} {d} {N}\n")
        for row in stack.reshape(N * D, d):
            fh.write(" ".join(format(float(x), ".17g") for x in row))
            fh.write("\n")


def load_bases(path) -> np.ndarray:
    """Read a file written by :func:`save_bases`; returns a ``(N, D, d)`` array."""
    text = Path(path).read_text().split("\n", 1)
    try:
        D, d, N = (int(t) for t in text[0].split())
    except ValueError as exc:
        raise InvalidArgumentError(f"bad basis header {text[0]!r}") from exc
    body = text[1] if len(text) > 1 else ""
    values = np.array(body.split(), dtype=np.float64)
    if values.size != N * D * d:
        raise InvalidArgumentError(
            f"expected {N * D * d} values for D={D}, d={d}, N={N}, got {values.size}"
        )
    return values.reshape(N, D, d)

