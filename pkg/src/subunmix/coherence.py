"""Subspace geometry: pairwise, local 2-subspace, average mixing and worst-case coherence.

All indices are 0-based here; the CSV writers emit 1-based indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .linalg import TOL, BasisMatrix, InvalidArgumentError, operator_norm_2

# Full N x N pairwise matrix is kept in memory up to this many subspaces.
PAIRWISE_CACHE_LIMIT = 4096
_ROW_BLOCK = 256


def _block_norms(blocks: np.ndarray) -> np.ndarray:
    """Operator 2-norms of a stack of ``d x d`` blocks (last two axes)."""
    d = blocks.shape[-1]
    if d <= TOL.svd_max_dim:
        return np.linalg.svd(blocks, compute_uv=False)[..., 0]
    flat = blocks.reshape(-1, d, d)
    return np.array([operator_norm_2(b) for b in flat]).reshape(blocks.shape[:-2])


class SubspaceCollection:
    """``N`` orthonormal ``D x d`` bases; the stored bases are the mixing bases.

    Parameters
    ----------
    bases : sequence of BasisMatrix or array_like, shape (N, D, d)
    check_disjoint : bool
        Verify that no two subspaces share a nonzero vector, i.e. every
        pairwise coherence is below ``1 - TOL.disjoint``. This costs one pass
        over all pairs; the result is cached when ``N <= PAIRWISE_CACHE_LIMIT``.
    """

    def __init__(self, bases: Sequence | np.ndarray, *, check_disjoint: bool = True):
        if isinstance(bases, np.ndarray):
            stack = np.array(bases, dtype=np.float64, copy=True)
        else:
            mats = [np.asarray(b, dtype=np.float64) for b in bases]
            if len({m.shape for m in mats}) > 1:
                raise InvalidArgumentError("bases must share a common (D, d) shape")
            stack = np.array(mats)
        if stack.ndim != 3:
            raise InvalidArgumentError("bases must share a common (D, d) shape")
        N, D, d = stack.shape
        if N < 2:
            raise InvalidArgumentError(f"a collection needs N >= 2 subspaces, got {N}")
        if not 1 <= d <= D:
            raise InvalidArgumentError(f"need 1 <= d <= D, got D={D}, d={d}")
        if not np.all(np.isfinite(stack)):
            raise InvalidArgumentError("bases have non-finite entries")
        gram = np.einsum("nij,nik->njk", stack, stack)
        err = np.max(np.abs(gram - np.eye(d)))
        if err > TOL.orthonormal:
            raise InvalidArgumentError(
                f"basis columns are not orthonormal (max deviation {err:.3e})"
            )
        stack.setflags(write=False)
        self.stack = stack
        if check_disjoint:
            worst = worst_case_coherence(self)
            if worst >= 1.0 - TOL.disjoint:
                raise InvalidArgumentError(
                    f"subspaces are not pairwise disjoint (max coherence {worst!r})"
                )

    @property
    def N(self) -> int:
        return self.stack.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.stack.shape[1]

    @property
    def subspace_dim(self) -> int:
        return self.stack.shape[2]

    def __len__(self):
        return self.N

    def __getitem__(self, i) -> BasisMatrix:
        return BasisMatrix(self.stack[i], check=False)

    @cached_property
    def flat(self) -> np.ndarray:
        """All bases side by side, a ``D x (N d)`` matrix."""
        D = self.ambient_dim
        out = np.ascontiguousarray(self.stack.transpose(1, 0, 2).reshape(D, -1))
        out.setflags(write=False)
        return out

    @cached_property
    def _pairwise(self) -> np.ndarray | None:
        if self.N > PAIRWISE_CACHE_LIMIT:
            return None
        out = np.empty((self.N, self.N))
        for rows, block in _pairwise_rows(self):
            out[rows] = block
        out.setflags(write=False)
        return out

    def pairwise(self) -> np.ndarray:
        """The ``N x N`` pairwise coherence matrix, zero diagonal."""
        P = self._pairwise
        if P is None:
            raise MemoryError(
                f"N={self.N} exceeds the pairwise cache limit; use iter_pairwise_rows"
            )
        return P

    def iter_pairwise_rows(self) -> Iterator[tuple[slice, np.ndarray]]:
        P = self._pairwise
        if P is not None:
            yield slice(0, self.N), P
        else:
            yield from _pairwise_rows(self)


def _pairwise_rows(collection: SubspaceCollection):
    N, d = collection.N, collection.subspace_dim
    X = collection.flat
    for start in range(0, N, _ROW_BLOCK):
        stop = min(start + _ROW_BLOCK, N)
        G = X[:, start * d : stop * d].T @ X
        blocks = G.reshape(stop - start, d, N, d).transpose(0, 2, 1, 3)
        block = _block_norms(blocks)
        block[np.arange(stop - start), np.arange(start, stop)] = 0.0
        np.clip(block, 0.0, 1.0, out=block)
        yield slice(start, stop), block


def subspace_coherence(U_i, U_j) -> float:
    """Cosine of the smallest principal angle, ``||U_i^T U_j||_2``."""
    A, B = np.asarray(U_i), np.asarray(U_j)
    if A.ndim != 2 or B.ndim != 2 or A.shape[0] != B.shape[0]:
        raise InvalidArgumentError(
            f"bases of shapes {A.shape} and {B.shape} do not share an ambient space"
        )
    return min(operator_norm_2(A.T @ B), 1.0)


def _check_index(collection: SubspaceCollection, i: int) -> int:
    if not 0 <= i < collection.N:
        raise InvalidArgumentError(f"index {i} out of range for N={collection.N}")
    return int(i)


def _row(collection: SubspaceCollection, i: int) -> np.ndarray:
    P = collection._pairwise
    if P is not None:
        return P[i]
    d = collection.subspace_dim
    X = collection.flat
    G = collection.stack[i].T @ X
    blocks = G.reshape(d, collection.N, d).transpose(1, 0, 2)
    row = np.clip(_block_norms(blocks), 0.0, 1.0)
    row[i] = 0.0
    return row


def _top_two_sum(rows: np.ndarray, self_idx: np.ndarray) -> np.ndarray:
    # the zeroed diagonal must not count as one of the two partners
    R = np.array(rows, copy=True)
    R[np.arange(R.shape[0]), self_idx] = -np.inf
    top = np.partition(R, R.shape[1] - 2, axis=1)[:, -2:]
    return top.sum(axis=1)


def local_two_subspace_coherence(collection: SubspaceCollection, i: int) -> float:
    """Sum of the two largest coherences between subspace ``i`` and the others."""
    if collection.N < 3:
        raise InvalidArgumentError("local 2-subspace coherence needs N >= 3")
    i = _check_index(collection, i)
    return float(_top_two_sum(_row(collection, i)[None, :], np.array([i]))[0])


def _mixing_sums(collection: SubspaceCollection) -> np.ndarray:
    # sum_{j != i} Phi_i^T Phi_j = Phi_i^T (sum_j Phi_j) - I
    S = collection.stack.sum(axis=0)
    d = collection.subspace_dim
    return np.einsum("nij,ik->njk", collection.stack, S) - np.eye(d)


def average_mixing_coherence(collection: SubspaceCollection, i: int) -> float:
    """``||sum_{j != i} Phi_i^T Phi_j||_2 / (N - 1)`` over the stored mixing bases."""
    i = _check_index(collection, i)
    S = collection.stack.sum(axis=0) - collection.stack[i]
    return operator_norm_2(collection.stack[i].T @ S) / (collection.N - 1)


def average_subspace_coherence(collection: SubspaceCollection, i: int) -> float:
    """Mean of the pairwise coherences between subspace ``i`` and the others."""
    i = _check_index(collection, i)
    return float(_row(collection, i).sum() / (collection.N - 1))


def worst_case_coherence(collection: SubspaceCollection) -> float:
    """Largest pairwise coherence over the collection."""
    return float(max(block.max() for _, block in collection.iter_pairwise_rows()))


def coherence_lower_bound(N: int, D: int, d: int) -> float:
    """Lower bound ``sqrt((Nd - D) / (D (N - 1)))`` on worst-case coherence; 0 if ``Nd <= D``."""
    if N < 2:
        raise InvalidArgumentError("need N >= 2")
    return math.sqrt(max(N * d - D, 0) / (D * (N - 1)))


@dataclass(frozen=True)
class CoherenceProfile:
    local_two: np.ndarray
    avg_mixing: np.ndarray
    avg_subspace: np.ndarray
    worst_case: float
    lower_bound: float

    @property
    def N(self) -> int:
        return len(self.local_two)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# worst_case={float(self.worst_case)!r}\n")
            fh.write(f"# lower_bound={float(self.lower_bound)!r}\n")
            fh.write("subspace_index,local_two,avg_mixing,avg_subspace\n")
            for k in range(self.N):
                fh.write(
                    f"{k + 1},{float(self.local_two[k])!r},{float(self.avg_mixing[k])!r},"
                    f"{float(self.avg_subspace[k])!r}\n"
                )

    @classmethod
    def from_csv(cls, path) -> "CoherenceProfile":
        meta = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, val = line[1:].strip().partition("=")
                    meta[key.strip()] = float(val)
                elif line[0].isdigit():
                    rows.append([float(t) for t in line.split(",")])
        arr = np.array(rows)
        order = np.argsort(arr[:, 0])
        arr = arr[order]
        return cls(
            local_two=arr[:, 1],
            avg_mixing=arr[:, 2],
            avg_subspace=arr[:, 3],
            worst_case=meta["worst_case"],
            lower_bound=meta["lower_bound"],
        )


def coherence_profile(collection: SubspaceCollection) -> CoherenceProfile:
    """All per-subspace coherences of a collection plus its worst-case coherence."""
    N = collection.N
    # the definition needs two distinct partners; N = 2 leaves it undefined
    local_two = np.full(N, np.nan)
    avg_subspace = np.empty(N)
    worst = 0.0
    for rows, block in collection.iter_pairwise_rows():
        idx = np.arange(rows.start, rows.stop)
        if N >= 3:
            local_two[rows] = _top_two_sum(block, idx)
        avg_subspace[rows] = block.sum(axis=1) / (N - 1)
        worst = max(worst, float(block.max()))
    avg_mixing = _block_norms(_mixing_sums(collection)) / (N - 1)
    return CoherenceProfile(
        local_two=local_two,
        avg_mixing=avg_mixing,
        avg_subspace=avg_subspace,
        worst_case=worst,
        lower_bound=coherence_lower_bound(N, collection.ambient_dim, collection.subspace_dim),
    )


@dataclass(frozen=True)
class ConditionReport:
    """Per-subspace outcome of the two subspace coherence conditions.

    Margins are ``bound - value``; a subspace passes when its margin is >= 0.
    """

    rho_bound: float
    gamma_bound: float
    rho_margin: np.ndarray
    gamma_margin: np.ndarray

    @property
    def rho_pass(self) -> np.ndarray:
        return self.rho_margin >= 0

    @property
    def gamma_pass(self) -> np.ndarray:
        return self.gamma_margin >= 0

    @property
    def all_pass(self) -> np.ndarray:
        return self.rho_pass & self.gamma_pass


def check_coherence_conditions(
    profile: CoherenceProfile,
    n: int,
    energy_total: float,
    N: int,
    alpha: float,
    c_rho: float = 1.0,
    c_gamma: float = 1.0,
) -> ConditionReport:
    """Check ``rho_i <= c_rho / sqrt(n E_A)`` and ``gamma_2i <= c_gamma / sqrt(E_A log(N / alpha))``."""
    if not 0 < alpha <= 1:
        raise InvalidArgumentError(f"alpha must lie in (0, 1], got {alpha}")
    if n < 1:
        raise InvalidArgumentError("n must be at least 1")
    if energy_total <= 0:
        raise InvalidArgumentError("energy_total must be positive")
    rho_bound = c_rho / math.sqrt(n * energy_total)
    gamma_bound = c_gamma / math.sqrt(energy_total * math.log(N / alpha))
    return ConditionReport(
        rho_bound=rho_bound,
        gamma_bound=gamma_bound,
        rho_margin=rho_bound - np.asarray(profile.avg_mixing),
        gamma_margin=gamma_bound - np.asarray(profile.local_two),
    )
