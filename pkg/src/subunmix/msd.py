"""Marginal subspace detection.

Each subspace gets its own matched-subspace statistic ``T_k(y) = ||U_k^T y||^2``
and is declared active when ``T_k`` strictly exceeds its threshold. The
thresholds are Bonferroni-corrected right-tail bounds, so the family-wise
error rate is at most ``alpha``. The tail bounds themselves are exposed as
:func:`lemma1_bound` (inactive subspace, right tail) and :func:`lemma2_bound`
(active subspace, left tail).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .coherence import CoherenceProfile, SubspaceCollection
from .linalg import InvalidArgumentError
from .model import ActivityPattern, NoiseSpec

#: Constant of the vector-valued Azuma inequality behind the tail bounds.
C0 = math.exp(-1) / 256


@dataclass(frozen=True)
class ThresholdParams:
    """Everything a threshold needs besides the per-subspace coherences.

    ``c0`` is the concentration constant and ``c1`` a multiplicative
    calibration: thresholds are scaled by ``c1**2``. Use :meth:`theorem1`
    for the guaranteed-FWER thresholds and :meth:`calibrated` for the
    empirically tuned ones (``c0 = 1``).
    """

    alpha: float
    n: int
    N: int
    d: int
    energy_total: float
    noise: NoiseSpec
    c0: float = C0
    c1: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise InvalidArgumentError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 1 <= self.n < self.N:
            raise InvalidArgumentError(f"need 1 <= n < N, got n={self.n}, N={self.N}")
        if self.d < 1:
            raise InvalidArgumentError("d must be positive")
        if self.energy_total < 0:
            raise InvalidArgumentError("energy_total must be nonnegative")
        if self.c0 <= 0:
            raise InvalidArgumentError("c0 must be positive")
        if not 0 < self.c1 <= 1:
            raise InvalidArgumentError(f"c1 must lie in (0, 1], got {self.c1}")

    @classmethod
    def theorem1(cls, alpha, n, N, d, energy_total, noise) -> "ThresholdParams":
        return cls(alpha, n, N, d, energy_total, noise, c0=C0, c1=1.0)

    @classmethod
    def calibrated(cls, alpha, n, N, d, energy_total, noise, c1) -> "ThresholdParams":
        return cls(alpha, n, N, d, energy_total, noise, c0=1.0, c1=c1)

    @property
    def gaussian(self) -> bool:
        return self.noise.kind == "gaussian_iid"

    @property
    def delta(self) -> float:
        """Gaussian tail parameter, fixed at ``log(2N / alpha)``."""
        return math.log(2 * self.N / self.alpha)

    @property
    def noise_radius(self) -> float:
        """``epsilon_eta``, or the Gaussian radius exceeded with probability ``alpha / 2N``."""
        if self.gaussian:
            return gaussian_epsilon(self.noise.sigma, self.d, self.delta)
        return self.noise.epsilon_eta

    @property
    def log_factor(self) -> float:
        # log(e^2 N / alpha), or log(e^2 2N / alpha) for Gaussian noise
        return 2.0 + math.log((2 if self.gaussian else 1) * self.N / self.alpha)


@dataclass(frozen=True)
class DetectionResult:
    statistics: np.ndarray
    thresholds: np.ndarray
    estimated_active: frozenset[int]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("k,T_k,tau_k,active\n")
            for k, (t, tau) in enumerate(zip(self.statistics, self.thresholds)):
                flag = int(k in self.estimated_active)
                fh.write(f"{k + 1},{float(t)!r},{float(tau)!r},{flag}\n")


class TailBound(NamedTuple):
    value: float
    valid: bool


def test_statistics(collection: SubspaceCollection, y) -> np.ndarray:
    """Projection energies ``||U_k^T y||^2`` for every subspace in the collection."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != collection.ambient_dim:
        raise InvalidArgumentError(
            f"observation of shape {y.shape} does not match D={collection.ambient_dim}"
        )
    c = (collection.flat.T @ y).reshape(collection.N, collection.subspace_dim)
    return np.einsum("nd,nd->n", c, c)


# keep pytest from collecting the public name above as a test
test_statistics.__test__ = False


def gaussian_epsilon(sigma: float, d: int, delta: float) -> float:
    """``sigma * sqrt(d + 2 delta + 2 sqrt(d delta))``; chi-square tail radius."""
    if delta <= 0:
        raise InvalidArgumentError("delta must be positive")
    return sigma * math.sqrt(d + 2 * delta + 2 * math.sqrt(d * delta))


def _threshold(params: ThresholdParams, rho, gamma2):
    N, n, E = params.N, params.n, params.energy_total
    root = (
        params.noise_radius
        + np.asarray(rho) * math.sqrt(n * E)
        + np.asarray(gamma2) * N / (N - n) * math.sqrt(E * params.log_factor / params.c0)
    )
    return params.c1**2 * root**2


def threshold_deterministic(params: ThresholdParams, rho_k, gamma2_k):
    """FWER threshold under bounded noise ``||eta|| < epsilon_eta``; accepts arrays."""
    if params.gaussian:
        raise InvalidArgumentError("params describe Gaussian noise")
    return _threshold(params, rho_k, gamma2_k)


def threshold_gaussian(params: ThresholdParams, rho_k, gamma2_k):
    """FWER threshold under i.i.d. ``N(0, sigma^2)`` noise; accepts arrays."""
    if not params.gaussian:
        raise InvalidArgumentError("params describe bounded deterministic noise")
    return _threshold(params, rho_k, gamma2_k)


def thresholds_for(params: ThresholdParams, profile: CoherenceProfile) -> np.ndarray:
    """Per-subspace thresholds for the noise model in ``params``."""
    if profile.N != params.N:
        raise InvalidArgumentError("profile and params disagree on N")
    if not np.all(np.isfinite(profile.local_two)):
        raise InvalidArgumentError("profile lacks local 2-subspace coherences (N < 3?)")
    return np.asarray(_threshold(params, profile.avg_mixing, profile.local_two), dtype=float)


def detect(
    collection: SubspaceCollection,
    profile: CoherenceProfile,
    y,
    params: ThresholdParams,
) -> DetectionResult:
    """Run marginal subspace detection on one observation."""
    if params.N != collection.N or params.d != collection.subspace_dim:
        raise InvalidArgumentError("params do not match the collection")
    T = test_statistics(collection, y)
    tau = thresholds_for(params, profile)
    return DetectionResult(T, tau, frozenset(int(k) for k in np.flatnonzero(T > tau)))


def guaranteed_set(
    profile: CoherenceProfile,
    pattern: ActivityPattern,
    energies,
    params: ThresholdParams,
) -> frozenset[int]:
    """Active subspaces whose energy clears the guaranteed-detection floor.

    With thresholds set for FWER ``alpha``, every index returned here is
    detected with probability at least ``1 - 1/N - alpha`` (bounded noise) or
    ``1 - 1/N - 1.5 alpha`` (Gaussian noise). ``params.c1`` is ignored.
    """
    E = np.asarray(energies, dtype=np.float64)
    if E.shape != (pattern.n,) or np.any(E < 0):
        raise InvalidArgumentError("need one nonnegative energy per active subspace")
    if pattern.n != params.n or pattern.N != params.N:
        raise InvalidArgumentError("pattern does not match params")
    EA = float(E.sum())
    if abs(EA - params.energy_total) > 1e-8 * max(1.0, EA):
        raise InvalidArgumentError("energies do not sum to params.energy_total")
    N, n = params.N, params.n
    idx = np.array(pattern.active_indices)
    rest = np.clip(EA - E, 0.0, None)
    E1 = (math.sqrt(EA) + np.sqrt(rest)) ** 2
    E2 = (
        math.sqrt(EA * params.log_factor)
        + (2 - n / N) * np.sqrt(2 * rest * math.log(math.e * N))
    ) ** 2
    floor = (
        2 * params.noise_radius
        + profile.avg_mixing[idx] * np.sqrt(n * E1)
        + profile.local_two[idx] * N / (N - n) * np.sqrt(E2 / params.c0)
    ) ** 2
    return frozenset(int(i) for i in idx[E > floor])


def _azuma(exponent_num: float, exponent_den: float) -> float:
    if exponent_den == 0.0:
        return 0.0 if exponent_num > 0 else math.e**2
    return math.e**2 * math.exp(-exponent_num / exponent_den)


def lemma1_bound(params: ThresholdParams, rho_k: float, gamma2_k: float, tau: float) -> TailBound:
    """Bound on ``P(T_k >= tau)`` for an inactive subspace ``k``.

    Returns ``TailBound(1.0, False)`` when ``tau`` does not exceed the
    effective noise floor ``(eps + rho_k sqrt(n E_A))^2``.
    """
    if tau <= 0:
        raise InvalidArgumentError("tau must be positive")
    N, n, E = params.N, params.n, params.energy_total
    floor = params.noise_radius + rho_k * math.sqrt(n * E)
    gap = math.sqrt(tau) - floor
    if gap <= 0:
        return TailBound(1.0, False)
    value = _azuma(params.c0 * (N - n) ** 2 * gap**2, N**2 * gamma2_k**2 * E)
    if params.gaussian:
        value += math.exp(-params.delta)
    return TailBound(value, True)


def lemma2_bound(
    params: ThresholdParams,
    rho_k: float,
    gamma2_k: float,
    energy_k: float,
    tau: float,
) -> TailBound:
    """Bound on ``P(T_k <= tau)`` for an active subspace ``k`` of energy ``energy_k``.

    Valid when ``energy_k`` exceeds the effective floor
    ``(eps + rho_k sqrt(n (E_A - energy_k)))^2`` and ``tau`` lies below the
    gap ``(sqrt(energy_k) - eps - rho_k sqrt(n (E_A - energy_k)))^2``.
    Outside that region the result is flagged invalid: ``e^2`` exactly on the
    gap boundary, ``1.0`` beyond it.
    """
    if tau <= 0:
        raise InvalidArgumentError("tau must be positive")
    if energy_k <= 0:
        raise InvalidArgumentError("energy_k must be positive")
    N, n, E = params.N, params.n, params.energy_total
    if energy_k > E * (1 + 1e-12):
        raise InvalidArgumentError("energy_k exceeds the total active energy")
    rest = max(E - energy_k, 0.0)
    floor = params.noise_radius + rho_k * math.sqrt(n * rest)
    margin = math.sqrt(energy_k) - floor
    gap = margin - math.sqrt(tau)
    extra = math.exp(-params.delta) if params.gaussian else 0.0
    if margin <= 0 or gap < 0:
        return TailBound(1.0, False)
    value = _azuma(params.c0 * (N - n) ** 2 * gap**2, (2 * N - n) ** 2 * gamma2_k**2 * rest)
    return TailBound(value + extra, gap > 0)
