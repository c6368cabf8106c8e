"""Generative model: activity patterns, mixing coefficients, noise and observations.

Indices are 0-based in memory; :func:`write_instance` / :func:`read_instance`
use 1-based indices on disk.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .coherence import SubspaceCollection
from .linalg import InvalidArgumentError

NoiseKind = Literal["bounded_deterministic", "gaussian_iid"]
NOISE_KINDS = ("bounded_deterministic", "gaussian_iid")

# Bounded noise is drawn at this fraction of epsilon_eta so ||eta|| < epsilon_eta holds strictly.
BOUNDED_NOISE_FRACTION = 0.99


@dataclass(frozen=True)
class ActivityPattern:
    active_indices: tuple[int, ...]
    N: int

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.active_indices))
        if len(set(idx)) != len(idx):
            raise InvalidArgumentError("active indices must be distinct")
        if not 1 <= len(idx) < self.N:
            raise InvalidArgumentError(f"need 1 <= n < N, got n={len(idx)}, N={self.N}")
        if idx[0] < 0 or idx[-1] >= self.N:
            raise InvalidArgumentError("active index out of range")
        object.__setattr__(self, "active_indices", idx)

    @property
    def n(self) -> int:
        return len(self.active_indices)

    def as_set(self) -> frozenset[int]:
        return frozenset(self.active_indices)


@dataclass(frozen=True)
class MixingCoefficients:
    """One coefficient vector per active subspace, in pattern order."""

    thetas: np.ndarray
    per_subspace_energy: np.ndarray

    @classmethod
    def from_thetas(cls, thetas) -> "MixingCoefficients":
        """Fixed coefficients, e.g. for worst-case studies."""
        T = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        return cls(T, np.einsum("ij,ij->i", T, T))

    @property
    def energy_total(self) -> float:
        return float(np.sum(self.per_subspace_energy))


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind = "gaussian_iid"
    epsilon_eta: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidArgumentError(f"unknown noise kind {self.kind!r}")
        if self.epsilon_eta < 0 or self.sigma < 0:
            raise InvalidArgumentError("noise parameters must be nonnegative")

    @classmethod
    def gaussian(cls, sigma: float) -> "NoiseSpec":
        return cls("gaussian_iid", sigma=sigma)

    @classmethod
    def bounded(cls, epsilon_eta: float) -> "NoiseSpec":
        return cls("bounded_deterministic", epsilon_eta=epsilon_eta)

    @property
    def level(self) -> float:
        return self.sigma if self.kind == "gaussian_iid" else self.epsilon_eta


@dataclass(frozen=True)
class UnmixingInstance:
    pattern: ActivityPattern
    coefficients: MixingCoefficients
    noise: NoiseSpec
    observation: np.ndarray
    noiseless: np.ndarray = field(repr=False)


def sample_activity_pattern(N: int, n: int, rng: np.random.Generator) -> ActivityPattern:
    """Uniformly random ``n``-subset of ``{0, ..., N-1}``."""
    if not 1 <= n < N:
        raise InvalidArgumentError(f"need 1 <= n < N, got n={n}, N={N}")
    idx = rng.choice(N, size=n, replace=False)
    return ActivityPattern(tuple(int(i) for i in idx), N)


def allocate_energies(
    n: int, total_energy: float, scheme: str | Sequence[float] = "equal"
) -> np.ndarray:
    """Split ``total_energy`` over ``n`` active subspaces.

    ``scheme`` is ``"equal"`` or an explicit list that must sum to ``total_energy``.
    """
    if n < 1:
        raise InvalidArgumentError("n must be at least 1")
    if total_energy < 0:
        raise InvalidArgumentError("total energy must be nonnegative")
    if isinstance(scheme, str):
        if scheme != "equal":
            raise InvalidArgumentError(f"unknown energy scheme {scheme!r}")
        return np.full(n, total_energy / n)
    energies = np.asarray(scheme, dtype=np.float64)
    if energies.shape != (n,):
        raise InvalidArgumentError(f"expected {n} energies, got shape {energies.shape}")
    if np.any(energies < 0):
        raise InvalidArgumentError("energies must be nonnegative")
    if abs(energies.sum() - total_energy) > 1e-8 * max(1.0, total_energy):
        raise InvalidArgumentError(
            f"energies sum to {energies.sum()!r}, expected {total_energy!r}"
        )
    return energies


def _sphere(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((count, dim))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    # a zero Gaussian draw has probability 0, but keep the map total
    norms[norms == 0] = 1.0
    return v / norms


def sample_coefficients(energies, d: int, rng: np.random.Generator) -> MixingCoefficients:
    """Coefficient vectors uniform on spheres of radius ``sqrt(energy_j)`` in ``R^d``."""
    E = np.asarray(energies, dtype=np.float64)
    if np.any(E < 0):
        raise InvalidArgumentError("energies must be nonnegative")
    thetas = _sphere(rng, len(E), d) * np.sqrt(E)[:, None]
    return MixingCoefficients(thetas, E.copy())


def synthesize(
    collection: SubspaceCollection,
    pattern: ActivityPattern,
    coefficients: MixingCoefficients,
    noise: NoiseSpec,
    rng: np.random.Generator,
) -> UnmixingInstance:
    """Form ``x = sum_j Phi_{i_j} theta_j`` and ``y = x + eta``."""
    if pattern.N != collection.N:
        raise InvalidArgumentError("pattern and collection disagree on N")
    thetas = coefficients.thetas
    if thetas.shape != (pattern.n, collection.subspace_dim):
        raise InvalidArgumentError(
            f"coefficients of shape {thetas.shape} do not match n={pattern.n}, "
            f"d={collection.subspace_dim}"
        )
    Phi = collection.stack[list(pattern.active_indices)]
    x = np.einsum("nDd,nd->D", Phi, thetas)
    D = collection.ambient_dim
    if noise.kind == "gaussian_iid":
        eta = noise.sigma * rng.standard_normal(D) if noise.sigma > 0 else np.zeros(D)
    else:
        eta = BOUNDED_NOISE_FRACTION * noise.epsilon_eta * _sphere(rng, 1, D)[0]
    return UnmixingInstance(pattern, coefficients, noise, x + eta, x)


def write_instance(path, instance: UnmixingInstance) -> None:
    """Text record: pattern, energies, one theta line per subspace, noise, then y."""
    fmt = lambda v: " ".join(format(float(x), ".17g") for x in v)  # noqa: E731
    noise = instance.noise
    with open(path, "w") as fh:
        fh.write(f"N {instance.pattern.N}\n")
        fh.write("pattern " + " ".join(str(i + 1) for i in instance.pattern.active_indices) + "\n")
        fh.write("energies " + fmt(instance.coefficients.per_subspace_energy) + "\n")
        for theta in instance.coefficients.thetas:
            fh.write("theta " + fmt(theta) + "\n")
        fh.write(f"noise {noise.kind} {float(noise.level)!r}\n")
        fh.write("y " + fmt(instance.observation) + "\n")


@dataclass(frozen=True)
class InstanceRecord:
    """What :func:`read_instance` recovers; ``noiseless`` is not stored on disk."""

    pattern: ActivityPattern
    coefficients: MixingCoefficients
    noise: NoiseSpec
    observation: np.ndarray


def read_instance(path) -> InstanceRecord:
    fields: dict[str, list[str]] = {}
    thetas = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, *rest = line.split()
        if key == "theta":
            thetas.append([float(t) for t in rest])
        else:
            fields[key] = rest
    try:
        N = int(fields["N"][0])
        pattern = ActivityPattern(tuple(int(t) - 1 for t in fields["pattern"]), N)
        energies = np.array(fields["energies"], dtype=np.float64)
        kind, level = fields["noise"][0], float(fields["noise"][1])
        y = np.array(fields["y"], dtype=np.float64)
    except KeyError as exc:
        raise InvalidArgumentError(f"instance record missing field {exc}") from exc
    noise = NoiseSpec.gaussian(level) if kind == "gaussian_iid" else NoiseSpec.bounded(level)
    coeffs = MixingCoefficients(np.array(thetas, dtype=np.float64), energies)
    return InstanceRecord(pattern, coeffs, noise, y)
