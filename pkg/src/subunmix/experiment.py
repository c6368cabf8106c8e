"""Monte Carlo harness: sweeps over the number of active subspaces, c1 calibration,
coherence reports, empirical tail checks and an exhaustive detector for tiny problems.

Every random draw comes from a substream keyed by ``(master_seed, purpose, ...)``,
so trials can run in any order and reproduce bit for bit.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from .coherence import CoherenceProfile, SubspaceCollection, coherence_profile
from .linalg import (
    DegenerateInputError,
    InvalidArgumentError,
    haar_stiefel_batch,
    load_bases,
    orthonormalize,
)
from .metrics import (
    RESULTS_COLUMNS,
    BatchSummary,
    TrialRecord,
    results_row,
    summarize,
)
from .model import (
    BOUNDED_NOISE_FRACTION,
    NOISE_KINDS,
    NoiseSpec,
    allocate_energies,
    sample_activity_pattern,
    sample_coefficients,
    synthesize,
)
from .msd import (
    C0,
    ThresholdParams,
    detect,
    guaranteed_set,
    lemma1_bound,
    lemma2_bound,
    test_statistics,
    thresholds_for,
)

# substream purposes
COLLECTION, SWEEP, CALIBRATION, TAIL, ORACLE = range(5)

HIST_BINS = 64
ML_BUDGET = 10**6


class ConfigError(InvalidArgumentError):
    pass


class CalibrationError(RuntimeError):
    def __init__(self, message, table):
        super().__init__(message)
        self.table = table


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` under ``master_seed``."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(seq)


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one sweep.

    ``energy_rule = "equal"`` sets ``E_A = n``; ``"explicit"`` uses the fixed
    ``energy_total`` for every n. Either way ``E_A`` is split equally.
    ``n`` is treated as known to the detector.
    """

    D: int
    d: int
    N: int
    n_sweep: tuple[int, ...]
    sigma: float = 0.01
    alpha: float = 0.1
    energy_rule: str = "equal"
    energy_total: float | None = None
    trials: int = 1000
    master_seed: int = 0
    mode: str = "theorem1"
    c1: float = 1.0
    noise: str = "gaussian_iid"
    epsilon_eta: float = 0.0
    collection_path: str | None = None
    output_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "n_sweep", tuple(int(n) for n in self.n_sweep))
        if min(self.D, self.d, self.N) < 1 or self.d > self.D:
            raise ConfigError(f"bad dimensions D={self.D}, d={self.d}, N={self.N}")
        if not self.n_sweep:
            raise ConfigError("n_sweep is empty")
        for n in self.n_sweep:
            if not 1 <= n < self.N:
                raise ConfigError(f"n={n} must satisfy 1 <= n < N={self.N}")
            if n * self.d >= self.D:
                raise ConfigError(f"n*d = {n * self.d} must be below D={self.D}")
        if self.energy_rule not in ("equal", "explicit"):
            raise ConfigError(f"unknown energy_rule {self.energy_rule!r}")
        if self.energy_rule == "explicit" and (self.energy_total is None or self.energy_total <= 0):
            raise ConfigError("energy_rule=explicit needs a positive energy_total")
        if self.mode not in ("theorem1", "calibrated"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must lie in (0, 1]")
        if not 0 < self.c1 <= 1:
            raise ConfigError("c1 must lie in (0, 1]")
        if self.trials < 1:
            raise ConfigError("trials must be positive")
        if self.noise not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.noise!r}")
        if self.sigma < 0 or self.epsilon_eta < 0:
            raise ConfigError("noise levels must be nonnegative")

    @property
    def noise_spec(self) -> NoiseSpec:
        if self.noise == "gaussian_iid":
            return NoiseSpec.gaussian(self.sigma)
        return NoiseSpec.bounded(self.epsilon_eta)

    def energy_for(self, n: int) -> float:
        return float(n) if self.energy_rule == "equal" else float(self.energy_total)

    def params_for(self, n: int, c1: float | None = None) -> ThresholdParams:
        args = (self.alpha, n, self.N, self.d, self.energy_for(n), self.noise_spec)
        if self.mode == "theorem1" and c1 is None:
            return ThresholdParams.theorem1(*args)
        return ThresholdParams.calibrated(*args, c1=self.c1 if c1 is None else c1)

    def content_hash(self) -> str:
        """SHA-256 of every field that affects results (``output_path`` excluded)."""
        payload = dataclasses.asdict(self)
        payload.pop("output_path")
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_INT_FIELDS = {"D", "d", "N", "trials", "master_seed"}
_FLOAT_FIELDS = {"sigma", "alpha", "energy_total", "c1", "epsilon_eta"}


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse ``key = value`` lines grouped in any number of ``[sections]``."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(text if text.lstrip().startswith("[") else "[experiment]\n" + text)
    raw = {}
    for section in cp.sections():
        raw.update(cp[section])
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    values: dict = {}
    for key, val in raw.items():
        if key in _INT_FIELDS:
            values[key] = int(val)
        elif key in _FLOAT_FIELDS:
            values[key] = float(val)
        elif key == "n_sweep":
            values[key] = _parse_sweep(val)
        else:
            values[key] = val
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_sweep(text: str) -> tuple[int, ...]:
    out: list[int] = []
    for part in text.replace(" ", "").split(","):
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return tuple(out)


def load_config(path, **overrides) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), **overrides)


def build_collection(config: ExperimentConfig) -> SubspaceCollection:
    """Load the configured basis file, or draw ``N`` Haar bases from the collection substream."""
    if config.collection_path:
        stack = load_bases(config.collection_path)
        if stack.shape != (config.N, config.D, config.d):
            raise ConfigError(
                f"basis file has shape {stack.shape}, config expects "
                f"{(config.N, config.D, config.d)}"
            )
    else:
        rng = substream(config.master_seed, COLLECTION)
        stack = haar_stiefel_batch(config.N, config.D, config.d, rng)
    return SubspaceCollection(stack)


@dataclass
class TrialBatch:
    n: int
    records: list[TrialRecord] = field(default_factory=list)
    # A* (computed with c0 = e^-1/256, c1 = 1) contained in the estimate
    guaranteed_contained: list[bool] = field(default_factory=list)

    def summary(self) -> BatchSummary:
        return summarize(self.records)


def _draw_instance(collection, n, energies, noise, rng):
    pattern = sample_activity_pattern(collection.N, n, rng)
    coeffs = sample_coefficients(energies, collection.subspace_dim, rng)
    return synthesize(collection, pattern, coeffs, noise, rng)


def run_batch(
    collection: SubspaceCollection,
    profile: CoherenceProfile,
    params: ThresholdParams,
    trials: int,
    master_seed: int,
    stream: int = SWEEP,
) -> TrialBatch:
    """``trials`` independent synthesize-and-detect rounds at ``params.n`` active subspaces."""
    n = params.n
    energies = allocate_energies(n, params.energy_total)
    guarantee = dataclasses.replace(params, c0=C0, c1=1.0)
    batch = TrialBatch(n)
    for t in range(trials):
        rng = substream(master_seed, stream, n, t)
        inst = _draw_instance(collection, n, energies, params.noise, rng)
        result = detect(collection, profile, inst.observation, params)
        batch.records.append(TrialRecord(inst.pattern.as_set(), result.estimated_active))
        a_star = guaranteed_set(profile, inst.pattern, energies, guarantee)
        batch.guaranteed_contained.append(a_star <= result.estimated_active)
    return batch


@dataclass
class SweepResult:
    config: ExperimentConfig
    c1: float
    batches: list[TrialBatch]
    csv_text: str

    def summaries(self) -> dict[int, BatchSummary]:
        return {b.n: b.summary() for b in self.batches}


def _csv_header(config: ExperimentConfig, c1: float, extra: Sequence[str] = ()) -> list[str]:
    return [
        "# subunmix experiment",
        f"# master_seed={config.master_seed}",
        f"# config_hash={config.content_hash()}",
        f"# mode={config.mode}",
        f"# c0={1.0 if config.mode == 'calibrated' else C0!r}",
        f"# c1={c1!r}",
        f"# noise={config.noise}",
        "# theta_directions=sphere-uniform",
        "# n_known=true",
        *extra,
        ",".join(RESULTS_COLUMNS),
    ]


def run_sweep(
    config: ExperimentConfig,
    collection: SubspaceCollection | None = None,
    profile: CoherenceProfile | None = None,
    c1: float | None = None,
) -> SweepResult:
    """Run ``config.trials`` trials for each n in the sweep and emit the results CSV.

    The collection is built once and held fixed for the whole sweep. ``c1``
    overrides ``config.c1`` (and implies calibrated thresholds).
    """
    if collection is None:
        collection = build_collection(config)
    if profile is None:
        profile = coherence_profile(collection)
    if c1 is not None:
        config = dataclasses.replace(config, mode="calibrated", c1=c1)
    used_c1 = config.c1 if config.mode == "calibrated" else 1.0
    lines = _csv_header(config, used_c1)
    batches = []
    for n in config.n_sweep:
        params = config.params_for(n)
        batch = run_batch(collection, profile, params, config.trials, config.master_seed)
        batches.append(batch)
        lines.append(
            results_row(
                batch.summary(), n=n, D=config.D, d=config.d, N=config.N,
                sigma=config.noise_spec.level, alpha=config.alpha, c1=used_c1,
            )
        )
    text = "\n".join(lines) + "\n"
    if config.output_path:
        Path(config.output_path).write_text(text)
    return SweepResult(config, used_c1, batches, text)


@dataclass(frozen=True)
class CalibrationRow:
    c1: float
    n: int
    fwer: float
    fwer_se: float
    ndp_mean: float


@dataclass
class CalibrationResult:
    c1: float
    table: list[CalibrationRow]

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(f"# selected_c1={self.c1!r}\n")
        out.write("c1,n,fwer,fwer_se,ndp_mean\n")
        for r in self.table:
            out.write(f"{r.c1!r},{r.n},{r.fwer!r},{r.fwer_se!r},{r.ndp_mean!r}\n")
        return out.getvalue()


def default_c1_grid(points: int = 20, hi: float = 0.5) -> list[float]:
    return [float(c) for c in np.linspace(hi / points, hi, points)]


def calibrate_c1(
    config: ExperimentConfig,
    c1_grid: Sequence[float],
    validation_trials: int,
    collection: SubspaceCollection | None = None,
    profile: CoherenceProfile | None = None,
) -> CalibrationResult:
    """Pick ``c1`` for calibrated thresholds by validation on a held-out substream.

    Every grid value is scored on the same ``validation_trials`` draws per n
    (common random numbers). A value is feasible when its empirical FWER is
    at most ``alpha`` at every n of the sweep; among feasible values the one
    with the smallest mean NDP wins, ties going to the larger ``c1``.
    """
    grid = [float(c) for c in c1_grid]
    if not grid:
        raise InvalidArgumentError("empty c1 grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidArgumentError("c1 grid must be strictly ascending")
    if not all(0 < c <= 1 for c in grid):
        raise InvalidArgumentError("c1 grid values must lie in (0, 1]")
    if validation_trials < 1:
        raise InvalidArgumentError("validation_trials must be positive")
    if collection is None:
        collection = build_collection(config)
    if profile is None:
        profile = coherence_profile(collection)

    # false positives and missed detections per (grid value, n)
    fp = np.zeros((len(grid), len(config.n_sweep)))
    missed = np.zeros_like(fp)
    scales = np.array(grid) ** 2
    for j, n in enumerate(config.n_sweep):
        base = thresholds_for(config.params_for(n, c1=1.0), profile)
        energies = allocate_energies(n, config.energy_for(n))
        for t in range(validation_trials):
            rng = substream(config.master_seed, CALIBRATION, n, t)
            inst = _draw_instance(collection, n, energies, config.noise_spec, rng)
            T = test_statistics(collection, inst.observation)
            active = np.zeros(collection.N, dtype=bool)
            active[list(inst.pattern.active_indices)] = True
            declared = T[None, :] > scales[:, None] * base[None, :]
            fp[:, j] += np.any(declared & ~active, axis=1)
            missed[:, j] += np.sum(~declared & active, axis=1) / n

    fwer = fp / validation_trials
    ndp_mean = missed / validation_trials
    table = [
        CalibrationRow(
            c1=c, n=n, fwer=float(fwer[g, j]),
            fwer_se=math.sqrt(fwer[g, j] * (1 - fwer[g, j]) / validation_trials),
            ndp_mean=float(ndp_mean[g, j]),
        )
        for g, c in enumerate(grid)
        for j, n in enumerate(config.n_sweep)
    ]
    feasible = [g for g in range(len(grid)) if np.all(fwer[g] <= config.alpha)]
    if not feasible:
        raise CalibrationError("no c1 in the grid keeps the FWER at or below alpha", table)
    score = ndp_mean.mean(axis=1)
    best = min(feasible, key=lambda g: (score[g], -grid[g]))
    return CalibrationResult(grid[best], table)


@dataclass
class CoherenceReport:
    profile: CoherenceProfile
    hist_edges: dict[str, np.ndarray]
    hist_counts: dict[str, np.ndarray]

    def histogram_csv(self) -> str:
        out = io.StringIO()
        out.write(f"# bins={HIST_BINS}\n")
        out.write("measure,bin,bin_lo,bin_hi,count\n")
        for name in ("local_two", "avg_mixing"):
            edges, counts = self.hist_edges[name], self.hist_counts[name]
            for b, c in enumerate(counts):
                out.write(f"{name},{b},{float(edges[b])!r},{float(edges[b + 1])!r},{int(c)}\n")
        return out.getvalue()


def fixed_histogram(values, bins: int = HIST_BINS) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width histogram over ``[0, max(values)]`` (``[0, 1]`` if all are 0)."""
    v = np.asarray(values, dtype=np.float64)
    hi = float(v.max()) if v.size else 0.0
    counts, edges = np.histogram(v, bins=bins, range=(0.0, hi if hi > 0 else 1.0))
    return edges, counts


def coherence_report(
    collection: SubspaceCollection, profile: CoherenceProfile | None = None
) -> CoherenceReport:
    if profile is None:
        profile = coherence_profile(collection)
    edges, counts = {}, {}
    for name in ("local_two", "avg_mixing"):
        edges[name], counts[name] = fixed_histogram(getattr(profile, name))
    return CoherenceReport(profile, edges, counts)


def ml_oracle_detect(collection: SubspaceCollection, y, n: int) -> frozenset[int]:
    """Exhaustive search for the ``n``-subset whose sum subspace captures most of ``y``.

    Intended as a test oracle only: it evaluates ``C(N, n)`` projections.
    Ties go to the lexicographically first subset.
    """
    N = collection.N
    if not 1 <= n < N:
        raise InvalidArgumentError(f"need 1 <= n < N, got n={n}")
    if math.comb(N, n) > ML_BUDGET:
        raise InvalidArgumentError(f"C({N}, {n}) subsets exceed the budget of {ML_BUDGET}")
    y = np.asarray(y, dtype=np.float64)
    best, best_energy = None, -np.inf
    for subset in itertools.combinations(range(N), n):
        raw = np.concatenate([collection.stack[i] for i in subset], axis=1)
        try:
            Q = np.asarray(orthonormalize(raw))
        except DegenerateInputError:
            Q = scipy.linalg.orth(raw)
        c = Q.T @ y
        energy = float(c @ c)
        if energy > best_energy:
            best, best_energy = subset, energy
    return frozenset(best)


@dataclass
class TailCheck:
    """Empirical tail frequencies of one statistic against the matching bound."""

    k: int
    hypothesis: str
    taus: np.ndarray
    empirical: np.ndarray
    bounds: np.ndarray
    valid: np.ndarray
    trials: int

    @property
    def se(self) -> np.ndarray:
        p = self.empirical
        return np.sqrt(p * (1 - p) / self.trials)

    def holds(self, n_se: float = 3.0) -> np.ndarray:
        return self.empirical <= self.bounds + n_se * self.se


def _tail_statistics(collection, k, n, energies, noise, trials, rng, include_k):
    N, d = collection.N, collection.subspace_dim
    others = np.delete(np.arange(N), k)
    m = n - 1 if include_k else n
    # uniform m-subsets of the other N-1 indices, one per trial
    keys = rng.random((trials, N - 1))
    chosen = others[np.argpartition(keys, m - 1, axis=1)[:, :m]] if m > 0 else np.empty((trials, 0), int)
    if include_k:
        chosen = np.concatenate([np.full((trials, 1), k), chosen], axis=1)
    v = rng.standard_normal((trials, n, d))
    v /= np.linalg.norm(v, axis=2, keepdims=True)
    thetas = v * np.sqrt(np.asarray(energies))[None, :, None]
    x = np.einsum("tnDd,tnd->tD", collection.stack[chosen], thetas)
    if noise.kind == "gaussian_iid":
        eta = noise.sigma * rng.standard_normal(x.shape)
    else:
        u = rng.standard_normal(x.shape)
        eta = BOUNDED_NOISE_FRACTION * noise.epsilon_eta * u / np.linalg.norm(u, axis=1, keepdims=True)
    c = (x + eta) @ collection.stack[k]
    return np.einsum("td,td->t", c, c)


def null_tail_check(
    collection: SubspaceCollection,
    profile: CoherenceProfile,
    params: ThresholdParams,
    k: int,
    taus,
    trials: int,
    master_seed: int,
) -> TailCheck:
    """Empirical ``P(T_k >= tau)`` with ``k`` inactive, against :func:`lemma1_bound`."""
    energies = allocate_energies(params.n, params.energy_total)
    rng = substream(master_seed, TAIL, k, 0)
    T = _tail_statistics(collection, k, params.n, energies, params.noise, trials, rng, False)
    taus = np.asarray(taus, dtype=np.float64)
    emp = np.array([(T >= t).mean() for t in taus])
    b = [lemma1_bound(params, profile.avg_mixing[k], profile.local_two[k], t) for t in taus]
    return TailCheck(k, "null", taus, emp, np.array([x.value for x in b]),
                     np.array([x.valid for x in b]), trials)


def alt_tail_check(
    collection: SubspaceCollection,
    profile: CoherenceProfile,
    params: ThresholdParams,
    k: int,
    taus,
    trials: int,
    master_seed: int,
) -> TailCheck:
    """Empirical ``P(T_k <= tau)`` with ``k`` active, against :func:`lemma2_bound`."""
    energies = allocate_energies(params.n, params.energy_total)
    rng = substream(master_seed, TAIL, k, 1)
    T = _tail_statistics(collection, k, params.n, energies, params.noise, trials, rng, True)
    taus = np.asarray(taus, dtype=np.float64)
    emp = np.array([(T <= t).mean() for t in taus])
    b = [
        lemma2_bound(params, profile.avg_mixing[k], profile.local_two[k], energies[0], t)
        for t in taus
    ]
    return TailCheck(k, "alt", taus, emp, np.array([x.value for x in b]),
                     np.array([x.valid for x in b]), trials)


def lemma1_tau_grid(params: ThresholdParams, rho: float, gamma2: float, count: int = 10) -> np.ndarray:
    """``count`` thresholds above the effective floor, from just above it to where the bound is ~1e-3."""
    floor = params.noise_radius + rho * math.sqrt(params.n * params.energy_total)
    N, n, E = params.N, params.n, params.energy_total
    target = math.log(math.e**2 / 1e-3)
    hi = math.sqrt(target * N**2 * gamma2**2 * E / (params.c0 * (N - n) ** 2))
    lo = 0.05 * max(floor, 1e-3)
    return (floor + np.geomspace(lo, max(hi, 2 * lo), count)) ** 2


def lemma2_tau_grid(params: ThresholdParams, rho: float, energy_k: float, count: int = 10) -> np.ndarray:
    """``count`` thresholds strictly inside ``(0, (sqrt(E_k) - floor)^2)``."""
    rest = max(params.energy_total - energy_k, 0.0)
    margin = math.sqrt(energy_k) - params.noise_radius - rho * math.sqrt(params.n * rest)
    if margin <= 0:
        raise InvalidArgumentError("energy_k is below the effective noise floor")
    return (margin * np.linspace(0.05, 0.95, count)) ** 2
