"""Command-line entry point: ``subunmix {generate,coherence,unmix,experiment,calibrate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .coherence import CoherenceProfile, SubspaceCollection, coherence_profile
from .linalg import InvalidArgumentError, haar_stiefel_batch, load_bases, save_bases
from .model import NoiseSpec, read_instance
from .msd import ThresholdParams, detect

log = logging.getLogger("subunmix")


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _collection_from_args(args) -> SubspaceCollection:
    if args.bases:
        return SubspaceCollection(load_bases(args.bases))
    if args.config:
        return ex.build_collection(ex.load_config(args.config, master_seed=args.seed))
    raise InvalidArgumentError("give --bases or --config")


def cmd_generate(args) -> None:
    if args.config:
        cfg = ex.load_config(args.config, master_seed=args.seed)
        D, d, N, seed = cfg.D, cfg.d, cfg.N, cfg.master_seed
    else:
        if None in (args.D, args.d, args.N):
            raise InvalidArgumentError("give --config or all of -D, -d, -N")
        D, d, N, seed = args.D, args.d, args.N, args.seed or 0
    stack = haar_stiefel_batch(N, D, d, ex.substream(seed, ex.COLLECTION))
    save_bases(args.output, stack)
    log.info("wrote %d bases (D=%d, d=%d) to %s", N, D, d, args.output)


def cmd_coherence(args) -> None:
    collection = _collection_from_args(args)
    report = ex.coherence_report(collection)
    report.profile.to_csv(args.output)
    if args.histogram:
        _write(args.histogram, report.histogram_csv())
    p = report.profile
    log.info(
        "mean local_two=%.6g  mean avg_mixing=%.6g  worst_case=%.6g  lower_bound=%.6g",
        np.mean(p.local_two), np.mean(p.avg_mixing), p.worst_case, p.lower_bound,
    )


def _read_observation(path):
    """Either an instance record (``y ...`` line) or bare whitespace-separated values."""
    text = Path(path).read_text()
    if any(line.split()[:1] == ["y"] for line in text.splitlines()):
        return read_instance(path)
    return np.array(text.split(), dtype=np.float64)


def cmd_unmix(args) -> None:
    collection = SubspaceCollection(load_bases(args.bases))
    obs = _read_observation(args.observation)
    if isinstance(obs, np.ndarray):
        y, n, energy, noise = obs, args.n, args.energy_total, None
    else:
        y = obs.observation
        n = args.n or obs.pattern.n
        energy = args.energy_total or obs.coefficients.energy_total
        noise = obs.noise
    if args.sigma is not None:
        noise = NoiseSpec.gaussian(args.sigma)
    elif args.epsilon_eta is not None:
        noise = NoiseSpec.bounded(args.epsilon_eta)
    if n is None or energy is None or noise is None:
        raise InvalidArgumentError("need n, energy total and a noise level for a bare observation")
    common = (args.alpha, n, collection.N, collection.subspace_dim, energy, noise)
    if args.c1 is None:
        params = ThresholdParams.theorem1(*common)
    else:
        params = ThresholdParams.calibrated(*common, c1=args.c1)
    profile = (
        CoherenceProfile.from_csv(args.profile) if args.profile else coherence_profile(collection)
    )
    result = detect(collection, profile, y, params)
    result.to_csv(args.output)
    log.info("declared active: %s", sorted(k + 1 for k in result.estimated_active))


def cmd_experiment(args) -> None:
    cfg = ex.load_config(args.config, master_seed=args.seed, output_path=args.output)
    result = ex.run_sweep(cfg, c1=args.c1)
    if not cfg.output_path:
        sys.stdout.write(result.csv_text)


def cmd_calibrate(args) -> None:
    cfg = ex.load_config(args.config, master_seed=args.seed)
    grid = (
        [float(t) for t in args.grid.split(",")] if args.grid else ex.default_c1_grid()
    )
    try:
        result = ex.calibrate_c1(cfg, grid, args.validation_trials)
    except ex.CalibrationError as err:
        _write(args.output, ex.CalibrationResult(float("nan"), err.table).to_csv())
        raise
    _write(args.output, result.to_csv())
    log.info("selected c1=%r", result.c1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subunmix", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a Haar collection and save it")
    p.add_argument("--config")
    p.add_argument("-D", type=int)
    p.add_argument("-d", type=int)
    p.add_argument("-N", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("coherence", help="coherence profile and histograms")
    p.add_argument("--bases")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True, help="per-subspace profile CSV")
    p.add_argument("--histogram", help="histogram CSV ('-' for stdout)")
    p.set_defaults(func=cmd_coherence)

    p = sub.add_parser("unmix", help="detect active subspaces in one observation")
    p.add_argument("--bases", required=True)
    p.add_argument("--observation", required=True)
    p.add_argument("--profile", help="precomputed profile CSV")
    p.add_argument("--n", type=int)
    p.add_argument("--energy-total", type=float)
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--sigma", type=float)
    noise.add_argument("--epsilon-eta", type=float)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--c1", type=float, help="calibrated thresholds (c0 = 1) with this c1")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_unmix)

    p = sub.add_parser("experiment", help="run a sweep over n")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--c1", type=float)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("calibrate", help="select c1 by validation")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", help="comma-separated ascending c1 values")
    p.add_argument("--validation-trials", type=int, default=300)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        args.func(args)
    except (InvalidArgumentError, ex.CalibrationError) as err:
        print(f"subunmix: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
