"""Command-line interface: ``stiefel-ppca {synth,fit,pca,ml,diag}``.

Inputs are CSV files and every output is CSV or JSON. ``fit`` writes

* ``draws.csv``: one row per post-warmup draw, sign-fixed, with a header
  ``chain,draw,logp,<parameter names>``
* ``summary.csv`` and ``summary.json``: posterior summaries per parameter
* ``diagnostics.json``: R-hat, ESS, divergences and leapfrog counts
* ``metadata.json``: the full configuration, library versions, seed and wall
  time; ``fit --replay metadata.json`` repeats the run exactly

Failures produce ``error.json`` in the output directory (when it exists), a
JSON line on stderr and a nonzero exit code.
"""
import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .baselines import classical_pca, fit_ml_ppca
from .data import generate_synthetic, ingest_csv, write_matrix_csv
from .diagnostics import derived_draws, ess_bulk, split_rhat, summarize_array
from .errors import ChainsFailed, StiefelPPCAError
from .gplvm import (
    GplvmConfig,
    GplvmData,
    GplvmHouseholderPosterior,
    GplvmStandardPosterior,
    SeKernelConfig,
)
from .hmc import SamplerConfig, run_chains
from .initialization import spectral_inits
from .ppca import PpcaData, PpcaHouseholderPosterior, PpcaStandardPosterior, PriorConfig

SCHEMA_VERSION = 1
SAMPLED_MODELS = ("ppca-householder", "ppca-standard", "gplvm-householder", "gplvm-standard")
MODELS = SAMPLED_MODELS + ("ml", "pca")

log = logging.getLogger("stiefel_ppca")


class CliError(Exception):
    """Usage problem detected after argument parsing."""


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _versions():
    return {
        "stiefel_ppca": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _load(args):
    Y = ingest_csv(
        args.input,
        standardize_columns=args.standardize,
        transpose=args.transpose,
        drop_columns=args.drop_columns,
    )
    if args.subsample:
        if args.subsample > Y.shape[1]:
            raise CliError(f"--subsample {args.subsample} exceeds {Y.shape[1]} columns")
        rng = np.random.default_rng(args.seed)
        cols = np.sort(rng.choice(Y.shape[1], args.subsample, replace=False))
        Y = np.ascontiguousarray(Y[:, cols])
    return Y


def build_posterior(Y, args):
    """The posterior wrapper selected by ``args.model``."""
    if args.model.startswith("ppca"):
        prior = PriorConfig(
            mu_sd=args.mu_sd, noise_prior=args.noise_prior, noise_scale=args.noise_scale
        )
        cls = PpcaHouseholderPosterior if args.model == "ppca-householder" else PpcaStandardPosterior
        return cls(PpcaData(Y), args.q, prior)
    config = GplvmConfig(
        kernel=SeKernelConfig(args.kernel_variance, args.lengthscale),
        noise_var=args.gplvm_noise_var,
        sample_kernel=args.sample_kernel,
    )
    cls = GplvmHouseholderPosterior if args.model == "gplvm-householder" else GplvmStandardPosterior
    return cls(GplvmData(Y), args.q, config)


def _sampler_config(args):
    return SamplerConfig(
        chains=args.chains,
        warmup=args.warmup,
        draws=args.draws,
        target_accept=args.target_accept,
        max_leapfrog=args.max_leapfrog,
        seed=args.seed,
        metric=args.metric,
    )


def _write_draws(path, samples, names, outputs):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain", "draw", "logp"] + names)
        for c, out in enumerate(outputs):
            for i in range(samples.shape[1]):
                row = [out.chain_id, i, repr(float(out.log_densities[i]))]
                writer.writerow(row + [repr(float(x)) for x in samples[c, i]])


def _write_summary(outdir, summary):
    table = {name: s.to_dict() for name, s in summary.items()}
    _write_json(outdir / "summary.json", table)
    fields = ["mean", "sd", "q2_5", "q50", "q97_5", "rhat", "ess"]
    with open(outdir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter"] + fields)
        for name, row in table.items():
            writer.writerow([name] + [repr(row[f]) for f in fields])


def _chain_diagnostics(outputs):
    return [
        {
            "chain": out.chain_id,
            "divergences": out.divergences,
            "warmup_divergences": out.warmup_divergences,
            "mean_accept_stat": float(np.mean(out.accept_stats)) if len(out.accept_stats) else None,
            "mean_leapfrog": float(np.mean(out.n_leapfrog)) if len(out.n_leapfrog) else None,
            "total_leapfrog": int(np.sum(out.n_leapfrog)),
            "median_energy_error": (
                float(np.median(out.energy_errors)) if len(out.energy_errors) else None
            ),
            "step_size": out.adapted_step_size,
            "mass_diag": out.adapted_mass_diag.tolist(),
        }
        for out in outputs
    ]


def _fit_config_dict(args):
    keys = [
        "input", "model", "q", "chains", "warmup", "draws", "target_accept", "max_leapfrog",
        "seed", "metric", "init", "standardize", "transpose", "drop_columns", "subsample",
        "mu_sd", "noise_prior", "noise_scale", "gplvm_noise_var", "kernel_variance",
        "lengthscale", "sample_kernel",
    ]
    return {k: getattr(args, k) for k in keys}


def _fit_closed_form(args, Y, outdir):
    if args.model == "ml":
        result = fit_ml_ppca(Y, args.q).to_json()
    else:
        pca = classical_pca(Y, args.q)
        result = {
            "components": pca.components.tolist(),
            "eigvals": pca.eigvals.tolist(),
            "mean": pca.mean.tolist(),
        }
        write_matrix_csv(
            outdir / "projections.csv", pca.projections, [f"z_{q + 1}" for q in range(args.q)]
        )
    _write_json(outdir / f"{args.model}.json", result)
    return result


def cmd_fit(args):
    if args.replay:
        _apply_replay(args)
    if args.test_mode and args.seed is None:
        raise CliError("--seed is required with --test-mode")
    if args.seed is None:
        args.seed = 0
    if args.input is None:
        raise CliError("--input is required")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    start = time.time()
    Y = _load(args)

    if args.model in ("ml", "pca"):
        _fit_closed_form(args, Y, outdir)
        _write_metadata(outdir, args, start, Y.shape)
        return 0

    posterior = build_posterior(Y, args)
    config = _sampler_config(args)
    inits = None
    if args.init == "spectral":
        inits = spectral_inits(posterior, config.chains, seed=config.seed)
    outputs = run_chains(posterior, config, inits=inits, workers=args.workers)

    samples, names = derived_draws(posterior, outputs)
    _write_draws(outdir / "draws.csv", samples, names, outputs)
    if args.debug:
        raw = np.concatenate([out.draws for out in outputs])
        write_matrix_csv(outdir / "raw_draws.csv", raw, [f"theta_{j}" for j in range(raw.shape[1])])
    summary = summarize_array(samples, names)
    _write_summary(outdir, summary)
    _write_json(
        outdir / "diagnostics.json",
        {
            "schema_version": SCHEMA_VERSION,
            "rhat": {n: s.rhat for n, s in summary.items()},
            "ess": {n: s.ess for n, s in summary.items()},
            "divergences": int(sum(out.divergences for out in outputs)),
            "chains": _chain_diagnostics(outputs),
        },
    )
    _write_metadata(outdir, args, start, Y.shape)
    return 0


def _write_metadata(outdir, args, start, shape):
    _write_json(
        outdir / "metadata.json",
        {
            "schema_version": SCHEMA_VERSION,
            "command": "fit",
            "config": _fit_config_dict(args),
            "data_shape": list(shape),
            "seed": args.seed,
            "versions": _versions(),
            "wall_time_seconds": time.time() - start,
            "rng": "numpy PCG64, chain i seeded by SeedSequence(seed).spawn(chains)[i]",
        },
    )


def _apply_replay(args):
    with open(args.replay) as fh:
        meta = json.load(fh)
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise CliError(f"unsupported metadata schema {meta.get('schema_version')!r}")
    for key, value in meta["config"].items():
        setattr(args, key, value)


def cmd_synth(args):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    Y, truth = generate_synthetic(
        N=args.n, D=args.d, Q=args.q, sigma=tuple(args.sigma), noise_sd=args.noise_sd, seed=args.seed
    )
    write_matrix_csv(outdir / "Y.csv", Y, [f"y_{d + 1}" for d in range(args.d)])
    _write_json(outdir / "truth.json", dict(truth.to_json(), schema_version=SCHEMA_VERSION))
    return 0


def cmd_closed_form(args):
    args.subsample = None
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    Y = _load(args)
    result = _fit_closed_form(args, Y, outdir)
    json.dump(result, sys.stdout)
    sys.stdout.write("\n")
    return 0


def _read_draws(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["chain", "draw", "logp"]:
            raise CliError(f"{path}: not a draws file (header starts {header[:3]})")
        rows = [[float(x) for x in row] for row in reader if row]
    table = np.asarray(rows)
    chain_ids = np.unique(table[:, 0]).astype(int)
    per_chain = [table[table[:, 0] == c] for c in chain_ids]
    length = min(len(c) for c in per_chain)
    samples = np.stack([c[:length, 3:] for c in per_chain])
    return samples, header[3:]


def cmd_diag(args):
    samples, names = _read_draws(args.draws)
    summary = summarize_array(samples, names)
    out = {
        "schema_version": SCHEMA_VERSION,
        "rhat": {n: s.rhat for n, s in summary.items()},
        "ess": {n: s.ess for n, s in summary.items()},
        "max_rhat": max(split_rhat(samples[:, :, j]) for j in range(len(names))),
        "min_ess": min(ess_bulk(samples[:, :, j]) for j in range(len(names))),
    }
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        _write_json(outdir / "diagnostics.json", out)
        _write_summary(outdir, summary)
    json.dump({"max_rhat": out["max_rhat"], "min_ess": out["min_ess"]}, sys.stdout)
    sys.stdout.write("\n")
    return 0


def _add_data_args(p):
    p.add_argument("--input", help="CSV data file (header row optional)")
    p.add_argument("--standardize", action="store_true", help="zero mean, unit sd per column")
    p.add_argument("--transpose", action="store_true", help="transpose after standardizing")
    p.add_argument(
        "--drop-columns", nargs="*", default=[], metavar="COL",
        help="column names or zero-based indices to discard (e.g. a label column)",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stiefel-ppca", description="Rotation-invariant Bayesian PPCA and GP-LVM."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic PPCA data")
    p.add_argument("--n", type=int, default=150)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--sigma", type=float, nargs="+", default=[3.0, 1.0])
    p.add_argument("--noise-sd", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="sample a posterior (or run a closed-form baseline)")
    _add_data_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=MODELS, default="ppca-householder")
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--max-leapfrog", type=int, default=32)
    p.add_argument("--metric", choices=("dense", "diag"), default="dense")
    p.add_argument(
        "--init", choices=("spectral", "uniform"), default="spectral",
        help="start chains at the spectral solution or uniformly in [-1, 1]",
    )
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None, help="worker processes for chains")
    p.add_argument("--subsample", type=int, default=None, help="keep this many random columns")
    p.add_argument("--mu-sd", type=float, default=10.0)
    p.add_argument("--noise-prior", choices=("lognormal", "half-cauchy"), default="lognormal")
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--gplvm-noise-var", type=float, default=0.1)
    p.add_argument("--kernel-variance", type=float, default=1.0)
    p.add_argument("--lengthscale", type=float, default=1.0)
    p.add_argument("--sample-kernel", action="store_true")
    p.add_argument("--debug", action="store_true", help="also dump unconstrained draws")
    p.add_argument("--test-mode", action="store_true", help="require an explicit --seed")
    p.add_argument("--replay", help="rerun the configuration stored in a metadata.json")
    p.set_defaults(func=cmd_fit)

    for name, helptext in (("ml", "maximum-likelihood PPCA"), ("pca", "classical PCA")):
        p = sub.add_parser(name, help=helptext)
        _add_data_args(p)
        p.add_argument("--q", type=int, default=2)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.set_defaults(func=cmd_closed_form, model=name)

    p = sub.add_parser("diag", help="recompute diagnostics from a draws file")
    p.add_argument("--draws", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_diag)
    return parser


def _report_error(args, exc):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ChainsFailed):
        payload["failed_chains"] = {str(i): repr(e) for i, e in exc.failures.items()}
    for attr in ("row", "column", "pivot_index"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    out = getattr(args, "out", None)
    if out and os.path.isdir(out):
        _write_json(Path(out) / "error.json", payload)
    sys.stderr.write(json.dumps(payload) + "\n")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (StiefelPPCAError, CliError, OSError, ValueError) as exc:
        _report_error(args, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
