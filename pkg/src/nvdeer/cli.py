"""Command-line workbench: branch tables, spectra, records and inference.

Subcommands
-----------
branches       electron-transition branch energies vs azimuth and field
spectrum       DEER NV spectrum for a configuration or preset
simulate-data  measurement record drawn from a simulated spectrum
infer          Metropolis sampling of the line-shape model on a record

Every command reads a YAML config (--config) or a shipped preset
(--preset), writes CSV/JSON plus optional PNG figures into --out, and
finishes with a manifest naming every file it produced. Exit codes:
0 success, 2 configuration/usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESET_NAMES, ConfigError, RunConfig, load_config, load_preset
from .constants import TWO_PI
from .deer import IntegratorError, Spectrum, spectrum
from .inference import (PARAM_NAMES, MeasurementModel, marginal_summary,
                        metropolis, simulate_dataset)
from .nitroxide import ISOTOPES, branch_robustness_scan
from .reports import (RunManifest, read_dataset, read_spectrum, write_chain,
                      write_dataset, write_json, write_spectrum, write_table)

THREADS_ENV = "NVDEER_THREADS"


class UsageError(ValueError):
    """Bad command-line arguments beyond what argparse catches."""


def _parse_grid_spec(text: str) -> np.ndarray:
    try:
        start, stop, count = text.split(":")
        grid = np.linspace(float(start), float(stop), int(count))
    except ValueError as exc:
        raise UsageError(f"bad grid spec '{text}', expected start:stop:count") from exc
    if grid.size < 1 or float(stop) <= float(start):
        raise UsageError(f"bad grid spec '{text}': need stop > start, count >= 1")
    return TWO_PI * 1e6 * grid


def _load_run_config(args) -> RunConfig:
    if args.preset and args.config:
        raise UsageError("give either --preset or --config, not both")
    if args.preset:
        return load_preset(args.preset)
    if args.config:
        return load_config(args.config)
    raise UsageError("a configuration is required (--preset NAME or --config PATH)")


def _resolve_threads(args) -> int:
    value = args.threads
    if value is None:
        env = os.environ.get(THREADS_ENV)
        value = int(env) if env else 1
    if value == 0:
        value = os.cpu_count() or 1
    if value < 0:
        raise UsageError("--threads must be >= 0")
    return value


def _spectrum_chunk(payload):
    cfg_model, cfg_seq, grid, noise, tumble = payload
    return spectrum(cfg_model, cfg_seq, grid, noise=noise, tumble=tumble)


def _compute_spectrum(cfg: RunConfig, grid: np.ndarray, noise, tumble,
                      threads: int) -> Spectrum:
    if threads <= 1 or grid.size < 2 * threads:
        return spectrum(cfg.model, cfg.sequence, grid, noise=noise, tumble=tumble)
    chunks = np.array_split(grid, threads)
    payloads = [(cfg.model, cfg.sequence, chunk, noise, tumble) for chunk in chunks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(_spectrum_chunk, payloads))
    sx = np.concatenate([p.sx for p in parts])
    meta = parts[0].metadata
    meta["max_trace_drift"] = max(p.metadata.get("max_trace_drift", 0.0) for p in parts)
    return Spectrum(grid, sx, meta)


# --------------------------------------------------------------------------

def cmd_branches(args) -> int:
    if args.isotope == "both":
        isotopes = ["N14", "N15"]
    elif args.isotope in ISOTOPES:
        isotopes = [args.isotope]
    else:
        raise UsageError(f"--isotope must be N14, N15 or both, not '{args.isotope}'")
    try:
        t0, t1, n = args.theta.split(":")
        thetas = np.radians(np.linspace(float(t0), float(t1), int(n)))
        fields = [float(b) for b in args.fields.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad --theta/--fields: {exc}") from exc

    out = Path(args.out)
    manifest = RunManifest("-", __version__, args.seed)
    rows = []
    for iso in isotopes:
        for row in branch_robustness_scan(ISOTOPES[iso], thetas, fields,
                                          method=args.method):
            row["isotope"] = iso
            rows.append(row)
    csv_path = manifest.add(out / "branches.csv")
    write_table(csv_path, {
        "theta_deg": np.array([r["theta_deg"] for r in rows]),
        "Bz_mT": np.array([r["Bz_mT"] for r in rows]),
        "branch_label": np.array([f"{r['isotope']}:{r['branch_label']}" for r in rows]),
        "energy_MHz": np.array([r["energy_MHz"] for r in rows]),
    }, {"method": args.method, **manifest.header_meta()})
    if args.plot:
        from .plots import save_branches
        plot_rows = [dict(r, branch_label=f"{r['isotope']}:{r['branch_label']}")
                     for r in rows]
        save_branches(manifest.add(out / "branches.png"), plot_rows)
    manifest.write(out / "branches-manifest.json")
    print(f"wrote {csv_path}")
    return 0


def cmd_spectrum(args) -> int:
    cfg = _load_run_config(args)
    grid = _parse_grid_spec(args.grid) if args.grid else cfg.grid
    noise = None if args.no_noise else cfg.noise
    tumble = None if args.no_tumble else cfg.tumble
    if args.mode:
        from dataclasses import replace
        cfg = RunConfig(**{**cfg.__dict__, "model": replace(cfg.model, mode=args.mode)})
    threads = _resolve_threads(args)

    spec = _compute_spectrum(cfg, grid, noise, tumble, threads)
    out = Path(args.out)
    manifest = RunManifest(cfg.config_hash(), __version__, args.seed)
    csv_path = manifest.add(out / "spectrum.csv")
    write_spectrum(csv_path, spec, manifest.header_meta())
    if args.plot:
        from .plots import save_spectrum
        save_spectrum(manifest.add(out / "spectrum.png"), spec)
    manifest.write(out / "spectrum-manifest.json")
    print(f"wrote {csv_path}")
    return 0


def cmd_simulate_data(args) -> int:
    cfg = _load_run_config(args)
    spec = read_spectrum(args.spectrum)
    mode = args.mode or cfg.measurement.mode
    n_m = args.shots or cfg.measurement.n_m
    try:
        measurement = MeasurementModel(mode=mode, n_m=n_m, p=cfg.measurement.p)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    seed = args.seed if args.seed is not None else cfg.seed
    dataset = simulate_dataset(spec, measurement, seed=seed)
    dataset = type(dataset)(**{**dataset.__dict__,
                               "bz_mt": cfg.sequence.bz_mt,
                               "omega_rf_rabi": cfg.sequence.omega_rf_rabi})

    out = Path(args.out)
    manifest = RunManifest(cfg.config_hash(), __version__, seed)
    csv_path = manifest.add(out / "dataset.csv")
    write_dataset(csv_path, dataset, manifest.header_meta())
    if args.plot:
        from .plots import save_dataset
        save_dataset(manifest.add(out / "dataset.png"), dataset, true_spectrum=spec)
    manifest.write(out / "dataset-manifest.json")
    print(f"wrote {csv_path}")
    return 0


def cmd_infer(args) -> int:
    cfg = _load_run_config(args)
    dataset = read_dataset(args.data)
    steps = args.steps or cfg.inference_steps
    burn_in = args.burn_in if args.burn_in is not None else cfg.inference_burn_in
    if steps <= burn_in:
        raise UsageError(f"--steps ({steps}) must exceed --burn-in ({burn_in})")
    seed = args.seed if args.seed is not None else cfg.seed

    chain = metropolis(dataset, bounds=cfg.bounds, steps=steps,
                       burn_in=burn_in, seed=seed)

    out = Path(args.out)
    manifest = RunManifest(cfg.config_hash(), __version__, seed)
    chain_path = manifest.add(out / "chain.csv")
    write_chain(chain_path, chain, PARAM_NAMES, manifest.header_meta())

    summaries = {}
    for name in PARAM_NAMES + ("abs_g12",):
        summaries[name] = marginal_summary(chain, name).as_dict()
    summary_payload = {
        "tool_version": __version__,
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "steps": steps,
        "burn_in": burn_in,
        "acceptance_rate": chain.acceptance_rate,
        "proposal_scales": [float(s) for s in chain.proposal_scales],
        "marginals": summaries,
        "d12_nm": {"mean": summaries["d12"]["mean"], "std": summaries["d12"]["std"]},
        "abs_g12_MHz": {
            "mean": summaries["abs_g12"]["mean"] / (TWO_PI * 1e6),
            "std": summaries["abs_g12"]["std"] / (TWO_PI * 1e6),
        },
    }
    summary_path = manifest.add(out / "summary.json")
    write_json(summary_path, summary_payload)
    if args.plot:
        from .plots import save_chain_trace, save_marginal
        save_chain_trace(manifest.add(out / "chain.png"), chain, list(PARAM_NAMES))
        save_marginal(manifest.add(out / "marginal_d12.png"),
                      marginal_summary(chain, "d12"), xlabel="d12 (nm)")
        save_marginal(manifest.add(out / "marginal_g12.png"),
                      marginal_summary(chain, "abs_g12"), scale=TWO_PI * 1e6,
                      xlabel="|g12|/2pi (MHz)")
    manifest.write(out / "infer-manifest.json")
    print(f"wrote {summary_path}")
    print(f"d12 = {summary_payload['d12_nm']['mean']:.3f} "
          f"+- {summary_payload['d12_nm']['std']:.3f} nm, "
          f"|g12|/2pi = {summary_payload['abs_g12_MHz']['mean']:.3f} "
          f"+- {summary_payload['abs_g12_MHz']['std']:.3f} MHz, "
          f"acceptance {chain.acceptance_rate:.1%}")
    return 0


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvdeer",
        description="NV-DEER spectra and inter-label distance inference")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", help="YAML run configuration")
            p.add_argument("--preset", choices=PRESET_NAMES,
                           help="shipped reference configuration")
        p.add_argument("--out", default="nvdeer-out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="random seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker processes (0 = all cores); overrides "
                            f"${THREADS_ENV}")
        p.add_argument("--plot", dest="plot", action="store_true", default=True)
        p.add_argument("--no-plot", dest="plot", action="store_false",
                       help="skip PNG rendering")

    p = sub.add_parser("branches", help="branch energies vs azimuth and field")
    common(p, needs_config=False)
    p.add_argument("--isotope", default="both", help="N14, N15 or both")
    p.add_argument("--theta", default="0:90:91", help="deg, start:stop:count")
    p.add_argument("--fields", default="30", help="comma-separated mT values")
    p.add_argument("--method", default="exact", choices=("exact", "analytic"))
    p.set_defaults(func=cmd_branches)

    p = sub.add_parser("spectrum", help="simulate the NV DEER spectrum")
    common(p)
    p.add_argument("--mode", choices=("reduced", "full"),
                   help="override the configured model tier")
    p.add_argument("--grid", help="MHz sweep as start:stop:count")
    p.add_argument("--no-noise", action="store_true",
                   help="unitary propagation even if the config has noise")
    p.add_argument("--no-tumble", action="store_true",
                   help="skip tumble averaging even if configured")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("simulate-data", help="draw a measurement record")
    common(p)
    p.add_argument("--spectrum", required=True, help="spectrum CSV to sample from")
    p.add_argument("--shots", type=int, help="shots per frequency (overrides config)")
    p.add_argument("--mode", choices=("ideal", "photon"),
                   help="measurement model (overrides config)")
    p.set_defaults(func=cmd_simulate_data)

    p = sub.add_parser("infer", help="Metropolis inference on a record")
    common(p)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--steps", type=int, help="chain length (overrides config)")
    p.add_argument("--burn-in", type=int, help="burn-in steps (overrides config)")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"nvdeer-error kind=config detail={str(exc)!r}", file=sys.stderr)
        return 2
    except (IntegratorError, FloatingPointError) as exc:
        print(f"nvdeer-error kind=numerical detail={str(exc)!r}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
