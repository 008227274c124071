"""Run-configuration files: schema, validation and shipped presets.

Configs are YAML with a fixed key set per section; unknown keys are
rejected so typos fail loudly instead of silently falling back to
defaults. Angles are degrees, distances nm, frequencies in the units
named by each key. Everything converts to package-internal units
(radians, rad/s) at load time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .constants import TWO_PI
from .deer import NoiseParams, SequenceParams, SystemModel
from .geometry import DEFAULT_PIVOT, LabGeometry, TumbleDistribution
from .inference import MeasurementModel, PriorBounds
from .nitroxide import ISOTOPES, NitroxideConfig
from .operators import RotationAngles

PRESET_NAMES = ("fig2b", "fig3a", "fig3b", "fig3c", "figS4")


class ConfigError(ValueError):
    """Malformed or unknown configuration content."""


_LABEL_KEYS = {"isotope", "theta_deg", "phi_deg", "position_nm"}
_GEOMETRY_KEYS = {"pivot_nm"}
_SEQUENCE_KEYS = {"tau_free_us", "rf_rabi_khz", "mw_pulses", "field_mt"}
_NOISE_KEYS = {"t2_nv_us", "gamma_label_hz", "temperature_k"}
_TUMBLE_KEYS = {"sigma_delta_deg", "nodes", "mode"}
_MODEL_KEYS = {"mode", "flipflop"}
_MEASUREMENT_KEYS = {"mode", "shots", "photon_efficiency"}
_INFERENCE_KEYS = {"steps", "burn_in", "seed", "bounds"}
_BOUNDS_KEYS = {"c_plus", "c_minus", "theta_eq_deg", "phi_eq_deg",
                "a_beta", "phi_beta_deg", "d12_nm", "sigma_delta_deg"}
_GRID_KEYS = {"start_mhz", "stop_mhz", "count"}
_TOP_KEYS = {"labels", "geometry", "sequence", "noise", "tumble", "model",
             "measurement", "inference", "grid"}


def _check_keys(section: dict, allowed: set, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"section '{where}' must be a mapping")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key '{where}.{sorted(unknown)[0]}'")


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration bundle, ready to build model objects."""

    raw: dict
    model: SystemModel
    sequence: SequenceParams
    noise: NoiseParams | None
    tumble: TumbleDistribution | None
    measurement: MeasurementModel
    bounds: PriorBounds
    inference_steps: int
    inference_burn_in: int
    seed: int
    grid: np.ndarray              # rad/s

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _parse_label(entry: dict, index: int) -> NitroxideConfig:
    _check_keys(entry, _LABEL_KEYS, f"labels[{index}]")
    for key in ("isotope", "theta_deg", "phi_deg", "position_nm"):
        if key not in entry:
            raise ConfigError(f"labels[{index}] missing '{key}'")
    iso_name = str(entry["isotope"])
    if iso_name not in ISOTOPES:
        raise ConfigError(f"labels[{index}].isotope must be one of {sorted(ISOTOPES)}")
    pos = np.asarray(entry["position_nm"], dtype=float)
    return NitroxideConfig(
        ISOTOPES[iso_name],
        RotationAngles(np.radians(float(entry["theta_deg"])),
                       np.radians(float(entry["phi_deg"]))),
        pos,
    )


def _parse_grid(section: dict | None) -> np.ndarray:
    if section is None:
        section = {}
    _check_keys(section, _GRID_KEYS, "grid")
    start = float(section.get("start_mhz", 839.0))
    stop = float(section.get("stop_mhz", 843.0))
    count = int(section.get("count", 25))
    if count < 1 or stop <= start:
        raise ConfigError("grid needs stop_mhz > start_mhz and count >= 1")
    return TWO_PI * 1e6 * np.linspace(start, stop, count)


def _parse_bounds(section: dict | None) -> PriorBounds:
    base = PriorBounds()
    if not section:
        return base
    _check_keys(section, _BOUNDS_KEYS, "inference.bounds")
    lo = base.lo.copy()
    hi = base.hi.copy()
    index = {"c_plus": 0, "c_minus": 1, "theta_eq_deg": 2, "phi_eq_deg": 3,
             "a_beta": 4, "phi_beta_deg": 5, "d12_nm": 6, "sigma_delta_deg": 7}
    degrees = {"theta_eq_deg", "phi_eq_deg", "phi_beta_deg", "sigma_delta_deg"}
    for key, pair in section.items():
        if (not isinstance(pair, (list, tuple))) or len(pair) != 2:
            raise ConfigError(f"inference.bounds.{key} must be [lo, hi]")
        val_lo, val_hi = float(pair[0]), float(pair[1])
        if key in degrees:
            val_lo, val_hi = np.radians(val_lo), np.radians(val_hi)
        lo[index[key]] = val_lo
        hi[index[key]] = val_hi
    return PriorBounds(lo, hi)


def parse_config(data: dict) -> RunConfig:
    """Validate a raw mapping (fail-closed) and build the model objects."""
    _check_keys(data, _TOP_KEYS, "<top>")
    labels_raw = data.get("labels")
    if not isinstance(labels_raw, list) or len(labels_raw) != 2:
        raise ConfigError("config needs a 'labels' list with exactly two entries")
    labels = tuple(_parse_label(entry, i) for i, entry in enumerate(labels_raw))

    geo_raw = data.get("geometry") or {}
    _check_keys(geo_raw, _GEOMETRY_KEYS, "geometry")
    pivot = np.asarray(geo_raw.get("pivot_nm", DEFAULT_PIVOT), dtype=float)
    geometry = LabGeometry(labels[0].position, labels[1].position, pivot)

    seq_raw = data.get("sequence") or {}
    _check_keys(seq_raw, _SEQUENCE_KEYS, "sequence")
    rf_rabi = TWO_PI * 1e3 * float(seq_raw.get("rf_rabi_khz", 250.0))
    n_mw = int(seq_raw.get("mw_pulses", 31))
    sequence = SequenceParams(
        tau_free=1e-6 * float(seq_raw.get("tau_free_us", 1.3)),
        omega_rf_rabi=rf_rabi,
        omega_mw_rabi=n_mw * rf_rabi,
        bz_mt=float(seq_raw.get("field_mt", 30.0)),
        n_pi_mw=n_mw,
    )

    noise = None
    if data.get("noise") is not None:
        noise_raw = data["noise"]
        _check_keys(noise_raw, _NOISE_KEYS, "noise")
        noise = NoiseParams(
            t2_nv=1e-6 * float(noise_raw.get("t2_nv_us", 20.0)),
            gamma_label=TWO_PI * float(noise_raw.get("gamma_label_hz", 2.68)),
            temperature_k=float(noise_raw.get("temperature_k", 300.0)),
        )

    tumble = None
    if data.get("tumble") is not None:
        tumble_raw = data["tumble"]
        _check_keys(tumble_raw, _TUMBLE_KEYS, "tumble")
        tumble = TumbleDistribution(
            sigma_delta=np.radians(float(tumble_raw.get("sigma_delta_deg", 6.25))),
            nodes=int(tumble_raw.get("nodes", 15)),
            mode=str(tumble_raw.get("mode", "rigid")),
        )

    model_raw = data.get("model") or {}
    _check_keys(model_raw, _MODEL_KEYS, "model")
    try:
        model = SystemModel(
            geometry, labels,
            mode=str(model_raw.get("mode", "reduced")),
            flipflop=str(model_raw.get("flipflop", "auto")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    meas_raw = data.get("measurement") or {}
    _check_keys(meas_raw, _MEASUREMENT_KEYS, "measurement")
    try:
        measurement = MeasurementModel(
            mode=str(meas_raw.get("mode", "ideal")),
            n_m=int(meas_raw.get("shots", 20000)),
            p=float(meas_raw.get("photon_efficiency", 0.12)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    inf_raw = data.get("inference") or {}
    _check_keys(inf_raw, _INFERENCE_KEYS, "inference")
    steps = int(inf_raw.get("steps", 120_000))
    burn_in = int(inf_raw.get("burn_in", 10_000))
    if steps <= burn_in:
        raise ConfigError("inference.steps must exceed inference.burn_in")

    return RunConfig(
        raw=data,
        model=model,
        sequence=sequence,
        noise=noise,
        tumble=tumble,
        measurement=measurement,
        bounds=_parse_bounds(inf_raw.get("bounds")),
        inference_steps=steps,
        inference_burn_in=burn_in,
        seed=int(inf_raw.get("seed", 1)),
        grid=_parse_grid(data.get("grid")),
    )


def load_config(path: str | Path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(data)


def load_preset(name: str) -> RunConfig:
    """Load one of the shipped reference configurations."""
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset '{name}' (have {', '.join(PRESET_NAMES)})")
    ref = resources.files("nvdeer").joinpath(f"presets/{name}.yaml")
    data = yaml.safe_load(ref.read_text(encoding="utf-8"))
    return parse_config(data)
