"""Delimited outputs, dataset/chain files and the run manifest.

Every file is written atomically (temp file + rename) and carries '#'
header lines with the tool version, the config hash and run metadata,
so outputs are traceable to the configuration that produced them.
"""

from __future__ import annotations

import json
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .constants import TWO_PI
from .deer import Spectrum
from .inference import Chain, Dataset, MeasurementModel


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header_lines(meta: dict) -> str:
    lines = []
    for key in sorted(meta):
        value = meta[key]
        if isinstance(value, float):
            value = repr(value)
        lines.append(f"# {key}: {value}")
    return "\n".join(lines)


def write_table(path: str | Path, columns: dict[str, np.ndarray], meta: dict) -> None:
    """CSV with named columns and commented metadata header."""
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    n_rows = len(arrays[0])
    if any(len(a) != n_rows for a in arrays):
        raise ValueError("all columns must have equal length")
    body = [",".join(names)]
    for i in range(n_rows):
        body.append(",".join(_format_cell(a[i]) for a in arrays))
    _write_atomic(path, _header_lines(meta) + "\n" + "\n".join(body) + "\n")


def _format_cell(value) -> str:
    if isinstance(value, (str, np.str_)):
        return str(value)
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    return repr(float(value))


def read_table(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Inverse of write_table; string columns stay strings."""
    meta = {}
    rows = []
    header = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if ":" in line:
                    key, _, value = line[1:].partition(":")
                    meta[key.strip()] = value.strip()
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append(line.split(","))
    if header is None:
        raise ValueError(f"{path}: no table header found")
    columns = {}
    for j, name in enumerate(header):
        cells = [r[j] for r in rows]
        try:
            columns[name] = np.array([float(c) for c in cells])
        except ValueError:
            columns[name] = np.array(cells)
    return columns, meta


def write_spectrum(path: str | Path, spec: Spectrum, meta: dict) -> None:
    merged = dict(spec.metadata)
    merged.update(meta)
    write_table(path, {
        "omega_rf_MHz": spec.omega_rf / TWO_PI / 1e6,
        "sx_mean": spec.sx,
    }, merged)


def read_spectrum(path: str | Path) -> Spectrum:
    columns, meta = read_table(path)
    return Spectrum(TWO_PI * 1e6 * columns["omega_rf_MHz"], columns["sx_mean"], meta)


def write_dataset(path: str | Path, dataset: Dataset, meta: dict) -> None:
    merged = {
        "measurement_mode": dataset.measurement.mode,
        "shots_per_point": dataset.measurement.n_m,
        "photon_efficiency": dataset.measurement.p,
        "sigma_m_sq": dataset.sigma_m_sq,
        "s0_calibrated": dataset.s0,
        "seed": dataset.seed,
        "bz_mT": dataset.bz_mt,
        "rf_rabi_kHz": dataset.omega_rf_rabi / TWO_PI / 1e3,
    }
    merged.update(meta)
    write_table(path, {
        "omega_rf_MHz": dataset.omega_rf / TWO_PI / 1e6,
        "x": dataset.x,
    }, merged)


def read_dataset(path: str | Path) -> Dataset:
    columns, meta = read_table(path)
    measurement = MeasurementModel(
        mode=meta.get("measurement_mode", "ideal"),
        n_m=int(meta.get("shots_per_point", "20000")),
        p=float(meta.get("photon_efficiency", "0.12")),
    )
    seed = meta.get("seed")
    return Dataset(
        omega_rf=TWO_PI * 1e6 * columns["omega_rf_MHz"],
        x=columns["x"],
        measurement=measurement,
        sigma_m_sq=float(meta["sigma_m_sq"]),
        s0=float(meta["s0_calibrated"]),
        seed=None if seed in (None, "None") else int(seed),
        bz_mt=float(meta.get("bz_mT", "30.0")),
        omega_rf_rabi=TWO_PI * 1e3 * float(meta.get("rf_rabi_kHz", "250.0")),
    )


def write_chain(path: str | Path, chain: Chain, param_names, meta: dict) -> None:
    columns = {name: chain.samples[:, i] for i, name in enumerate(param_names)}
    columns["log_posterior"] = chain.log_post
    columns["accepted"] = chain.accepted.astype(int)
    merged = {
        "seed": chain.seed,
        "burn_in": chain.burn_in,
        "acceptance_rate": chain.acceptance_rate,
        "proposal_scales": json.dumps([float(s) for s in chain.proposal_scales]),
    }
    merged.update(meta)
    write_table(path, columns, merged)


def write_json(path: str | Path, payload: dict) -> None:
    _write_atomic(Path(path), json.dumps(payload, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


class RunManifest:
    """Records what a CLI invocation produced and from which config."""

    def __init__(self, config_hash: str, tool_version: str, seed) -> None:
        self.config_hash = config_hash
        self.tool_version = tool_version
        self.seed = seed
        self.started_at = datetime.now(timezone.utc).isoformat()
        self.outputs: list[str] = []

    def add(self, path: str | Path) -> Path:
        self.outputs.append(str(path))
        return Path(path)

    def header_meta(self) -> dict:
        return {"config_hash": self.config_hash, "tool_version": self.tool_version}

    def write(self, path: str | Path) -> None:
        write_json(path, {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "seed": self.seed,
            "started_at": self.started_at,
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "outputs": self.outputs,
        })
