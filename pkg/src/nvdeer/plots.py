"""Figure rendering for the CLI report path.

Each function takes already-computed data and writes a PNG next to the
delimited output. Rendering is headless (Agg) and optional; the CSV/JSON
files remain the canonical outputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .constants import TWO_PI  # noqa: E402


def save_branches(path, rows) -> None:
    """Branch energies vs azimuth, one panel per field value."""
    fields = sorted({r["Bz_mT"] for r in rows})
    fig, axes = plt.subplots(1, len(fields), figsize=(4.2 * len(fields), 3.4),
                             sharey=False, squeeze=False)
    for ax, bz in zip(axes[0], fields):
        sel = [r for r in rows if r["Bz_mT"] == bz]
        labels = sorted({r["branch_label"] for r in sel})
        for lab in labels:
            pts = [(r["theta_deg"], r["energy_MHz"]) for r in sel
                   if r["branch_label"] == lab]
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=f"E_{lab}")
        ax.set_xlabel("azimuth (deg)")
        ax.set_title(f"B = {bz:g} mT")
        ax.legend(fontsize=8)
    axes[0][0].set_ylabel("transition energy (MHz)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_spectrum(path, spec, extra=None) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    f_mhz = spec.omega_rf / TWO_PI / 1e6
    ax.plot(f_mhz, spec.sx, "o-", ms=3, lw=1.2, label="simulated")
    if extra is not None:
        ax.plot(extra[0] / TWO_PI / 1e6, extra[1], "--", lw=1.0, label=extra[2])
        ax.legend(fontsize=8)
    ax.set_xlabel("RF frequency (MHz)")
    ax.set_ylabel(r"$\langle\sigma_x\rangle$")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_dataset(path, dataset, true_spectrum=None) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    f_mhz = dataset.omega_rf / TWO_PI / 1e6
    ax.errorbar(f_mhz, dataset.x, yerr=np.sqrt(dataset.sigma_m_sq),
                fmt="o", ms=3.5, capsize=2, label="record")
    if true_spectrum is not None:
        ax.plot(true_spectrum.omega_rf / TWO_PI / 1e6,
                0.5 * (1 + true_spectrum.sx), "-", lw=1.0, label="truth")
        ax.legend(fontsize=8)
    ax.set_xlabel("RF frequency (MHz)")
    ax.set_ylabel("P(+1) estimate")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_chain_trace(path, chain, param_names) -> None:
    fig, axes = plt.subplots(3, 1, figsize=(6.0, 5.4), sharex=True)
    steps = np.arange(chain.steps)
    for ax, name in zip(axes, ("d12", "c_plus", "c_minus")):
        ax.plot(steps, chain.samples[:, param_names.index(name)], lw=0.4)
        ax.axvline(chain.burn_in, color="k", ls=":", lw=0.8)
        ax.set_ylabel(name)
    axes[-1].set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_marginal(path, summary, scale=1.0, xlabel="") -> None:
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    edges = summary.hist_edges / scale
    ax.stairs(summary.hist_counts, edges, fill=True, alpha=0.7)
    ax.axvline(summary.mean / scale, color="k", lw=1.0,
               label=f"mean {summary.mean / scale:.3g}")
    ax.set_xlabel(xlabel or summary.expression)
    ax.set_ylabel("samples")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
