"""Shared fixtures: the expensive dissipative reference spectra are computed
once per session and reused by the acceptance criteria."""

import numpy as np
import pytest

from nvdeer.config import load_preset
from nvdeer.deer import spectrum
from nvdeer.inference import MeasurementModel, simulate_dataset

DATASET_SEED = 20260809


def _preset_spectrum(name):
    cfg = load_preset(name)
    return spectrum(cfg.model, cfg.sequence, cfg.grid,
                    noise=cfg.noise, tumble=cfg.tumble)


@pytest.fixture(scope="session")
def fig3a_spectrum():
    return _preset_spectrum("fig3a")


@pytest.fixture(scope="session")
def fig3b_spectrum():
    return _preset_spectrum("fig3b")


@pytest.fixture(scope="session")
def paper_dataset(fig3a_spectrum):
    return simulate_dataset(fig3a_spectrum,
                            MeasurementModel(mode="ideal", n_m=20000),
                            seed=DATASET_SEED)
