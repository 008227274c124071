"""Closed-form single-target spectrum model used for inference.

The NV response near the central branch of one 14N label is a baseline
minus two sinc-squared dips whose centers sit at E0(theta) -+ g12/2 and
whose width is set by the RF Rabi frequency. Tumbling moves both the
azimuth theta and the inter-label angle beta, so the tumble-averaged
line shape carries information beyond the bare splitting; that is what
lets the distance and the geometry be separated during inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .constants import CONSTANTS, TWO_PI, PhysicalConstants
from .geometry import TumbleDistribution, azimuth_after_tumble, gauss_hermite_deltas
from .nitroxide import N14, IsotopeParams, branch_energies_vec

DEFAULT_MODEL_NODES = 21   # denser than the simulator: the model is cheap

PARAM_NAMES = ("c_plus", "c_minus", "theta_eq", "phi_eq",
               "a_beta", "phi_beta", "d12", "sigma_delta")


@dataclass(frozen=True)
class ModelParams:
    """Eight adjustable line-shape parameters plus fixed context.

    The sampled parameters are the contrasts, the equilibrium orientation
    of the target label, the two beta-profile constants, the inter-label
    distance (nm), and the tumble spread (radians). The baseline s0 is
    calibrated, never sampled; the RF Rabi frequency and field come from
    the sequence.
    """

    c_plus: float
    c_minus: float
    theta_eq: float
    phi_eq: float
    a_beta: float
    phi_beta: float
    d12: float
    sigma_delta: float
    s0: float = 1.0
    omega_rf_rabi: float = TWO_PI * 250e3
    bz_mt: float = 30.0
    isotope: IsotopeParams = field(default=N14)

    def __post_init__(self):
        if self.d12 <= 0.5:
            raise ValueError("d12 must exceed 0.5 nm")
        if self.sigma_delta < 0:
            raise ValueError("sigma_delta must be >= 0")
        if not (0 <= self.a_beta <= 1):
            raise ValueError("a_beta must lie in [0, 1]")
        if not (0 <= self.c_plus <= 1 and 0 <= self.c_minus <= 1):
            raise ValueError("contrasts must lie in [0, 1]")

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES])

    @classmethod
    def from_array(cls, values, **fixed) -> "ModelParams":
        kw = dict(zip(PARAM_NAMES, map(float, values)))
        kw.update(fixed)
        return cls(**kw)


def g12_from_params(d12: float, a_beta: float, phi_beta: float,
                    consts: PhysicalConstants = CONSTANTS):
    """Inter-label coupling implied by (d12, A_beta, phi_beta)."""
    return (consts.dipolar_prefactor / np.asarray(d12) ** 3
            * (1.0 - 3.0 * np.asarray(a_beta) ** 2 * np.cos(phi_beta) ** 2))


def coherent_contrast(a_z: float, tau_free: float) -> float:
    """Dip contrast of the noiseless sequence for one 14N target.

    1/3 is the population of the resonant dressed nuclear state;
    sin^2(a_z tau/2) is the echo contrast lost when the label flips.
    """
    return np.sin(0.5 * a_z * tau_free) ** 2 / 3.0


def _dips(omega_rf, e0, g12, params: ModelParams):
    """Baseline minus both sinc-squared dip terms, vectorized.

    omega_rf, e0, g12 broadcast against each other; detuning such that
    Omega_s is an integer multiple of 2 Omega_RF zeroes a term exactly.
    """
    omega = params.omega_rf_rabi
    out = params.s0 * np.ones(np.broadcast(omega_rf, e0, g12).shape)
    for sign, contrast in ((+1.0, params.c_plus), (-1.0, params.c_minus)):
        det = omega_rf - e0 + sign * 0.5 * g12
        osq = omega**2 + det**2
        os_ = np.sqrt(osq)
        out = out - contrast * (omega**2 / osq) * np.sin(0.5 * np.pi * os_ / omega) ** 2
    return out


def spectrum_point(omega_rf, theta: float, beta: float, params: ModelParams):
    """Model response at one orientation: S(omega_RF, theta, beta)."""
    e0 = branch_energies_vec(params.isotope, np.asarray(theta), params.bz_mt)["0"]
    g12 = (CONSTANTS.dipolar_prefactor / params.d12**3
           * (1.0 - 3.0 * np.cos(beta) ** 2))
    return _dips(np.asarray(omega_rf, dtype=float), e0, g12, params)


def averaged_spectrum(omega_rf, params: ModelParams,
                      nodes: int = DEFAULT_MODEL_NODES):
    """Tumble-averaged model spectrum over a frequency array.

    theta(delta) follows the rigid-rotation closed form and
    cos^2(beta(delta)) = A_beta^2 cos^2(delta + phi_beta); the Gaussian
    average is a fixed-node Gauss-Hermite sum, deterministic for a given
    node count.
    """
    omega_rf = np.atleast_1d(np.asarray(omega_rf, dtype=float))
    if params.sigma_delta == 0.0:
        deltas, weights = np.array([0.0]), np.array([1.0])
    else:
        dist = TumbleDistribution(params.sigma_delta, nodes=nodes)
        deltas, weights = gauss_hermite_deltas(dist)
    thetas = azimuth_after_tumble(params.theta_eq, params.phi_eq, deltas)
    e0 = branch_energies_vec(params.isotope, thetas, params.bz_mt)["0"]
    cos2beta = params.a_beta**2 * np.cos(deltas + params.phi_beta) ** 2
    g12 = CONSTANTS.dipolar_prefactor / params.d12**3 * (1.0 - 3.0 * cos2beta)
    vals = _dips(omega_rf[:, None], e0[None, :], g12[None, :], params)
    return vals @ weights
