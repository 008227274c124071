"""Dipolar couplings from geometry and the rigid molecular-tumbling model.

Positions are in nm with the NV at the origin and the magnetic field
along lab z. Tumbling is a small rigid rotation of the whole molecule by
an angle delta about an axis parallel to lab x through a pivot point;
delta is Gaussian with zero mean, averaged deterministically with
Gauss-Hermite quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import CONSTANTS, PhysicalConstants
from .operators import RotationAngles, rotation_matrix

MIN_DISTANCE_NM = 0.1   # guards the d^-3 divergence

DEFAULT_PIVOT = (3.0, 0.0, 6.0)


class DegenerateGeometryError(ValueError):
    """Distances too small for the point-dipole coupling to make sense."""


@dataclass(frozen=True)
class LabGeometry:
    """Label positions and tumbling pivot; the tumble axis is lab x."""

    r1: np.ndarray
    r2: np.ndarray
    pivot: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_PIVOT))

    def __post_init__(self):
        for name in ("r1", "r2", "pivot"):
            vec = np.asarray(getattr(self, name), dtype=float)
            if vec.shape != (3,):
                raise ValueError(f"{name} must be a 3-vector")
            object.__setattr__(self, name, vec)
        for name, vec in (("r1", self.r1), ("r2", self.r2), ("r1-r2", self.r1 - self.r2)):
            if np.linalg.norm(vec) < MIN_DISTANCE_NM:
                raise DegenerateGeometryError(f"|{name}| below {MIN_DISTANCE_NM} nm")

    @property
    def d12(self) -> float:
        return float(np.linalg.norm(self.r1 - self.r2))


@dataclass(frozen=True)
class TumbleDistribution:
    """Gaussian rotation-angle ensemble and its quadrature resolution."""

    sigma_delta: float            # radians
    nodes: int = 15
    mode: str = "rigid"           # "rigid" or "azimuth_only"

    def __post_init__(self):
        if self.sigma_delta < 0:
            raise ValueError("sigma_delta must be >= 0")
        if self.nodes < 7 or self.nodes % 2 == 0:
            raise ValueError("node count must be odd and >= 7")
        if self.mode not in ("rigid", "azimuth_only"):
            raise ValueError(f"unknown tumble mode {self.mode!r}")


def nv_label_coupling(r, consts: PhysicalConstants = CONSTANTS) -> np.ndarray:
    """Dipolar coupling vector of the NV to a label electron at position r."""
    r = np.asarray(r, dtype=float)
    d = np.linalg.norm(r)
    if d < MIN_DISTANCE_NM:
        raise DegenerateGeometryError(f"|r|={d:.3g} nm below guard")
    zhat = np.array([0.0, 0.0, 1.0])
    return consts.dipolar_prefactor / d**3 * (zhat - 3.0 * r[2] * r / d**2)


def inter_label_coupling(r1, r2, consts: PhysicalConstants = CONSTANTS) -> tuple[float, float]:
    """Signed label-label coupling g12 and the field angle beta.

    beta is folded to [0, pi/2]; only cos^2(beta) enters the coupling.
    """
    r12 = np.asarray(r1, dtype=float) - np.asarray(r2, dtype=float)
    d = np.linalg.norm(r12)
    if d < MIN_DISTANCE_NM:
        raise DegenerateGeometryError(f"d12={d:.3g} nm below guard")
    cos_beta = r12[2] / d
    g12 = consts.dipolar_prefactor / d**3 * (1.0 - 3.0 * cos_beta**2)
    beta = float(np.arccos(np.clip(abs(cos_beta), 0.0, 1.0)))
    return float(g12), beta


def beta_profile(r1, r2) -> tuple[float, float]:
    """Amplitude and phase of cos(beta) under x-axis tumbling.

    cos(beta(delta)) = A_beta * cos(delta + phi_beta) for a rigid rotation
    of the inter-label vector about lab x; the x component of r12 drops
    out of beta entirely.
    """
    r12 = np.asarray(r1, dtype=float) - np.asarray(r2, dtype=float)
    d = np.linalg.norm(r12)
    if d < MIN_DISTANCE_NM:
        raise DegenerateGeometryError("labels too close")
    a_beta = float(np.hypot(r12[1], r12[2]) / d)
    phi_beta = float(np.arctan2(-r12[1], r12[2]))
    return a_beta, phi_beta


def rotation_about_x(delta: float) -> np.ndarray:
    c, s = np.cos(delta), np.sin(delta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass(frozen=True)
class TumbledState:
    """Molecule configuration after a rigid tumble by delta."""

    positions: tuple[np.ndarray, np.ndarray]
    frames: tuple[np.ndarray, np.ndarray]

    def azimuths(self) -> tuple[float, float]:
        """Azimuth of each principal z-axis relative to lab z."""
        out = []
        for m in self.frames:
            out.append(float(np.arccos(np.clip(m[2, 2], -1.0, 1.0))))
        return tuple(out)

    def orientation_angles(self) -> tuple[RotationAngles, RotationAngles]:
        """(theta, phi) of each principal z-axis after the tumble."""
        out = []
        for m in self.frames:
            z = m[:, 2]
            theta = float(np.arccos(np.clip(z[2], -1.0, 1.0)))
            phi = float(np.arctan2(z[1], z[0])) if np.hypot(z[0], z[1]) > 1e-12 else 0.0
            out.append(RotationAngles(theta, phi))
        return tuple(out)


def apply_tumble(geometry: LabGeometry,
                 orientations: tuple[RotationAngles, RotationAngles],
                 delta: float) -> TumbledState:
    """Rigidly rotate positions and principal frames about (pivot, x-hat)."""
    rot = rotation_about_x(delta)
    positions = tuple(geometry.pivot + rot @ (r - geometry.pivot)
                      for r in (geometry.r1, geometry.r2))
    frames = tuple(rot @ rotation_matrix(o.theta, o.phi) for o in orientations)
    return TumbledState(positions, frames)


def azimuth_after_tumble(theta_eq, phi_eq, delta):
    """Closed-form azimuth of a principal axis after tumbling by delta."""
    c = (np.cos(delta) * np.cos(theta_eq)
         + np.sin(delta) * np.sin(theta_eq) * np.sin(phi_eq))
    return np.arccos(np.clip(c, -1.0, 1.0))


def gauss_hermite_deltas(dist: TumbleDistribution) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes and normalized weights for delta ~ N(0, sigma^2)."""
    x, w = np.polynomial.hermite.hermgauss(dist.nodes)
    return np.sqrt(2.0) * dist.sigma_delta * x, w / np.sqrt(np.pi)


def gauss_average(f, dist: TumbleDistribution):
    """Deterministic Gaussian ensemble average of f(delta)."""
    deltas, weights = gauss_hermite_deltas(dist)
    values = [np.asarray(f(d)) for d in deltas]
    return sum(w * v for w, v in zip(weights, values))


def sample_deltas(dist: TumbleDistribution, n: int, seed: int) -> np.ndarray:
    """Monte Carlo deltas for validating the quadrature average."""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, dist.sigma_delta, size=n)
