"""Physical constants for NV / nitroxide spin simulations.

All energies and couplings are stored as angular frequencies (rad/s).
Field-dependent constants are expressed per mT so that e.g.
``gamma_e * Bz`` is directly an angular frequency for ``Bz`` in mT.
Distances are in nm throughout the package.
"""

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi

# SI values used to derive the per-mT constants below.
HBAR_SI = 1.054571817e-34   # J s
KB_SI = 1.380649e-23        # J/K
MU0_OVER_4PI = 1.0e-7       # T m / A


@dataclass(frozen=True)
class PhysicalConstants:
    """Canonical constant set; a single instance is shared per run."""

    nv_zero_field_splitting: float = TWO_PI * 2.87e9     # rad/s
    gamma_e: float = TWO_PI * 28.0e6                     # rad/s per mT
    mu_b: float = TWO_PI * 13.9962449e6                  # rad/s per mT (Bohr magneton / hbar)
    gamma_n_14: float = TWO_PI * 3.077e3                 # rad/s per mT
    gamma_n_15: float = -TWO_PI * 4.316e3                # rad/s per mT
    hbar: float = HBAR_SI
    k_b: float = KB_SI

    @property
    def dipolar_prefactor(self) -> float:
        """mu0 * gamma_e^2 * hbar / (4 pi) in rad/s nm^3.

        Dividing by d^3 (d in nm) gives the dipolar coupling scale as an
        angular frequency.
        """
        gamma_e_per_tesla = self.gamma_e * 1e3
        return MU0_OVER_4PI * gamma_e_per_tesla**2 * self.hbar * 1e27

    def thermal_occupation(self, bz_mt: float, temperature_k: float) -> float:
        """Bose occupation of the label electron Zeeman transition."""
        x = self.hbar * self.gamma_e * bz_mt / (self.k_b * temperature_k)
        return 1.0 / np.expm1(x)

    def validate(self) -> None:
        """Cross-check the dipolar prefactor (~2 pi x 52 MHz nm^3, within 1%)."""
        ref = TWO_PI * 52e6
        rel = abs(self.dipolar_prefactor - ref) / ref
        if rel > 0.01:
            raise ValueError(
                f"dipolar prefactor off by {rel:.2%} from 2pi*52 MHz nm^3"
            )


CONSTANTS = PhysicalConstants()
CONSTANTS.validate()
