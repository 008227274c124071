"""NV-center DEER toolkit for nitroxide spin-label pairs.

Simulates the double-resonance pulse sequence of an NV sensor coupled to
two nitroxide labels (including decoherence and molecular tumbling) and
recovers the inter-label distance from simulated measurement records via
Metropolis sampling of a closed-form line-shape model.
"""

from .constants import CONSTANTS, TWO_PI, PhysicalConstants
from .deer import (IntegratorError, NoiseParams, SequenceParams, Spectrum,
                   SystemModel, build_segments, run_lindblad, run_unitary,
                   run_unitary_cosine, spectrum)
from .geometry import (LabGeometry, TumbleDistribution, apply_tumble,
                       azimuth_after_tumble, beta_profile, gauss_average,
                       inter_label_coupling, nv_label_coupling)
from .inference import (Chain, Dataset, MeasurementModel, PriorBounds,
                        experiment_time, log_likelihood, marginal_summary,
                        metropolis, photon_shot_equivalence, simulate_dataset)
from .nitroxide import (ISOTOPES, N14, N15, BranchSet, IsotopeParams,
                        NitroxideConfig, branch_energies_exact,
                        branch_robustness_scan, branches_analytic,
                        isotope_orthogonality_margin, nitroxide_hamiltonian,
                        split_branch)
from .operators import (Operator, RotationAngles, embed, propagator,
                        rotate_tensor, spin_operators)
from .response import (ModelParams, averaged_spectrum, coherent_contrast,
                       g12_from_params, spectrum_point)

__version__ = "0.1.0"
