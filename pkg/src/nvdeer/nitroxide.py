"""Nitroxide spin-label level structure.

A label is one electron (spin 1/2) hyperfine-coupled to its host nitrogen
(14N: spin 1 with quadrupole, 15N: spin 1/2). The electron transition
energy splits into branches, one per dressed nuclear state. Three routes
to the branch energies live here:

* closed-form expressions (``branches_analytic``), valid above ~5 mT,
  with a second-order hyperfine correction on the central 14N branch;
* numerical diagonalization of the first-order dressing operator
  (``dressed_nuclear_levels``), an independent check of the closed forms;
* full diagonalization of the complete label Hamiltonian including
  quadrupole and nuclear Zeeman terms (``branch_energies_exact``), with
  eigenstates paired into transitions by electron character and by
  largest overlap with the dressed nuclear basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .constants import CONSTANTS, TWO_PI, PhysicalConstants
from .operators import RotationAngles, rotation_matrix, spin_matrices

G_PERP_DEFAULT = 2.007
G_PAR_DEFAULT = 2.002

MIN_ANALYTIC_FIELD_MT = 5.0


class PerturbativeRangeError(ValueError):
    """Field too low for the closed-form branch expressions."""


@dataclass(frozen=True)
class IsotopeParams:
    """Hyperfine/quadrupole parameter set for one nitrogen isotope."""

    isotope: str
    nuclear_dim: int
    a_perp: float           # rad/s
    a_par: float            # rad/s
    q_diag: tuple[float, float, float]  # rad/s, principal values
    gamma_n: float           # rad/s per mT

    def __post_init__(self):
        qmax = max(abs(q) for q in self.q_diag)
        if qmax > 0 and abs(sum(self.q_diag)) > 0.01 * qmax:
            raise ValueError("quadrupole principal values must be traceless")

    @property
    def nuclear_spin(self) -> float:
        return (self.nuclear_dim - 1) / 2.0

    @property
    def branch_labels(self) -> tuple[str, ...]:
        return ("1", "0", "-1") if self.nuclear_dim == 3 else ("1/2", "-1/2")


N14 = IsotopeParams(
    isotope="N14",
    nuclear_dim=3,
    a_perp=TWO_PI * 14.7e6,
    a_par=TWO_PI * 101.4e6,
    q_diag=(TWO_PI * 1.26e6, TWO_PI * 0.53e6, -TWO_PI * 1.79e6),
    gamma_n=CONSTANTS.gamma_n_14,
)

N15 = IsotopeParams(
    isotope="N15",
    nuclear_dim=2,
    a_perp=TWO_PI * 27e6,
    a_par=TWO_PI * 141e6,
    q_diag=(0.0, 0.0, 0.0),
    gamma_n=CONSTANTS.gamma_n_15,
)

ISOTOPES = {"N14": N14, "N15": N15}


@dataclass(frozen=True)
class NitroxideConfig:
    """One spin label: isotope, orientation and position (nm, NV at origin)."""

    isotope: IsotopeParams
    orientation: RotationAngles
    position: np.ndarray
    g_perp: float = G_PERP_DEFAULT
    g_par: float = G_PAR_DEFAULT

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        object.__setattr__(self, "position", pos)
        if pos.shape != (3,):
            raise ValueError("position must be a 3-vector")
        if np.linalg.norm(pos) <= 0.0:
            raise ValueError("label cannot sit on the NV")

    def frame(self) -> np.ndarray:
        """Principal-to-lab rotation matrix for this orientation."""
        return rotation_matrix(self.orientation.theta, self.orientation.phi)


@dataclass(frozen=True)
class BranchSet:
    """Electron transition energies keyed by dressed nuclear state."""

    isotope: str
    energies: dict[str, float]   # rad/s

    def __getitem__(self, label: str) -> float:
        return self.energies[label]


def lande_factor(theta, g_perp: float = G_PERP_DEFAULT, g_par: float = G_PAR_DEFAULT):
    """Effective electron g-factor G(theta) along the field axis."""
    return 0.5 * ((g_par - g_perp) * np.cos(2 * np.asarray(theta)) + g_perp + g_par)


def branch_shift(iso: IsotopeParams, theta):
    """Hyperfine shift of the outer branches from the Landé center.

    Equals A_par at theta=0 and A_perp at theta=pi/2 for 14N; half of
    that for 15N (spin-1/2 nucleus).
    """
    ap, al = iso.a_perp, iso.a_par
    rad = np.sqrt((al**2 - ap**2) * np.cos(2 * np.asarray(theta)) + ap**2 + al**2)
    return rad / np.sqrt(2.0) if iso.nuclear_dim == 3 else rad / (2.0 * np.sqrt(2.0))


def central_branch_correction(iso: IsotopeParams, theta, zeeman):
    """Second-order hyperfine correction to the central 14N branch."""
    ap, al = iso.a_perp, iso.a_par
    s2 = np.sin(np.asarray(theta)) ** 2
    num = 2.0 * (ap * al) ** 2 + (ap**4 - (ap * al) ** 2) * s2
    den = ap**2 * s2 + al**2 * (1.0 - s2)
    return num / den / (2.0 * zeeman)


def _check_field(iso: IsotopeParams, bz_mt: float, consts: PhysicalConstants) -> None:
    if bz_mt < MIN_ANALYTIC_FIELD_MT:
        raise PerturbativeRangeError(
            f"Bz={bz_mt} mT is below the {MIN_ANALYTIC_FIELD_MT} mT floor for the "
            "closed-form branches; the hyperfine coupling is no longer a small "
            "perturbation of the electron Zeeman energy"
        )
    if consts.mu_b * bz_mt * G_PAR_DEFAULT <= iso.a_par:
        raise PerturbativeRangeError(
            f"Bz={bz_mt} mT: electron Zeeman energy below the parallel hyperfine "
            "coupling; closed-form branches invalid"
        )


def branch_energies_vec(iso: IsotopeParams, theta, bz_mt: float,
                        consts: PhysicalConstants = CONSTANTS) -> dict[str, np.ndarray]:
    """Vectorized closed-form branch energies over an array of azimuths."""
    _check_field(iso, bz_mt, consts)
    theta = np.asarray(theta, dtype=float)
    zeeman = consts.mu_b * bz_mt * lande_factor(theta)
    shift = branch_shift(iso, theta)
    if iso.nuclear_dim == 3:
        e0 = zeeman + central_branch_correction(iso, theta, zeeman)
        return {"1": zeeman + shift, "0": e0, "-1": zeeman - shift}
    return {"1/2": zeeman + shift, "-1/2": zeeman - shift}


def branches_analytic(iso: IsotopeParams, theta: float, bz_mt: float,
                      consts: PhysicalConstants = CONSTANTS) -> BranchSet:
    """Closed-form branch energies at a single azimuth."""
    vec = branch_energies_vec(iso, float(theta), bz_mt, consts)
    return BranchSet(iso.isotope, {k: float(v) for k, v in vec.items()})


def dressing_operator(iso: IsotopeParams, theta: float) -> np.ndarray:
    """First-order nuclear dressing operator whose eigenvalues shift Jz."""
    ap, al = iso.a_perp, iso.a_par
    cz = 0.5 * (al + ap) + 0.5 * (al - ap) * np.cos(2 * theta)
    cx = 0.5 * (al - ap) * np.sin(2 * theta)
    ix, _, iz, _, _ = spin_matrices(iso.nuclear_spin)
    return cz * iz + cx * ix


def dressed_nuclear_levels(iso: IsotopeParams, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Numerically dressed nuclear states, ordered by descending eigenvalue.

    The descending order continues the theta=0 labels (m = 1, 0, -1 for
    14N; +-1/2 for 15N) adiabatically: the dressing operator's spectrum
    never crosses as theta varies.
    """
    w, v = np.linalg.eigh(dressing_operator(iso, theta))
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def nitroxide_hamiltonian_matrix(cfg: NitroxideConfig, bz_mt: float,
                                 frame: np.ndarray | None = None,
                                 include_quadrupole: bool = True,
                                 include_nuclear_zeeman: bool = True,
                                 consts: PhysicalConstants = CONSTANTS) -> np.ndarray:
    """Raw label Hamiltonian on electron (x) nucleus, lab frame.

    `frame` overrides the orientation-derived principal-to-lab rotation;
    tumbled states pass the rigidly rotated frame here (the quadrupole
    tensor is triaxial, so the full frame matters, not just the azimuth).
    """
    if bz_mt <= 0:
        raise ValueError("Bz must be positive")
    iso = cfg.isotope
    r = cfg.frame() if frame is None else np.asarray(frame, dtype=float)
    g_lab = r @ np.diag([cfg.g_perp, cfg.g_perp, cfg.g_par]) @ r.T
    a_lab = r @ np.diag([iso.a_perp, iso.a_perp, iso.a_par]) @ r.T
    dn = iso.nuclear_dim
    jx, jy, jz, _, _ = spin_matrices(0.5)
    ix, iy, iz, _, _ = spin_matrices(iso.nuclear_spin)
    jops = (jx, jy, jz)
    iops = (ix, iy, iz)
    eye_n = np.eye(dn)
    eye_e = np.eye(2)

    h = np.zeros((2 * dn, 2 * dn), dtype=complex)
    for k in range(3):
        h += consts.mu_b * bz_mt * g_lab[2, k] * np.kron(jops[k], eye_n)
    if include_nuclear_zeeman:
        h += iso.gamma_n * bz_mt * np.kron(eye_e, iz)
    if include_quadrupole and any(iso.q_diag):
        q_lab = r @ np.diag(iso.q_diag) @ r.T
        for a in range(3):
            for b in range(3):
                h += q_lab[a, b] * np.kron(eye_e, iops[a] @ iops[b])
    for a in range(3):
        for b in range(3):
            h += a_lab[a, b] * np.kron(jops[a], iops[b])
    return h


def nitroxide_hamiltonian(cfg: NitroxideConfig, bz_mt: float, **kwargs):
    """Label Hamiltonian wrapped as an Operator on (e, n)."""
    from .operators import Operator

    mat = nitroxide_hamiltonian_matrix(cfg, bz_mt, **kwargs)
    mat = 0.5 * (mat + mat.conj().T)
    return Operator(mat, (2, cfg.isotope.nuclear_dim), hermitian_hint=True)


def dressed_label_basis(h_label: np.ndarray, iso: IsotopeParams, theta: float):
    """Eigen-decompose a label Hamiltonian and organize by electron manifold.

    Returns (energies, vectors, manifold) with vectors column-ordered so
    that the electron-up manifold (positive <Jz>) comes first, each
    manifold internally ordered by dressed nuclear label (1, 0, -1 /
    +-1/2). `manifold` holds +-1/2 per column.
    """
    dn = iso.nuclear_dim
    w, v = np.linalg.eigh(h_label)
    jz_full = np.kron(np.diag([0.5, -0.5]), np.eye(dn))
    char = np.real(np.einsum("ji,jk,ki->i", v.conj(), jz_full, v))
    up = np.argsort(-char)[:dn]
    down = np.argsort(-char)[dn:]
    _, dressed = dressed_nuclear_levels(iso, theta)

    def order_by_overlap(idxs, elec_row):
        # overlap of each eigenvector's dominant electron block with the
        # dressed nuclear basis; assignment keeps the pairing one-to-one
        ov = np.zeros((dn, dn))
        for a, i in enumerate(idxs):
            block = v[:, i].reshape(2, dn)[elec_row]
            for q in range(dn):
                ov[a, q] = abs(np.vdot(dressed[:, q], block)) ** 2
        rows, cols = linear_sum_assignment(-ov)
        ordered = np.empty(dn, dtype=int)
        for a, q in zip(rows, cols):
            ordered[q] = idxs[a]
        return ordered

    up = order_by_overlap(list(up), 0)
    down = order_by_overlap(list(down), 1)
    cols = np.concatenate([up, down])
    manifold = np.concatenate([np.full(dn, 0.5), np.full(dn, -0.5)])
    return w[cols], v[:, cols], manifold


def branch_energies_exact(iso: IsotopeParams, theta: float, bz_mt: float,
                          phi: float = 0.0,
                          include_quadrupole: bool = True,
                          include_nuclear_zeeman: bool = True,
                          consts: PhysicalConstants = CONSTANTS) -> BranchSet:
    """Branch energies from full diagonalization of the label Hamiltonian."""
    cfg = NitroxideConfig(iso, RotationAngles(theta, phi), np.array([0.0, 0.0, 1.0]))
    h = nitroxide_hamiltonian_matrix(
        cfg, bz_mt,
        include_quadrupole=include_quadrupole,
        include_nuclear_zeeman=include_nuclear_zeeman,
        consts=consts)
    w, _, _ = dressed_label_basis(h, iso, theta)
    dn = iso.nuclear_dim
    labels = iso.branch_labels
    energies = {labels[q]: float(w[q] - w[dn + q]) for q in range(dn)}
    return BranchSet(iso.isotope, energies)


def branch_robustness_scan(iso: IsotopeParams, theta_grid, bz_list,
                           method: str = "analytic",
                           consts: PhysicalConstants = CONSTANTS):
    """Branch energies over a (theta, Bz) grid, as a list of row dicts.

    With the analytic method, rows below the perturbative field floor are
    emitted with NaN energy rather than raising, so multi-field scans can
    include the low-field regime for comparison plots.
    """
    theta_grid = np.atleast_1d(np.asarray(theta_grid, dtype=float))
    bz_list = np.atleast_1d(np.asarray(bz_list, dtype=float))
    if theta_grid.size == 0 or bz_list.size == 0:
        raise ValueError("theta grid and field list must be non-empty")
    if method not in ("analytic", "exact"):
        raise ValueError(f"unknown method {method!r}")
    rows = []
    for bz in bz_list:
        for theta in theta_grid:
            if method == "analytic":
                try:
                    branches = branches_analytic(iso, theta, bz, consts)
                    energies = branches.energies
                except PerturbativeRangeError:
                    energies = {lab: np.nan for lab in iso.branch_labels}
            else:
                energies = branch_energies_exact(iso, theta, bz, consts=consts).energies
            for lab in iso.branch_labels:
                rows.append({
                    "theta_deg": float(np.degrees(theta)),
                    "Bz_mT": float(bz),
                    "branch_label": lab,
                    "energy_MHz": float(energies[lab] / TWO_PI / 1e6),
                })
    return rows


def split_branch(energy: float, g12: float) -> tuple[float, float]:
    """Inter-label splitting of one branch: (E + g12/2, E - g12/2)."""
    return energy + 0.5 * g12, energy - 0.5 * g12


def isotope_orthogonality_margin(bz_mt: float, n_theta: int = 181,
                                 method: str = "exact",
                                 consts: PhysicalConstants = CONSTANTS) -> float:
    """Minimum separation of the 14N central branch from both 15N branches.

    Scans all azimuth pairs on a dense grid; `method` selects the full
    diagonalization (physical, default) or the closed-form branches.
    The exact margin at 30 mT is ~2pi x 8.6 MHz (at theta_14N = 0,
    theta_15N = 90 deg); the closed forms give ~2pi x 7.3 MHz because the
    15N expressions carry no second-order correction.
    """
    thetas = np.linspace(0.0, np.pi / 2, n_theta)
    if method == "exact":
        e0_14 = np.array([branch_energies_exact(N14, t, bz_mt, consts=consts)["0"]
                          for t in thetas])
        e15 = np.array([[branch_energies_exact(N15, t, bz_mt, consts=consts)[lab]
                         for lab in N15.branch_labels] for t in thetas])
    elif method == "analytic":
        e0_14 = branch_energies_vec(N14, thetas, bz_mt, consts)["0"]
        v15 = branch_energies_vec(N15, thetas, bz_mt, consts)
        e15 = np.stack([v15["1/2"], v15["-1/2"]], axis=1)
    else:
        raise ValueError(f"unknown method {method!r}")
    diff = np.abs(e0_14[:, None, None] - e15[None, :, :])
    return float(diff.min())
