"""Spin operators, tensor-frame rotations and exact segment propagators.

Subsystem ordering is fixed globally as NV (x) e1 (x) n1 (x) e2 (x) n2;
reduced models simply drop the nuclear slots. Operators carry their
subsystem dimensions so embedding mistakes fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10


class SpinValueError(ValueError):
    """Unsupported spin quantum number."""


@dataclass(frozen=True)
class RotationAngles:
    """Azimuth theta in [0, pi] and polar rotation phi in (-pi, pi]."""

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.theta <= np.pi + 1e-12:
            raise ValueError(f"theta={self.theta} outside [0, pi]")
        if not -np.pi - 1e-12 < self.phi <= np.pi + 1e-12:
            raise ValueError(f"phi={self.phi} outside (-pi, pi]")


@dataclass(frozen=True)
class Operator:
    """Complex square matrix with subsystem-dimension metadata."""

    entries: np.ndarray
    dims: tuple[int, ...]
    hermitian_hint: bool = False

    def __post_init__(self):
        mat = np.asarray(self.entries, dtype=complex)
        object.__setattr__(self, "entries", mat)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError(f"operator must be square, got shape {mat.shape}")
        if int(np.prod(self.dims)) != mat.shape[0]:
            raise ValueError(f"dims {self.dims} inconsistent with dimension {mat.shape[0]}")
        if self.hermitian_hint:
            scale = max(np.abs(mat).max(), 1.0)
            if np.abs(mat - mat.conj().T).max() > HERMITIAN_TOL * scale:
                raise ValueError("hermitian_hint set but matrix is not hermitian")

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def dagger(self) -> "Operator":
        return Operator(self.entries.conj().T, self.dims, self.hermitian_hint)

    def __matmul__(self, other: "Operator") -> "Operator":
        if self.dims != other.dims:
            raise ValueError(f"dimension mismatch: {self.dims} vs {other.dims}")
        return Operator(self.entries @ other.entries, self.dims)

    def __add__(self, other: "Operator") -> "Operator":
        if self.dims != other.dims:
            raise ValueError(f"dimension mismatch: {self.dims} vs {other.dims}")
        return Operator(self.entries + other.entries, self.dims,
                        self.hermitian_hint and other.hermitian_hint)

    def __sub__(self, other: "Operator") -> "Operator":
        if self.dims != other.dims:
            raise ValueError(f"dimension mismatch: {self.dims} vs {other.dims}")
        return Operator(self.entries - other.entries, self.dims,
                        self.hermitian_hint and other.hermitian_hint)

    def __mul__(self, scalar: complex) -> "Operator":
        herm = self.hermitian_hint and np.isreal(scalar)
        return Operator(self.entries * scalar, self.dims, bool(herm))

    __rmul__ = __mul__


def spin_matrices(s: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Raw (Jx, Jy, Jz, J+, J-) matrices in the Jz eigenbasis, m descending."""
    if s not in (0.5, 1.0):
        raise SpinValueError(f"spin {s} not supported (use 1/2 or 1)")
    d = int(round(2 * s + 1))
    m = s - np.arange(d)
    jz = np.diag(m.astype(complex))
    jplus = np.zeros((d, d), dtype=complex)
    for k in range(d - 1):
        jplus[k, k + 1] = np.sqrt(s * (s + 1) - m[k + 1] * (m[k + 1] + 1))
    jminus = jplus.conj().T
    jx = 0.5 * (jplus + jminus)
    jy = (jplus - jminus) / 2j
    return jx, jy, jz, jplus, jminus


def spin_operators(s: float) -> tuple[Operator, Operator, Operator, Operator, Operator]:
    """Angular-momentum operators (Jx, Jy, Jz, J+, J-) for s in {1/2, 1}."""
    jx, jy, jz, jp, jm = spin_matrices(s)
    d = (jx.shape[0],)
    return (Operator(jx, d, True), Operator(jy, d, True), Operator(jz, d, True),
            Operator(jp, d), Operator(jm, d))


def embed_matrix(op: np.ndarray, slot: int, dims) -> np.ndarray:
    """Kronecker-embed a raw matrix at position `slot` of the subsystem list."""
    dims = tuple(int(d) for d in dims)
    if not 0 <= slot < len(dims):
        raise ValueError(f"slot {slot} out of range for dims {dims}")
    if op.shape != (dims[slot], dims[slot]):
        raise ValueError(f"operator shape {op.shape} does not match dims[{slot}]={dims[slot]}")
    left = int(np.prod(dims[:slot], initial=1))
    right = int(np.prod(dims[slot + 1:], initial=1))
    out = np.kron(np.kron(np.eye(left), op), np.eye(right))
    return out.astype(complex)


def embed(op: Operator, slot: int, dims) -> Operator:
    """Place `op` at subsystem `slot`, identity elsewhere."""
    return Operator(embed_matrix(op.entries, slot, dims), tuple(int(d) for d in dims),
                    op.hermitian_hint)


def rotation_matrix(theta: float, phi: float = 0.0) -> np.ndarray:
    """Principal-to-lab rotation R(theta, phi) = Rz(phi) Ry(theta)."""
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    ry = np.array([[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]])
    rz = np.array([[cp, -sp, 0.0], [sp, cp, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry


def rotate_tensor(t_principal: np.ndarray, angles: RotationAngles) -> np.ndarray:
    """Rotate a principal-frame (diagonal) rank-2 tensor into the lab frame."""
    t = np.asarray(t_principal, dtype=float)
    if t.shape != (3, 3):
        raise ValueError(f"tensor must be 3x3, got {t.shape}")
    if np.abs(t - np.diag(np.diag(t))).max() > 1e-12 * max(np.abs(t).max(), 1.0):
        raise ValueError("principal tensor must be diagonal")
    r = rotation_matrix(angles.theta, angles.phi)
    return r @ t @ r.T


def expm_hermitian(h: np.ndarray, t: float) -> np.ndarray:
    """exp(-i h t) for hermitian h, via eigendecomposition (exact)."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


class NonHermitianError(ValueError):
    """Propagator requested for a non-hermitian generator."""


def propagator(h: Operator, t: float) -> Operator:
    """Exact unitary exp(-i H t) for a piecewise-constant segment."""
    mat = h.entries
    scale = max(np.abs(mat).max(), 1.0)
    if np.abs(mat - mat.conj().T).max() > 1e-9 * scale:
        raise NonHermitianError("propagator requires a hermitian generator")
    hsym = 0.5 * (mat + mat.conj().T)
    u = expm_hermitian(hsym, t)
    if np.abs(u @ u.conj().T - np.eye(h.dim)).max() > UNITARY_TOL * 10:
        raise RuntimeError("propagator failed unitarity check")
    return Operator(u, h.dims)
