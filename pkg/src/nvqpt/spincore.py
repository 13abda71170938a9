"""Qubit state and process algebra in the Pauli basis.

States are 2x2 density matrices over the basis (index 0 <-> |0>,
index 1 <-> |-1>).  Processes are 4x4 chi matrices over the operator basis
(I, X, Y, Z), acting as  E(rho) = sum_mn chi[m,n] P_m rho P_n.

Conventions fixed here and used everywhere else in the package:

* |0> sits at Bloch +Z; a rotation by a positive angle about Z carries
  +X toward +Y (i.e. the Bloch azimuth increases).
* chi matrices are normalized to unit trace, so the fidelity of a process
  against a unitary reference lies in [0, 1] and equals 1 for a match.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import UnphysicalStateError

PAULI_LABELS = ("I", "X", "Y", "Z")

PAULIS = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=np.complex128,
)

# Default physicality tolerances.
STATE_TOL = 1e-12
HERMITIAN_TOL = 1e-10
PSD_TOL = 1e-10
TRACE_PRESERVING_TOL = 1e-6


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BlochVector:
    """Real 3-vector of Pauli expectations (x, y, z), each in [-1, 1]."""

    x: float
    y: float
    z: float

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def azimuth(self) -> float:
        """Angle of the transverse component, atan2(y, x), in radians."""
        return math.atan2(self.y, self.x)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class DensityMatrix:
    """2x2 complex Hermitian unit-trace matrix; immutable."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.complex128)
        if m.shape != (2, 2):
            raise UnphysicalStateError(f"density matrix must be 2x2, got {m.shape}")
        object.__setattr__(self, "matrix", _readonly(m))

    def validate(self, tol: float = STATE_TOL) -> "DensityMatrix":
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > tol:
            raise UnphysicalStateError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > tol:
            raise UnphysicalStateError("density matrix trace differs from 1")
        if np.linalg.eigvalsh(m).min() < -tol:
            raise UnphysicalStateError("density matrix has a negative eigenvalue")
        return self

    @property
    def p0(self) -> float:
        """Population of |0>, the normalized fluorescence proxy."""
        return float(self.matrix[0, 0].real)

    def bloch(self) -> BlochVector:
        m = self.matrix
        return BlochVector(
            x=float(2.0 * m[1, 0].real),
            y=float(2.0 * m[1, 0].imag),
            z=float((m[0, 0] - m[1, 1]).real),
        )


@dataclass(frozen=True)
class ChiMatrix:
    """4x4 complex process matrix over the (I, X, Y, Z) operator basis."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.complex128)
        if m.shape != (4, 4):
            raise UnphysicalStateError(f"chi matrix must be 4x4, got {m.shape}")
        object.__setattr__(self, "matrix", _readonly(m))

    def validate_hermitian(self, tol: float = HERMITIAN_TOL) -> "ChiMatrix":
        if np.max(np.abs(self.matrix - self.matrix.conj().T)) > tol:
            raise UnphysicalStateError("chi matrix is not Hermitian")
        return self

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T)).min())

    def trace_preservation_defect(self) -> np.ndarray:
        """The 2x2 matrix  sum_mn chi[m,n] P_n P_m  -  I."""
        defect = np.einsum("mn,nij,mjk->ik", self.matrix, PAULIS, PAULIS)
        return defect - np.eye(2)

    def validate_physical(
        self,
        psd_tol: float = PSD_TOL,
        tp_tol: float = TRACE_PRESERVING_TOL,
    ) -> "ChiMatrix":
        """Check complete positivity (PSD) and trace preservation."""
        self.validate_hermitian()
        if self.min_eigenvalue() < -psd_tol:
            raise UnphysicalStateError(
                f"chi matrix is not PSD (min eigenvalue {self.min_eigenvalue():.3e})"
            )
        if np.max(np.abs(self.trace_preservation_defect())) > tp_tol:
            raise UnphysicalStateError("chi matrix is not trace preserving")
        return self

    # -- serialization ----------------------------------------------------
    #
    # Schema: {"basis": ["I","X","Y","Z"], "re": 4x4 row-major, "im": 4x4}.
    # Floats survive the round trip bit-exactly (shortest-repr encoding).

    def to_json_dict(self) -> dict:
        return {
            "basis": list(PAULI_LABELS),
            "re": self.matrix.real.tolist(),
            "im": self.matrix.imag.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @staticmethod
    def from_json_dict(d: dict) -> "ChiMatrix":
        if list(d.get("basis", [])) != list(PAULI_LABELS):
            raise ValueError(f"unsupported operator basis {d.get('basis')!r}")
        return ChiMatrix(np.array(d["re"], dtype=float) + 1j * np.array(d["im"], dtype=float))

    @staticmethod
    def from_json(s: str) -> "ChiMatrix":
        return ChiMatrix.from_json_dict(json.loads(s))


class PhiOptimum(NamedTuple):
    """Result of maximizing fidelity over the Z-rotation angle."""

    phi_rad: float
    fidelity: float
    degenerate: bool


def density_from_bloch(b: BlochVector | Sequence[float]) -> DensityMatrix:
    """Build rho = (I + b . sigma) / 2 from a Bloch vector.

    Raises :class:`UnphysicalStateError` when |b| > 1 + 1e-9.
    """
    if not isinstance(b, BlochVector):
        b = BlochVector(*map(float, b))
    if b.norm() > 1.0 + 1e-9:
        raise UnphysicalStateError(f"Bloch vector norm {b.norm():.12f} exceeds 1")
    m = 0.5 * (PAULIS[0] + b.x * PAULIS[1] + b.y * PAULIS[2] + b.z * PAULIS[3])
    return DensityMatrix(m)


def bloch_from_density(rho: DensityMatrix) -> BlochVector:
    return rho.bloch()


def apply_channel(chi: ChiMatrix, rho: DensityMatrix) -> DensityMatrix:
    """Apply  E(rho) = sum_mn chi[m,n] P_m rho P_n."""
    chi.validate_hermitian()
    out = np.einsum("mn,mij,jk,nkl->il", chi.matrix, PAULIS, rho.matrix, PAULIS)
    return DensityMatrix(out)


def chi_ideal(phi: float) -> ChiMatrix:
    """Process matrix of a decoherence-free rotation by ``phi`` about Z.

    Nonzero entries: (I,I) = cos^2(phi/2), (Z,Z) = sin^2(phi/2),
    (I,Z) = i cos(phi/2) sin(phi/2) and (Z,I) its conjugate.  The matrix is
    rank one, PSD, trace preserving and has unit trace.
    """
    c = math.cos(0.5 * phi)
    s = math.sin(0.5 * phi)
    chi = np.zeros((4, 4), dtype=np.complex128)
    chi[0, 0] = c * c
    chi[3, 3] = s * s
    chi[0, 3] = 1j * c * s
    chi[3, 0] = -1j * c * s
    return ChiMatrix(chi)


def chi_from_kraus(kraus_ops: Iterable[np.ndarray]) -> ChiMatrix:
    """Chi matrix of the channel  rho -> sum_i K_i rho K_i^dagger.

    Each Kraus operator is expanded as K = sum_m c_m P_m with
    c_m = Tr(P_m K) / 2; then chi = sum_i c_i c_i^dagger.
    """
    chi = np.zeros((4, 4), dtype=np.complex128)
    for k in kraus_ops:
        k = np.asarray(k, dtype=np.complex128)
        c = np.einsum("mij,ji->m", PAULIS, k) / 2.0
        chi += np.outer(c, c.conj())
    return ChiMatrix(chi)


# Pauli transfer representation: T[i,j] = Tr(P_i E(P_j)) / 2, a real 4x4
# matrix for Hermiticity-preserving maps.  chi <-> T is a linear bijection;
# the coupling tensor G and the inverse system matrix are built once.

def _transfer_tensors():
    g = np.einsum("iab,mbc,jcd,nda->ijmn", PAULIS, PAULIS, PAULIS, PAULIS) / 2.0
    a = g.reshape(16, 16)
    return g, np.linalg.inv(a)


_G_TENSOR, _A_INV = _transfer_tensors()


def ptm_from_chi(chi: ChiMatrix) -> np.ndarray:
    """Pauli transfer matrix (real 4x4) of a Hermitian chi matrix."""
    t = np.einsum("ijmn,mn->ij", _G_TENSOR, chi.matrix)
    return np.ascontiguousarray(t.real)


def chi_from_ptm(t: np.ndarray) -> ChiMatrix:
    """Inverse of :func:`ptm_from_chi`; output is Hermitian by construction."""
    t = np.asarray(t, dtype=float)
    if t.shape != (4, 4):
        raise ValueError(f"transfer matrix must be 4x4, got {t.shape}")
    chi = (_A_INV @ t.reshape(16).astype(np.complex128)).reshape(4, 4)
    return ChiMatrix(0.5 * (chi + chi.conj().T))


def process_fidelity(chi_a: ChiMatrix, chi_b: ChiMatrix) -> float:
    """Overlap Tr(chi_a chi_b) with both matrices normalized to unit trace.

    For a physical ``chi_a`` and a rank-one unitary reference ``chi_b`` the
    result lies in [0, 1] and equals 1 only for a perfect match.
    """
    a = chi_a.matrix
    b = chi_b.matrix
    ta = np.trace(a).real
    tb = np.trace(b).real
    if ta <= 0 or tb <= 0:
        raise UnphysicalStateError("chi matrices must have positive trace")
    f = np.trace(a @ b) / (ta * tb)
    if abs(f.imag) > 1e-8:
        warnings.warn(
            f"process fidelity has imaginary part {f.imag:.3e}; "
            "inputs are probably not Hermitian",
            stacklevel=2,
        )
    return float(f.real)


def optimize_phi(chi_phys: ChiMatrix) -> PhiOptimum:
    """Best Z-rotation angle for ``chi_phys`` and the fidelity it attains.

    F(phi) = Tr(chi_phys chi_ideal(phi)) is exactly sinusoidal,
    F = a + b cos(phi) + c sin(phi), so three evaluations at 0, 90 and 180
    degrees determine the maximum in closed form:
    phi* = atan2(c, b), F* = a + sqrt(b^2 + c^2).

    When b = c = 0 the fidelity does not depend on phi; phi* = 0 is
    returned with ``degenerate=True``.
    """
    f0 = process_fidelity(chi_phys, chi_ideal(0.0))
    f90 = process_fidelity(chi_phys, chi_ideal(0.5 * math.pi))
    f180 = process_fidelity(chi_phys, chi_ideal(math.pi))
    a = 0.5 * (f0 + f180)
    b = 0.5 * (f0 - f180)
    c = f90 - a
    amplitude = math.hypot(b, c)
    if amplitude < 1e-12:
        return PhiOptimum(0.0, a, True)
    return PhiOptimum(math.atan2(c, b), a + amplitude, False)
