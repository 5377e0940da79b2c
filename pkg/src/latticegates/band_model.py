"""Band structure of a 1-D optical lattice in a plane-wave basis.

Energies are in units of the recoil energy E_R, quasimomenta in units of
hbar*k_L, and the dimensionless position x has lattice period pi.  Within one
Bloch sector the Hamiltonian is

    H0(k) = (p - k)^2 + (r/2) * (1 - cos 2x)

and is represented on plane waves exp(i 2 n x), n = -N..N, in ascending n.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import constants

__all__ = [
    "LatticeSpec",
    "BandSolution",
    "ControlOperators",
    "DispersionReport",
    "check_quasimomentum",
    "reduce_quasimomentum",
    "build_hamiltonian",
    "solve_bands",
    "control_operators",
    "planewave_cos2x",
    "planewave_sin2x",
    "dispersion",
    "free_oscillation_period",
    "charge_qubit_map",
    "recoil_units",
    "band_scan",
]

DEFAULT_PLANEWAVES = 16
DEFAULT_BANDS = 6


@dataclass(frozen=True)
class LatticeSpec:
    """Lattice depth and basis truncation.

    Parameters
    ----------
    r : float
        Potential depth U_0 / E_R.
    n_planewaves : int
        Half-width N of the plane-wave basis (dimension 2N + 1).
    n_bands : int
        Number of retained Bloch bands.
    """

    r: float
    n_planewaves: int = DEFAULT_PLANEWAVES
    n_bands: int = DEFAULT_BANDS

    def __post_init__(self):
        if not np.isfinite(self.r) or self.r < 0:
            raise ValueError(f"lattice depth r must be finite and >= 0, got {self.r}")
        if self.n_bands < 2:
            raise ValueError(f"n_bands must be >= 2, got {self.n_bands}")
        if self.n_planewaves < self.n_bands:
            raise ValueError(
                f"n_planewaves ({self.n_planewaves}) must be >= n_bands ({self.n_bands})"
            )

    @property
    def dim(self) -> int:
        return 2 * self.n_planewaves + 1

    @property
    def orders(self) -> np.ndarray:
        return np.arange(-self.n_planewaves, self.n_planewaves + 1)


@dataclass(frozen=True)
class BandSolution:
    """Lowest Bloch bands at one quasimomentum.

    ``bloch_vectors`` has shape (2N+1, n_bands); column ``n`` is band ``n``.
    """

    k: float
    energies: np.ndarray
    bloch_vectors: np.ndarray

    @property
    def n_bands(self) -> int:
        return len(self.energies)


@dataclass(frozen=True)
class ControlOperators:
    """cos(2x) and sin(2x) in the band eigenbasis at fixed k."""

    cos2x_band: np.ndarray
    sin2x_band: np.ndarray


@dataclass(frozen=True)
class DispersionReport:
    r: float
    d_value: float
    gap_center: float
    gap_edge: float

    def to_dict(self) -> dict:
        return {"r": self.r, "D": self.d_value,
                "gap_center": self.gap_center, "gap_edge": self.gap_edge}


def check_quasimomentum(k: float) -> float:
    """Return ``k`` as float, rejecting values outside (-1, 1]."""
    k = float(k)
    if not (-1.0 < k <= 1.0):
        raise ValueError(f"quasimomentum {k} outside the first Brillouin zone (-1, 1]")
    return k


def reduce_quasimomentum(k: float) -> float:
    """Fold any real k into (-1, 1] by shifts of the reciprocal vector 2."""
    reduced = float(k) - 2.0 * np.floor((float(k) + 1.0) / 2.0)
    # floor maps exact odd integers to -1; the zone is open there
    if reduced <= -1.0:
        reduced += 2.0
    return reduced


def build_hamiltonian(spec: LatticeSpec, k: float) -> np.ndarray:
    """Plane-wave matrix of H0(k).

    Diagonal ``(2n - k)^2 + r/2``; first off-diagonals ``-r/4`` from the
    ``-(r/2) cos 2x`` term.
    """
    k = check_quasimomentum(k)
    n = spec.orders
    off = np.full(spec.dim - 1, -spec.r / 4.0)
    return np.diag((2.0 * n - k) ** 2 + spec.r / 2.0) + np.diag(off, 1) + np.diag(off, -1)


def _fix_phases(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude component real positive; near-ties go to the lowest index
    mags = np.abs(vectors)
    lead = np.argmax(mags >= mags.max(axis=0) - 1e-12, axis=0)
    cols = np.arange(vectors.shape[1])
    pivot = vectors[lead, cols]
    return vectors * (np.abs(pivot) / pivot)[np.newaxis, :]


@lru_cache(maxsize=64)
def _reference_vectors(spec: LatticeSpec) -> np.ndarray:
    _, vectors = np.linalg.eigh(build_hamiltonian(spec, 0.0))
    return _fix_phases(vectors[:, :spec.n_bands])


def _align_to_reference(spec: LatticeSpec, vectors: np.ndarray) -> np.ndarray:
    # sign of each band follows its overlap with the k=0 vector, so the relative
    # phase between bands varies continuously across the zone
    ref = _reference_vectors(spec)
    overlap = np.sum(ref.conj() * vectors, axis=0)
    usable = np.abs(overlap) > 1e-3
    factors = np.ones(vectors.shape[1], dtype=complex)
    factors[usable] = np.abs(overlap[usable]) / overlap[usable]
    aligned = vectors * factors[np.newaxis, :]
    if np.isrealobj(vectors):
        aligned = aligned.real
    return aligned


def solve_bands(spec: LatticeSpec, k: float, gauge: str = "smooth") -> BandSolution:
    """Diagonalize H0(k) and keep the lowest ``spec.n_bands`` states.

    ``gauge="largest"`` makes the largest-magnitude component of every Bloch
    vector real and positive.  The default ``"smooth"`` starts from that
    convention and then flips each band so its overlap with the k=0 vector of
    the same band is positive, which keeps off-diagonal targets such as X_pi
    meaning the same operation at every quasimomentum.  Bands whose overlap
    vanishes keep the largest-component sign.
    """
    if gauge not in ("smooth", "largest"):
        raise ValueError(f"unknown gauge {gauge!r}")
    h = build_hamiltonian(spec, k)
    try:
        energies, vectors = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed at r={spec.r}, k={k}") from exc
    nb = spec.n_bands
    vectors = _fix_phases(vectors[:, :nb])
    if gauge == "smooth":
        vectors = _align_to_reference(spec, vectors)
    return BandSolution(k=float(k), energies=energies[:nb].copy(), bloch_vectors=vectors)


def planewave_cos2x(dim: int) -> np.ndarray:
    """cos 2x = (e^{i2x} + e^{-i2x})/2 on plane waves: 1/2 on both off-diagonals."""
    half = np.full(dim - 1, 0.5)
    return np.diag(half, 1) + np.diag(half, -1)


def planewave_sin2x(dim: int) -> np.ndarray:
    """sin 2x = (e^{i2x} - e^{-i2x})/(2i) on plane waves in ascending order.

    <n+1| sin 2x |n> = -i/2 sits below the diagonal, +i/2 above it.
    """
    half = np.full(dim - 1, 0.5j)
    return np.diag(half, 1) + np.diag(-half, -1)


def control_operators(spec: LatticeSpec, bands: BandSolution) -> ControlOperators:
    """Project cos 2x and sin 2x onto the retained Bloch bands."""
    w = bands.bloch_vectors
    if w.shape[0] != spec.dim:
        raise ValueError(
            f"band vectors have dimension {w.shape[0]}, lattice basis has {spec.dim}"
        )
    wh = w.conj().T
    cos_b = wh @ planewave_cos2x(spec.dim) @ w
    sin_b = wh @ planewave_sin2x(spec.dim) @ w
    # symmetrize away round-off so Hermiticity is exact
    cos_b = 0.5 * (cos_b + cos_b.conj().T)
    sin_b = 0.5 * (sin_b + sin_b.conj().T)
    return ControlOperators(cos2x_band=cos_b, sin2x_band=sin_b)


def _gap01(spec: LatticeSpec, k: float) -> float:
    e = solve_bands(spec, k).energies
    return float(e[1] - e[0])


def _center_gap(spec: LatticeSpec) -> float:
    # bands 0 and 1 must be isolated at k=0 for the 0-1 transition to be defined
    # use the full plane-wave spectrum: band 2 matters even when only 2 bands are kept
    e = np.linalg.eigvalsh(build_hamiltonian(spec, 0.0))
    gaps = np.diff(e[:3])
    if np.any(gaps <= 1e-12 * max(1.0, abs(e[2]))):
        raise ValueError(f"degenerate bands at k=0 for r={spec.r}; 0-1 transition undefined")
    return float(gaps[0])


def dispersion(spec: LatticeSpec) -> DispersionReport:
    """Fractional change of the 0-1 transition energy from zone center to edge."""
    gap_center = _center_gap(spec)
    gap_edge = _gap01(spec, 1.0)
    return DispersionReport(r=spec.r, d_value=1.0 - gap_edge / gap_center,
                            gap_center=gap_center, gap_edge=gap_edge)


def free_oscillation_period(spec: LatticeSpec) -> float:
    """Period 2*pi / (E_1 - E_0) of the 0-1 transition at k=0, in hbar/E_R."""
    return 2.0 * np.pi / _center_gap(spec)


def charge_qubit_map(e_j: float, e_c: float, n_g: float) -> tuple[float, float]:
    """Map a charge qubit onto the lattice.

    Cooper-pair number plays the momentum, the junction phase plays x, and the
    gate charge plays the quasimomentum.  Returns ``(r, k)`` with
    ``r = 2 E_J / E_C`` and ``k = 2 n_g`` folded into (-1, 1].  Lattice energies
    then correspond to circuit energies in units of E_C, up to an additive
    constant.
    """
    if not e_c > 0:
        raise ValueError(f"charging energy must be positive, got {e_c}")
    if e_j < 0:
        raise ValueError(f"Josephson energy must be >= 0, got {e_j}")
    return 2.0 * e_j / e_c, reduce_quasimomentum(2.0 * n_g)


def recoil_energy(mass: float, k_laser: float) -> float:
    """E_R = hbar^2 k_L^2 / (2 m) in joules."""
    return constants.hbar ** 2 * k_laser ** 2 / (2.0 * mass)


def recoil_units(u0: float, mass: float, k_laser: float) -> float:
    """Dimensionless depth r = U_0 / E_R from SI inputs."""
    for name, value in (("u0", u0), ("mass", mass), ("k_laser", k_laser)):
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")
    return u0 / recoil_energy(mass, k_laser)


def band_scan(spec: LatticeSpec, kpoints: int) -> tuple[np.ndarray, np.ndarray]:
    """Energies on ``kpoints`` evenly spaced k from -1 to 1 inclusive.

    k = -1 is evaluated as its zone-equivalent k = 1 so the plotted band is
    closed.  Returns ``(ks, energies)`` with energies of shape (kpoints, n_bands).
    """
    if kpoints < 2:
        raise ValueError("kpoints must be >= 2")
    ks = np.linspace(-1.0, 1.0, kpoints)
    energies = np.array([solve_bands(spec, reduce_quasimomentum(k)).energies for k in ks])
    return ks, energies
