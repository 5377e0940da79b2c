"""Phase-coherent ensemble fidelity over sampled quasimomenta.

For samples k_l with weights w_l the gate figure of merit is

    Phi = | sum_l w_l Tr(V^dag U~(k_l)) |^2 / d^2

where U~ is the d x d block of the band-basis propagator on the computational
bands.  Taking the modulus after the sum penalizes relative global phases
between ensemble members; uniform weights give the plain 1/M average.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .band_model import BandSolution, LatticeSpec, check_quasimomentum
from .propagation import BandStack, ControlPulse, SliceCache

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


@dataclass
class EnsembleSpec:
    """Discrete quasimomentum samples and their weights."""

    k_samples: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        ks = np.asarray(self.k_samples, dtype=float).reshape(-1)
        if ks.size < 1:
            raise ValueError("ensemble needs at least one quasimomentum sample")
        for k in ks:
            check_quasimomentum(k)
        if np.unique(ks).size != ks.size:
            raise ValueError("quasimomentum samples must be distinct")
        if self.weights is None:
            w = np.full(ks.size, 1.0 / ks.size)
        else:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape != ks.shape:
                raise ValueError("one weight per sample required")
            if np.any(w < 0):
                raise ValueError("weights must be nonnegative")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"weights must sum to 1, got {w.sum()}")
        self.k_samples = ks
        self.weights = w

    @property
    def size(self) -> int:
        return self.k_samples.size

    @classmethod
    def uniform(cls, m: int) -> "EnsembleSpec":
        """M points spaced 2/M apart, offset half a step from the zone edge."""
        if m < 1:
            raise ValueError("m must be >= 1")
        return cls(-1.0 + (np.arange(m) + 0.5) * 2.0 / m)

    @classmethod
    def single(cls, k: float) -> "EnsembleSpec":
        return cls(np.array([k]))


def fine_grid(n_points: int) -> np.ndarray:
    """Uniform grid k_j = -1 + 2j/n, j = 1..n, covering (-1, 1]."""
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    return -1.0 + 2.0 * np.arange(1, n_points + 1) / n_points


@dataclass
class TargetGate:
    """Unitary V acting on the bands listed in ``band_indices``."""

    v_matrix: np.ndarray = field(default_factory=lambda: PAULI_X.copy())
    band_indices: tuple = (0, 1)

    def __post_init__(self):
        v = np.asarray(self.v_matrix, dtype=complex)
        self.band_indices = tuple(int(i) for i in self.band_indices)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] != len(self.band_indices):
            raise ValueError("v_matrix must be square with one row per band index")
        if np.max(np.abs(v.conj().T @ v - np.eye(v.shape[0]))) > 1e-12:
            raise ValueError("target gate is not unitary")
        if len(set(self.band_indices)) != len(self.band_indices):
            raise ValueError("band indices must be distinct")
        self.v_matrix = v

    @property
    def subspace_dim(self) -> int:
        return len(self.band_indices)

    @classmethod
    def x_pi(cls) -> "TargetGate":
        return cls(PAULI_X.copy())

    @classmethod
    def identity(cls, dim: int = 2) -> "TargetGate":
        return cls(np.eye(dim, dtype=complex), tuple(range(dim)))

    def embedded_adjoint(self, n_bands: int) -> np.ndarray:
        """V^dag padded with zeros so Tr(Q U) = Tr(V^dag U~) on the full band space."""
        if max(self.band_indices) >= n_bands or min(self.band_indices) < 0:
            raise ValueError(
                f"band indices {self.band_indices} outside the {n_bands} retained bands"
            )
        q = np.zeros((n_bands, n_bands), dtype=complex)
        idx = np.array(self.band_indices)
        # Tr(Q U) = sum_ij Q_ji U_ij, so Q holds V^dag with rows/cols on the subspace
        q[np.ix_(idx, idx)] = self.v_matrix.conj().T
        return q


@dataclass
class FidelityReport:
    phi: float
    per_k_fidelity: np.ndarray
    trace_phases: np.ndarray
    k_samples: np.ndarray
    gradient: Optional[np.ndarray] = None

    @property
    def mean_fidelity(self) -> float:
        return float(np.mean(self.per_k_fidelity))

    def summary(self) -> dict:
        f = self.per_k_fidelity
        return {
            "phi": float(self.phi),
            "fidelity_min": float(f.min()),
            "fidelity_mean": float(f.mean()),
            "fidelity_max": float(f.max()),
            "trace_phases": [float(a) for a in self.trace_phases],
        }


def _coherent(traces: np.ndarray, weights: np.ndarray, norm: float) -> tuple[complex, float]:
    total = np.dot(weights, traces)
    return total, float(abs(total) ** 2 / norm ** 2)


def coherent_fidelity(blocks: np.ndarray, target: TargetGate,
                      weights: Optional[np.ndarray] = None) -> tuple[float, np.ndarray]:
    """Phi and per-member fidelities from given subspace blocks.

    ``blocks`` has shape (M, d, d) and holds the restriction of each member's
    propagator to the target bands; it need not be unitary (leakage).
    """
    blocks = np.asarray(blocks, dtype=complex)
    d = target.subspace_dim
    if blocks.ndim != 3 or blocks.shape[1:] != (d, d):
        raise ValueError(f"blocks must have shape (M, {d}, {d})")
    w = np.full(len(blocks), 1.0 / len(blocks)) if weights is None else np.asarray(weights)
    traces = np.einsum("ij,mji->m", target.v_matrix.conj().T, blocks)
    _, phi = _coherent(traces, w, d)
    return phi, np.abs(traces) ** 2 / d ** 2


class CoherentObjective:
    """|sum_l w_l Tr(Q U^(k_l))|^2 / norm^2 on a fixed ensemble.

    Gate fidelity uses Q = embedded V^dag and norm = d; state transfer uses
    Q = |initial><target| and norm = 1.  Band data are computed once.
    """

    def __init__(self, stack: BandStack, weights: np.ndarray, weight_op: np.ndarray,
                 norm: float):
        self.stack = stack
        self.weights = np.asarray(weights, dtype=float)
        self.weight_op = weight_op
        self.norm = float(norm)

    @classmethod
    def for_gate(cls, spec: LatticeSpec, ens: EnsembleSpec, target: TargetGate,
                 bands: Optional[Sequence[BandSolution]] = None) -> "CoherentObjective":
        q = target.embedded_adjoint(spec.n_bands)
        stack = BandStack.from_spec(spec, ens.k_samples, bands)
        return cls(stack, ens.weights, q, target.subspace_dim)

    @classmethod
    def for_state(cls, spec: LatticeSpec, ens: EnsembleSpec, initial: int,
                  target_state: np.ndarray,
                  bands: Optional[Sequence[BandSolution]] = None) -> "CoherentObjective":
        nb = spec.n_bands
        psi = np.asarray(target_state, dtype=complex).reshape(-1)
        if psi.size != nb:
            raise ValueError(f"target state must have {nb} band amplitudes")
        if abs(np.linalg.norm(psi) - 1.0) > 1e-10:
            raise ValueError("target state is not normalized")
        if not 0 <= initial < nb:
            raise ValueError(f"initial band {initial} outside the {nb} retained bands")
        q = np.zeros((nb, nb), dtype=complex)
        # Tr(Q U) = <target|U|initial>
        q[initial, :] = psi.conj()
        stack = BandStack.from_spec(spec, ens.k_samples, bands)
        return cls(stack, ens.weights, q, 1.0)

    def evaluate(self, pulse: ControlPulse) -> "Evaluation":
        return Evaluation(self, pulse)


class Evaluation:
    """Objective value at one pulse; the gradient reuses the cached slices."""

    def __init__(self, objective: CoherentObjective, pulse: ControlPulse):
        self.objective = objective
        self.pulse = pulse
        self.cache = SliceCache(objective.stack, pulse)
        totals = self.cache.total()
        self.traces = np.einsum("ij,mji->m", objective.weight_op, totals)
        self.coherent_sum, self.phi = _coherent(self.traces, objective.weights, objective.norm)
        self._gradient = None

    @property
    def per_k_fidelity(self) -> np.ndarray:
        return np.abs(self.traces) ** 2 / self.objective.norm ** 2

    @property
    def gradient(self) -> np.ndarray:
        """dPhi/du = (2/norm^2) Re[ conj(S) sum_l w_l dTr_l/du ]."""
        if self._gradient is None:
            dtr = self.cache.trace_gradient(self.objective.weight_op)
            weighted = self.objective.weights @ dtr
            self._gradient = (2.0 / self.objective.norm ** 2
                              * np.real(np.conj(self.coherent_sum) * weighted))
        return self._gradient

    def report(self, with_gradient: bool = False) -> FidelityReport:
        return FidelityReport(
            phi=self.phi,
            per_k_fidelity=self.per_k_fidelity,
            trace_phases=np.angle(self.traces),
            k_samples=self.objective.stack.ks.copy(),
            gradient=self.gradient.copy() if with_gradient else None,
        )


def _check(pulse: ControlPulse, spec: LatticeSpec) -> None:
    if pulse.r_ref != spec.r:
        raise ValueError(f"pulse was built for r={pulse.r_ref}, lattice has r={spec.r}")


def ensemble_gate_fidelity(pulse: ControlPulse, spec: LatticeSpec, ens: EnsembleSpec,
                           target: TargetGate,
                           bands: Optional[Sequence[BandSolution]] = None) -> FidelityReport:
    _check(pulse, spec)
    return CoherentObjective.for_gate(spec, ens, target, bands).evaluate(pulse).report()


def fidelity_gradient(pulse: ControlPulse, spec: LatticeSpec, ens: EnsembleSpec,
                      target: TargetGate,
                      bands: Optional[Sequence[BandSolution]] = None) -> FidelityReport:
    """Fidelity report including dPhi/du over all 2n controls (alpha then beta)."""
    _check(pulse, spec)
    ev = CoherentObjective.for_gate(spec, ens, target, bands).evaluate(pulse)
    return ev.report(with_gradient=True)


def state_transfer_fidelity(pulse: ControlPulse, spec: LatticeSpec, ens: EnsembleSpec,
                            initial: int, target_state: np.ndarray,
                            with_gradient: bool = True) -> FidelityReport:
    """Phi_state = |sum_l w_l <target| U^(k_l) |initial>|^2."""
    _check(pulse, spec)
    ev = CoherentObjective.for_state(spec, ens, initial, target_state).evaluate(pulse)
    return ev.report(with_gradient=with_gradient)


def fine_grid_fidelity(pulse: ControlPulse, spec: LatticeSpec, target: TargetGate,
                       n_points: int = 100) -> FidelityReport:
    """Per-k fidelity and coherent Phi on the uniform verification grid."""
    ens = EnsembleSpec(fine_grid(n_points))
    return ensemble_gate_fidelity(pulse, spec, ens, target)
