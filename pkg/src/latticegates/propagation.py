"""Piecewise-constant evolution of Bloch-band ensembles and exact derivatives.

Within slice j the band-basis Hamiltonian at quasimomentum k is

    H_j = diag(E(k)) + 2 alpha_j cos2x(k) + 2 beta_j sin2x(k)

and each slice exponential is built from a Hermitian eigendecomposition, which
also supplies the divided-difference (Daleckii-Krein) form of its derivative.
All heavy lifting happens in :class:`BandStack`, which vectorizes over a set of
quasimomenta and over slices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .band_model import (
    BandSolution,
    ControlOperators,
    LatticeSpec,
    control_operators,
    solve_bands,
)

DEGENERACY_THRESHOLD = 1e-9


@dataclass
class ControlPulse:
    """Piecewise-constant controls alpha_j, beta_j (units E_R) on slices of length dt.

    The flat control vector used by the optimizer is ``concatenate([alpha, beta])``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    dt: float
    r_ref: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if self.alpha.shape != self.beta.shape:
            raise ValueError(
                f"alpha and beta lengths differ ({self.alpha.size} vs {self.beta.size})"
            )
        if not self.dt > 0:
            raise ValueError(f"slice duration dt must be positive, got {self.dt}")
        self.dt = float(self.dt)
        self.r_ref = float(self.r_ref)

    @property
    def n_slices(self) -> int:
        return self.alpha.size

    @property
    def duration(self) -> float:
        return self.n_slices * self.dt

    @property
    def controls(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta])

    def with_controls(self, u: np.ndarray) -> "ControlPulse":
        u = np.asarray(u, dtype=float)
        n = self.n_slices
        return ControlPulse(u[:n].copy(), u[n:].copy(), self.dt, self.r_ref, dict(self.meta))

    def reversed_conjugate(self) -> "ControlPulse":
        """Slices in reverse order with beta negated (time-reversed drive)."""
        return ControlPulse(self.alpha[::-1].copy(), -self.beta[::-1], self.dt,
                            self.r_ref, dict(self.meta))

    @classmethod
    def zeros(cls, n_slices: int, dt: float, r_ref: float) -> "ControlPulse":
        return cls(np.zeros(n_slices), np.zeros(n_slices), dt, r_ref)


@dataclass
class PhysicalPulse:
    """Laser intensity ratio eta_j and lattice phase phi_j per slice."""

    eta: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float).reshape(-1)
        self.phi = np.asarray(self.phi, dtype=float).reshape(-1)
        if self.eta.shape != self.phi.shape:
            raise ValueError("eta and phi lengths differ")


def pulse_from_physical(phys: PhysicalPulse, r: float, dt: float) -> ControlPulse:
    """alpha = (r/4)[1 - (1+eta) cos phi], beta = (r/4)(1+eta) sin phi."""
    if np.any(phys.eta < -1):
        raise ValueError("intensity ratio eta must be >= -1 (nonnegative intensity)")
    amp = 1.0 + phys.eta
    alpha = 0.25 * r * (1.0 - amp * np.cos(phys.phi))
    beta = 0.25 * r * amp * np.sin(phys.phi)
    return ControlPulse(alpha, beta, dt, r)


def physical_from_pulse(pulse: ControlPulse) -> PhysicalPulse:
    """Invert :func:`pulse_from_physical`; phi is returned in (-pi, pi]."""
    r = pulse.r_ref
    if r == 0:
        raise ValueError("cannot recover laser parameters for a pulse with r_ref = 0")
    c = 1.0 - 4.0 * pulse.alpha / r
    s = 4.0 * pulse.beta / r
    return PhysicalPulse(eta=np.hypot(c, s) - 1.0, phi=np.arctan2(s, c))


@dataclass
class PropagatorSet:
    """Total band-basis propagator at one k, optionally with slices and derivatives.

    ``derivatives`` has shape (2 * n_slices, n_bands, n_bands); the first
    n_slices entries are d/d alpha_j, the rest d/d beta_j.
    """

    k: float
    u_total: np.ndarray
    slice_unitaries: Optional[np.ndarray] = None
    derivatives: Optional[np.ndarray] = None


def frechet_kernel(eigvals: np.ndarray, dt: float,
                   phases: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Phases exp(-i lambda dt) and the divided-difference kernel of exp(-i H dt).

    ``kernel[..., a, b] = (e_a - e_b) / (lambda_a - lambda_b)`` with
    ``e = exp(-i lambda dt)``, and ``-i dt e_a`` where the eigenvalues coincide
    within :data:`DEGENERACY_THRESHOLD`.  Pairs with |lambda_a - lambda_b| dt
    below 1e-3 use the equivalent ``-i dt exp(-i mean dt) sinc`` form, which
    does not cancel.
    """
    if phases is None:
        phases = np.exp(-1j * eigvals * dt)
    la = eigvals[..., :, np.newaxis]
    lb = eigvals[..., np.newaxis, :]
    gap = la - lb
    small = np.abs(gap) * dt < 1e-3
    safe_gap = np.where(small, 1.0, gap)
    kernel = (phases[..., :, np.newaxis] - phases[..., np.newaxis, :]) / safe_gap
    if np.any(small):
        la_s = np.broadcast_to(la, gap.shape)[small]
        lb_s = np.broadcast_to(lb, gap.shape)[small]
        g = gap[small]
        near = -1j * dt * np.exp(-0.5j * (la_s + lb_s) * dt) * np.sinc(0.5 * g * dt / np.pi)
        coincide = np.abs(g) < DEGENERACY_THRESHOLD
        near[coincide] = -1j * dt * np.exp(-1j * la_s[coincide] * dt)
        kernel[small] = near
    return phases, kernel


def _dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def slice_propagator(h0_band: np.ndarray, ops: ControlOperators, alpha_j: float,
                     beta_j: float, dt: float) -> np.ndarray:
    """exp(-i H_j dt) for one slice, via eigendecomposition of H_j.

    ``h0_band`` is either the band energies or the diagonal matrix holding them.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    h0 = np.asarray(h0_band)
    if h0.ndim == 1:
        h0 = np.diag(h0.astype(float))
    h = h0 + 2.0 * alpha_j * ops.cos2x_band + 2.0 * beta_j * ops.sin2x_band
    try:
        lam, w = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("eigensolver failed for slice Hamiltonian") from exc
    return (w * np.exp(-1j * lam * dt)) @ w.conj().T


class SliceCache:
    """Eigendecompositions and unitaries of every slice for every k in a stack."""

    def __init__(self, stack: "BandStack", pulse: ControlPulse):
        self.stack = stack
        self.pulse = pulse
        h = stack.slice_hamiltonians(pulse.alpha, pulse.beta)
        try:
            self.eigvals, self.eigvecs = np.linalg.eigh(h)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError("eigensolver failed for slice Hamiltonians") from exc
        self.phases = np.exp(-1j * self.eigvals * pulse.dt)
        w = self.eigvecs
        self.unitaries = (w * self.phases[..., np.newaxis, :]) @ _dagger(w)
        self._forward = None

    @property
    def forward(self) -> np.ndarray:
        """Prefix products F_q = U_q ... U_1, shape (M, n+1, nb, nb); F_0 = I."""
        if self._forward is None:
            m, n, nb = self.unitaries.shape[:3]
            out = np.empty((m, n + 1, nb, nb), dtype=complex)
            out[:, 0] = np.eye(nb)
            for q in range(n):
                out[:, q + 1] = self.unitaries[:, q] @ out[:, q]
            self._forward = out
        return self._forward

    def total(self) -> np.ndarray:
        return self.forward[:, -1]

    def backward(self) -> np.ndarray:
        """Suffix products B_q = U_n ... U_{q+1}, shape (M, n+1, nb, nb); B_n = I."""
        m, n, nb = self.unitaries.shape[:3]
        out = np.empty((m, n + 1, nb, nb), dtype=complex)
        out[:, n] = np.eye(nb)
        for q in range(n - 1, -1, -1):
            out[:, q] = out[:, q + 1] @ self.unitaries[:, q]
        return out

    def _rotated_controls(self) -> tuple[np.ndarray, np.ndarray]:
        w = self.eigvecs
        wh = _dagger(w)
        c = 2.0 * self.stack.cos_ops[:, np.newaxis]
        s = 2.0 * self.stack.sin_ops[:, np.newaxis]
        return wh @ c @ w, wh @ s @ w

    def slice_derivatives(self) -> tuple[np.ndarray, np.ndarray]:
        """dU_j/d alpha_j and dU_j/d beta_j, each of shape (M, n, nb, nb)."""
        _, kernel = frechet_kernel(self.eigvals, self.pulse.dt, self.phases)
        c_rot, s_rot = self._rotated_controls()
        w = self.eigvecs
        wh = _dagger(w)
        return w @ (kernel * c_rot) @ wh, w @ (kernel * s_rot) @ wh

    def trace_gradient(self, weight_ops: np.ndarray) -> np.ndarray:
        """Gradient of Tr(Q_l U^(k_l)) w.r.t. every control, for each k.

        ``weight_ops`` is Q with shape (nb, nb) or (M, nb, nb).  Returns a
        complex array of shape (M, 2n): alpha derivatives then beta derivatives.
        Uses d Tr(Q U) / du_q = Tr(F_{q-1} Q B_q dU_q), contracted in the
        eigenbasis of each slice Hamiltonian.
        """
        m, n, nb = self.unitaries.shape[:3]
        if n == 0:
            return np.zeros((m, 0), dtype=complex)
        q = np.broadcast_to(weight_ops, (m, nb, nb))
        fwd = self.forward[:, :n]
        bwd = self.backward()[:, 1:]
        lam_ops = fwd @ q[:, np.newaxis] @ bwd
        w = self.eigvecs
        wh = _dagger(w)
        _, kernel = frechet_kernel(self.eigvals, self.pulse.dt, self.phases)
        # Tr(L W (K o W^dag X W) W^dag) = Tr(Y X) with Y = W ((W^dag L W) o K^T) W^dag
        y = w @ ((wh @ lam_ops @ w) * np.swapaxes(kernel, -1, -2)) @ wh
        g_alpha = 2.0 * np.einsum("mjab,mba->mj", y, self.stack.cos_ops)
        g_beta = 2.0 * np.einsum("mjab,mba->mj", y, self.stack.sin_ops)
        return np.concatenate([g_alpha, g_beta], axis=1)


class BandStack:
    """Band energies and band-basis control operators for a list of quasimomenta."""

    def __init__(self, ks: Sequence[float], energies: np.ndarray, cos_ops: np.ndarray,
                 sin_ops: np.ndarray):
        self.ks = np.asarray(ks, dtype=float)
        self.energies = np.asarray(energies, dtype=float)
        self.cos_ops = np.asarray(cos_ops, dtype=complex)
        self.sin_ops = np.asarray(sin_ops, dtype=complex)

    @classmethod
    def from_spec(cls, spec: LatticeSpec, ks: Sequence[float],
                  bands: Optional[Sequence[BandSolution]] = None) -> "BandStack":
        """Solve the lattice at each k; ``bands`` overrides the solver output."""
        if bands is None:
            bands = [solve_bands(spec, k) for k in ks]
        elif len(bands) != len(ks):
            raise ValueError("need one BandSolution per quasimomentum")
        ops = [control_operators(spec, b) for b in bands]
        return cls(ks, np.array([b.energies for b in bands]),
                   np.array([o.cos2x_band for o in ops]),
                   np.array([o.sin2x_band for o in ops]))

    @property
    def n_bands(self) -> int:
        return self.energies.shape[1]

    def __len__(self) -> int:
        return self.ks.size

    def slice_hamiltonians(self, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
        """H_j for every (k, slice); shape (M, n, nb, nb)."""
        h0 = np.zeros((len(self), 1, self.n_bands, self.n_bands), dtype=complex)
        idx = np.arange(self.n_bands)
        h0[:, 0, idx, idx] = self.energies
        a = 2.0 * np.asarray(alpha, dtype=float)[np.newaxis, :, np.newaxis, np.newaxis]
        b = 2.0 * np.asarray(beta, dtype=float)[np.newaxis, :, np.newaxis, np.newaxis]
        return h0 + a * self.cos_ops[:, np.newaxis] + b * self.sin_ops[:, np.newaxis]

    def evolve(self, pulse: ControlPulse) -> SliceCache:
        return SliceCache(self, pulse)


def _single_stack(spec: LatticeSpec, k: float, bands: Optional[BandSolution]) -> BandStack:
    return BandStack.from_spec(spec, [k], None if bands is None else [bands])


def _check_compatible(pulse: ControlPulse, spec: LatticeSpec) -> None:
    if pulse.r_ref != spec.r:
        raise ValueError(f"pulse was built for r={pulse.r_ref}, lattice has r={spec.r}")


def total_evolution(pulse: ControlPulse, spec: LatticeSpec, k: float,
                    keep_slices: bool = False,
                    bands: Optional[BandSolution] = None) -> PropagatorSet:
    """Ordered product U_n ... U_2 U_1 of slice propagators at quasimomentum k."""
    _check_compatible(pulse, spec)
    cache = _single_stack(spec, k, bands).evolve(pulse)
    return PropagatorSet(k=float(k), u_total=cache.total()[0],
                         slice_unitaries=cache.unitaries[0] if keep_slices else None)


def propagator_derivatives(pulse: ControlPulse, spec: LatticeSpec, k: float,
                           bands: Optional[BandSolution] = None) -> PropagatorSet:
    """Total propagator plus dU/du_q = B_q (dU_q) F_{q-1} for all 2n controls."""
    _check_compatible(pulse, spec)
    cache = _single_stack(spec, k, bands).evolve(pulse)
    n = pulse.n_slices
    d_alpha, d_beta = cache.slice_derivatives()
    fwd = cache.forward[0, :n]
    bwd = cache.backward()[0, 1:]
    derivs = np.concatenate([bwd @ d_alpha[0] @ fwd, bwd @ d_beta[0] @ fwd], axis=0)
    return PropagatorSet(k=float(k), u_total=cache.total()[0],
                         slice_unitaries=cache.unitaries[0], derivatives=derivs)
