"""Gradient-ascent pulse engineering against the coherent ensemble fidelity.

Each restart climbs ``Phi(u)`` along its gradient with an Armijo backtracking
step (shrink 0.5 on rejection, grow 2.0 on acceptance), optionally clipping
the controls to a box after every step.  Restarts are ranked by the fidelity
on the fine verification grid rather than on the optimization ensemble.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from .band_model import LatticeSpec, control_operators, free_oscillation_period, solve_bands
from .ensemble_fidelity import (
    CoherentObjective,
    EnsembleSpec,
    TargetGate,
    fine_grid_fidelity,
)
from .propagation import ControlPulse

log = logging.getLogger(__name__)

ARMIJO_C1 = 1e-4
SHRINK = 0.5
GROW = 2.0
MAX_BACKTRACKS = 60


@dataclass
class OptimizerConfig:
    """Knobs of the ascent loop and the restart recipe.

    ``amplitude_bound`` is a box on |alpha_j| and |beta_j|: ``"auto"`` means
    r/2, ``None`` disables clipping.  ``restarts`` counts one Rabi guess plus
    ``restarts - 1`` random guesses.  ``phi_target`` is an optional early stop
    on the optimization-ensemble fidelity.  ``rabi_k`` is the quasimomentum
    whose 0-1 transition the Rabi guess drives resonantly.
    """

    max_iters: int = 100_000
    step_init: float = 1.0
    grad_tol: float = 1e-8
    phi_tol: float = 1e-9
    window: int = 50
    restarts: int = 11
    amplitude_bound: Union[float, str, None] = "auto"
    slices_per_period: int = 32
    n_fine: int = 100
    seed: int = 0
    phi_target: Optional[float] = None
    jobs: int = 1
    rabi_k: float = 0.0

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not self.step_init > 0:
            raise ValueError("step_init must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.slices_per_period < 1:
            raise ValueError("slices_per_period must be >= 1")
        if isinstance(self.amplitude_bound, str) and self.amplitude_bound != "auto":
            raise ValueError("amplitude_bound must be a number, 'auto' or None")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not -1.0 < self.rabi_k <= 1.0:
            raise ValueError("rabi_k must lie in (-1, 1]")

    def bound_for(self, r: float) -> Optional[float]:
        if self.amplitude_bound == "auto":
            return 0.5 * r
        if self.amplitude_bound is None:
            return None
        return float(self.amplitude_bound)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RestartRecord:
    index: int
    init: str
    phi_coarse: float
    phi_fine: float
    iterations: int
    termination: str


@dataclass
class OptimizationResult:
    best_pulse: ControlPulse
    phi_coarse: float
    phi_fine: float
    trace: np.ndarray
    restart_index: int
    termination: str
    fine_mean: float = float("nan")
    restarts: list = field(default_factory=list)

    def report(self) -> dict:
        return {
            "phi_coarse": self.phi_coarse,
            "phi_fine": self.phi_fine,
            "fine_mean_fidelity": self.fine_mean,
            "trace_length": int(len(self.trace)),
            "termination": self.termination,
            "restart_index": self.restart_index,
            "restarts": [asdict(r) for r in self.restarts],
        }


def slice_grid(spec: LatticeSpec, duration: float, slices_per_period: int) -> tuple[int, float]:
    """Slice count and width for a duration given in free-oscillation periods."""
    if not duration > 0:
        raise ValueError("duration must be positive")
    period = free_oscillation_period(spec)
    n_slices = max(1, int(round(duration * slices_per_period)))
    return n_slices, duration * period / n_slices


def rabi_initial_pulse(spec: LatticeSpec, duration: float, n_slices: int,
                       k_ref: float = 0.0) -> ControlPulse:
    """Resonant pi pulse on the 0-1 transition at ``k_ref``, ignoring dispersion.

    beta_j = A cos(omega t_j - chi) with omega the gap at k_ref and chi the phase
    of <psi_0|sin 2x|psi_1>, which puts the rotating-frame rotation on the x
    axis.  The rotating-wave area condition 2 A |<psi_0|sin 2x|psi_1>| T = pi
    fixes A.  ``duration`` is in free-oscillation periods (the k=0 gap).
    """
    if not duration > 0:
        raise ValueError("duration must be positive")
    bands = solve_bands(spec, k_ref)
    coupling = control_operators(spec, bands).sin2x_band[0, 1]
    if abs(coupling) < 1e-12:
        raise ValueError(f"vanishing 0-1 matrix element of sin 2x at k={k_ref}")
    omega = bands.energies[1] - bands.energies[0]
    total = duration * free_oscillation_period(spec)
    dt = total / n_slices
    t_mid = (np.arange(n_slices) + 0.5) * dt
    amp = np.pi / (2.0 * abs(coupling) * total)
    beta = amp * np.cos(omega * t_mid - np.angle(coupling))
    return ControlPulse(np.zeros(n_slices), beta, dt, spec.r, {"init": "rabi"})


def random_initial_pulse(config: OptimizerConfig, spec: LatticeSpec, duration: float,
                         n_slices: int,
                         rng: Optional[np.random.Generator] = None) -> ControlPulse:
    """Uniform random controls in the amplitude box, smoothed by a 3-point average."""
    bound = config.bound_for(spec.r)
    if bound is None:
        raise ValueError("random initial pulses need an amplitude bound")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    period = free_oscillation_period(spec)
    dt = duration * period / n_slices
    raw = rng.uniform(-bound, bound, size=(2, n_slices))
    padded = np.pad(raw, ((0, 0), (1, 1)), mode="edge")
    smooth = (padded[:, :-2] + padded[:, 1:-1] + padded[:, 2:]) / 3.0
    return ControlPulse(smooth[0], smooth[1], dt, spec.r, {"init": "random"})


def _project(u: np.ndarray, bound: Optional[float]) -> np.ndarray:
    if bound is None:
        return u
    return np.clip(u, -bound, bound)


def ascend(objective: CoherentObjective, pulse: ControlPulse, config: OptimizerConfig,
           bound: Optional[float]):
    """Run the line-search ascent from ``pulse``.

    Returns ``(pulse, phi, trace, termination)``.  ``trace`` holds the
    objective at the start and after every accepted update, so it is
    non-decreasing.
    """
    u = _project(pulse.controls, bound)
    current = objective.evaluate(pulse.with_controls(u))
    trace = [current.phi]
    step = config.step_init
    termination = "iteration_cap"
    for it in range(config.max_iters):
        if config.phi_target is not None and current.phi >= config.phi_target:
            termination = "target_reached"
            break
        grad = current.gradient
        gnorm = float(np.linalg.norm(grad))
        if gnorm < config.grad_tol:
            termination = "converged"
            break
        accepted = None
        for _ in range(MAX_BACKTRACKS):
            trial_u = _project(u + step * grad, bound)
            trial = objective.evaluate(current.pulse.with_controls(trial_u))
            if trial.phi >= current.phi + ARMIJO_C1 * float(grad @ (trial_u - u)):
                accepted = trial
                break
            step *= SHRINK
        if accepted is None:
            termination = "converged"
            break
        current, u = accepted, trial_u
        step *= GROW
        trace.append(current.phi)
        w = config.window
        if len(trace) > w:
            old = trace[-w - 1]
            if (trace[-1] - old) <= config.phi_tol * max(abs(old), 1e-300):
                termination = "converged"
                break
    log.debug("ascent finished: phi=%.8f after %d updates (%s)",
              current.phi, len(trace) - 1, termination)
    return current.pulse, current.phi, np.array(trace), termination


def _initial_guesses(config: OptimizerConfig, spec: LatticeSpec, duration: float,
                     n_slices: int, init) -> list:
    """(label, pulse) for every restart, deterministic in ``config.seed``."""
    if isinstance(init, ControlPulse):
        return [("file", init)]
    if init not in ("restarts", "rabi", "random"):
        raise ValueError(f"unknown init strategy {init!r}")
    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    guesses = []
    for i in range(config.restarts):
        if init == "rabi" or (init == "restarts" and i == 0):
            guesses.append(("rabi", rabi_initial_pulse(spec, duration, n_slices,
                                                       config.rabi_k)))
        else:
            rng = np.random.default_rng(seeds[i])
            guesses.append(("random", random_initial_pulse(config, spec, duration,
                                                           n_slices, rng)))
    return guesses


def _run_restart(index, label, pulse, config, spec, ens, target):
    objective = CoherentObjective.for_gate(spec, ens, target)
    bound = config.bound_for(spec.r)
    best, phi, trace, term = ascend(objective, pulse, config, bound)
    fine = fine_grid_fidelity(best, spec, target, config.n_fine)
    record = RestartRecord(index, label, phi, fine.phi, len(trace) - 1, term)
    return record, best, trace, fine.mean_fidelity


def optimize(config: OptimizerConfig, spec: LatticeSpec, ens: EnsembleSpec,
             target: TargetGate, duration: float,
             init: Union[ControlPulse, str] = "restarts") -> OptimizationResult:
    """Optimize a fixed-duration pulse; ``duration`` is in free-oscillation periods.

    ``init`` is a starting :class:`ControlPulse`, ``"rabi"``, ``"random"``, or
    ``"restarts"`` (one Rabi guess followed by random guesses).
    """
    if isinstance(init, ControlPulse):
        if init.r_ref != spec.r:
            raise ValueError("initial pulse was built for a different lattice depth")
        n_slices = init.n_slices
    else:
        n_slices, _ = slice_grid(spec, duration, config.slices_per_period)
    guesses = _initial_guesses(config, spec, duration, n_slices, init)
    jobs = [(i, label, pulse) for i, (label, pulse) in enumerate(guesses)]
    if config.jobs != 1 and len(jobs) > 1:
        from joblib import Parallel, delayed

        outcomes = Parallel(n_jobs=config.jobs)(
            delayed(_run_restart)(i, lab, p, config, spec, ens, target) for i, lab, p in jobs
        )
    else:
        outcomes = [_run_restart(i, lab, p, config, spec, ens, target) for i, lab, p in jobs]
    # deterministic merge: highest fine fidelity, ties to the lowest restart index
    winner = max(range(len(outcomes)), key=lambda i: (outcomes[i][0].phi_fine, -i))
    record, best, trace, fine_mean = outcomes[winner]
    best.meta = dict(best.meta, restart=record.index)
    return OptimizationResult(
        best_pulse=best,
        phi_coarse=record.phi_coarse,
        phi_fine=record.phi_fine,
        trace=trace,
        restart_index=record.index,
        termination=record.termination,
        fine_mean=fine_mean,
        restarts=[o[0] for o in outcomes],
    )
