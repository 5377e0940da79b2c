"""Scripted numerical studies built on the optimizer.

* per-k gate-error scans of an optimized pulse,
* best fidelity over a grid of lattice depths and gate durations,
* single-k optimization followed by a quasimomentum response scan, whose
  width shrinks as the pulse gets longer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .band_model import LatticeSpec, dispersion
from .ensemble_fidelity import EnsembleSpec, TargetGate, fine_grid_fidelity
from .grape import OptimizationResult, OptimizerConfig, optimize
from .io import sig, write_csv
from .propagation import ControlPulse

log = logging.getLogger(__name__)

SWEEP_HEADER = ("r", "duration_periods", "dispersion", "phi_fine_best", "phi_coarse_best",
                "restart_winner", "termination")


@dataclass
class ErrorScan:
    k: np.ndarray
    error: np.ndarray

    @property
    def max_error(self) -> float:
        return float(self.error.max())

    @property
    def mean_error(self) -> float:
        return float(self.error.mean())


def gate_error_scan(result: Union[OptimizationResult, ControlPulse], n_points: int = 100,
                    spec: Optional[LatticeSpec] = None,
                    target: Optional[TargetGate] = None) -> ErrorScan:
    """1 - per-k fidelity on the fine grid."""
    pulse = result.best_pulse if isinstance(result, OptimizationResult) else result
    spec = spec or LatticeSpec(pulse.r_ref)
    target = target or TargetGate.x_pi()
    rep = fine_grid_fidelity(pulse, spec, target, n_points)
    return ErrorScan(rep.k_samples, 1.0 - rep.per_k_fidelity)


@dataclass
class SweepGrid:
    r_values: Sequence[float]
    durations: Sequence[float]
    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    k_samples: int = 20
    n_bands: int = 6

    def __post_init__(self):
        if len(self.r_values) == 0 or len(self.durations) == 0:
            raise ValueError("sweep grid needs at least one depth and one duration")
        if any(not d > 0 for d in self.durations):
            raise ValueError("durations must be positive")


@dataclass
class SweepRow:
    r: float
    duration_periods: float
    dispersion: float
    phi_fine_best: float
    phi_coarse_best: float
    restart_winner: int
    termination: str

    def as_csv(self) -> tuple:
        return (sig(self.r), sig(self.duration_periods), sig(self.dispersion),
                sig(self.phi_fine_best), sig(self.phi_coarse_best), self.restart_winner,
                self.termination)


def _sweep_cell(r: float, duration: float, grid: SweepGrid) -> SweepRow:
    try:
        spec = LatticeSpec(r, n_bands=grid.n_bands)
        d_value = dispersion(spec).d_value
        res = optimize(grid.config, spec, EnsembleSpec.uniform(grid.k_samples),
                       TargetGate.x_pi(), duration)
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        log.warning("sweep cell r=%s T=%s failed: %s", r, duration, exc)
        return SweepRow(r, duration, float("nan"), float("nan"), float("nan"), -1,
                        f"error: {exc}")
    return SweepRow(r, duration, d_value, res.phi_fine, res.phi_coarse, res.restart_index,
                    res.termination)


def depth_duration_sweep(grid: SweepGrid, jobs: int = 1) -> list[SweepRow]:
    """Best fine-grid fidelity for every (r, duration) cell, ordered by (r, T)."""
    cells = [(float(r), float(t)) for r in grid.r_values for t in grid.durations]
    if jobs != 1 and len(cells) > 1:
        from joblib import Parallel, delayed

        rows = Parallel(n_jobs=jobs)(delayed(_sweep_cell)(r, t, grid) for r, t in cells)
    else:
        rows = [_sweep_cell(r, t, grid) for r, t in cells]
    return sorted(rows, key=lambda row: (row.r, row.duration_periods))


def write_sweep(path, rows: Sequence[SweepRow]):
    return write_csv(path, SWEEP_HEADER, (row.as_csv() for row in rows))


def response_fwhm(ks: np.ndarray, fidelity: np.ndarray, center: float) -> float:
    """Full width at half maximum of the peak nearest ``center``.

    The zone is periodic, so the walk outward wraps around.  Crossings are
    located by linear interpolation between grid points; a curve that never
    drops below half its peak has width 2 (the whole zone).
    """
    ks = np.asarray(ks, dtype=float)
    f = np.asarray(fidelity, dtype=float)
    n = ks.size
    step = 2.0 / n
    dist = np.abs((ks - center + 1.0) % 2.0 - 1.0)
    near = np.flatnonzero(dist <= step + 1e-12)
    peak = near[np.argmax(f[near])]
    half = 0.5 * f[peak]
    width = 0.0
    for direction in (1, -1):
        idx = peak
        crossed = False
        for travelled in range(1, n):
            nxt = (peak + direction * travelled) % n
            if f[nxt] < half:
                frac = (f[idx] - half) / (f[idx] - f[nxt])
                width += (travelled - 1 + frac) * step
                crossed = True
                break
            idx = nxt
        if not crossed:
            return 2.0
    return min(width, 2.0)


@dataclass
class NyquistRun:
    k_opt: float
    durations: list
    ks: np.ndarray
    scan: list
    peak_width: list
    phi_opt: list
    peak_k: list
    failures: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "k_opt": self.k_opt,
            "durations": list(self.durations),
            "fwhm": list(self.peak_width),
            "phi_at_k_opt": list(self.phi_opt),
            "peak_k": list(self.peak_k),
            "failures": dict(self.failures),
        }


def nyquist_experiment(spec: LatticeSpec, k_opt: float, durations: Sequence[float],
                       n_points: int = 100, config: Optional[OptimizerConfig] = None,
                       target: Optional[TargetGate] = None) -> NyquistRun:
    """Optimize at a single quasimomentum and scan the response over the zone.

    The Rabi guess of every restart is resonant with the 0-1 transition at k_opt.
    """
    if not -1.0 < k_opt < 1.0:
        raise ValueError("k_opt must lie inside the zone")
    # the Rabi guess is tuned to the optimized quasimomentum
    config = replace(config or OptimizerConfig(restarts=1), rabi_k=float(k_opt))
    target = target or TargetGate.x_pi()
    ens = EnsembleSpec.single(k_opt)
    run = NyquistRun(float(k_opt), [], None, [], [], [], [])
    for duration in durations:
        try:
            res = optimize(config, spec, ens, target, duration, init="restarts")
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            log.warning("nyquist duration %s failed: %s", duration, exc)
            run.failures[str(duration)] = str(exc)
            continue
        rep = fine_grid_fidelity(res.best_pulse, spec, target, n_points)
        run.ks = rep.k_samples
        run.durations.append(float(duration))
        run.scan.append(rep.per_k_fidelity)
        run.peak_width.append(response_fwhm(rep.k_samples, rep.per_k_fidelity, k_opt))
        run.phi_opt.append(res.phi_coarse)
        run.peak_k.append(float(rep.k_samples[np.argmax(rep.per_k_fidelity)]))
    return run


def write_nyquist(path, run: NyquistRun):
    rows = ((sig(t), sig(k), sig(f)) for t, curve in zip(run.durations, run.scan)
            for k, f in zip(run.ks, curve))
    return write_csv(path, ("duration_periods", "k", "fidelity"), rows)
