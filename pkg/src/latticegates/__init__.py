"""Ensemble optimal control of Bloch-band qubits in a 1-D optical lattice."""

__version__ = "0.1.0"

from .band_model import (
    BandSolution,
    ControlOperators,
    DispersionReport,
    LatticeSpec,
    build_hamiltonian,
    charge_qubit_map,
    control_operators,
    dispersion,
    free_oscillation_period,
    recoil_units,
    solve_bands,
)
from .ensemble_fidelity import (
    EnsembleSpec,
    FidelityReport,
    TargetGate,
    coherent_fidelity,
    ensemble_gate_fidelity,
    fidelity_gradient,
    fine_grid_fidelity,
    state_transfer_fidelity,
)
from .grape import (
    OptimizationResult,
    OptimizerConfig,
    optimize,
    rabi_initial_pulse,
    random_initial_pulse,
)
from .propagation import (
    ControlPulse,
    PhysicalPulse,
    PropagatorSet,
    physical_from_pulse,
    propagator_derivatives,
    pulse_from_physical,
    slice_propagator,
    total_evolution,
)
