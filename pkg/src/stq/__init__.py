"""Pulse synthesis and noise analysis for two exchange-coupled singlet-triplet qubits."""
from .spin_model import (DeviceModel, MagneticGradients, GateTarget, exchange_from_detuning,
                         heisenberg_ms0, capacitive_ms0, hamiltonian_total, detuning_sensitivity,
                         target_gate_matrix)
from .pulses import (PulseProgram, ImpulseResponse, RenderedTraces, validate,
                     default_impulse_response, render, rescale_samplerate)
from .propagator import (PropagationResult, step_unitary, evolve, coherent_leakage,
                         evolve_with_gradient)
from .noise import (NoiseModel, QuasistaticEnsemble, gauss_hermite_ensemble, lindblad_propagate,
                    colored_noise_trace, monte_carlo_evaluate)
from .fidelity import (EvaluationReport, average_gate_fidelity, fidelity_from_superoperator,
                       infidelity_report)

__version__ = "0.1.0"
