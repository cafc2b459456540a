"""Simulation of oriented spin-1/2 NMR systems and quantum-information protocols on them."""

from .compiler import CompileError, PulseSequence, compile_level_swap, compile_permutation
from .levels import LevelDiagram, ReconstructionError, reconstruct_levels, verify_diagram
from .protocols import (
    CoherenceReport,
    ProtocolError,
    ProtocolScript,
    apply_cnnot,
    apply_cswap,
    coherence_report,
    execute_script,
    fidelity,
    prepare_pops,
    prepare_sallt,
    run_entanglement_transfer,
)
from .pulses import PulseSpec, Spectrum1D, crush, hard_pulse, readout_spectrum, selective_pulse
from .spins import EigenSystem, LabelMap, SpinModel, SpinSystem, Transition, TransitionTable, build_spin_system
from .state import DensityState, equilibrium_state
from .zcosy import ConnectivityMatrix, PeakList2D, extract_connectivity, simulate_hetzcosy, symmetrize

__all__ = [
    "CoherenceReport", "CompileError", "ConnectivityMatrix", "DensityState", "EigenSystem", "LabelMap",
    "LevelDiagram", "PeakList2D", "ProtocolError", "ProtocolScript", "PulseSequence", "PulseSpec",
    "ReconstructionError", "Spectrum1D", "SpinModel", "SpinSystem", "Transition", "TransitionTable",
    "apply_cnnot", "apply_cswap", "build_spin_system", "coherence_report", "compile_level_swap",
    "compile_permutation", "crush", "equilibrium_state", "execute_script", "extract_connectivity",
    "fidelity", "hard_pulse", "prepare_pops", "prepare_sallt", "readout_spectrum", "reconstruct_levels",
    "run_entanglement_transfer", "selective_pulse", "simulate_hetzcosy", "symmetrize", "verify_diagram",
]
