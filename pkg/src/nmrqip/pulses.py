"""Idealized pulses acting on eigenbasis density matrices.

Transition-selective pulses are ideal two-level rotations, hard pulses rotate
every spin of one species, gradients are modeled as coherence crushing, and
readout converts population differences into signed line amplitudes.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .spins import SpinModel
from .state import DensityState

log = logging.getLogger(__name__)

CrushMode = Literal["all", "retain_homonuclear_zq"]


@dataclass(frozen=True)
class PulseSpec:
    kind: Literal["selective", "hard"]
    target: int | str  # transition id for selective, species for hard
    angle: float
    phase: float = 0.0
    flip_error: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.angle) or not math.isfinite(self.phase):
            raise ValueError("pulse angle and phase must be finite")
        if self.kind not in ("selective", "hard"):
            raise ValueError(f"unknown pulse kind {self.kind!r}")


def rotation(theta: float, phi: float) -> np.ndarray:
    """2x2 rotation ``exp(-i theta/2 (cos(phi) sx + sin(phi) sy))`` in the ``[upper, lower]`` basis."""
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array(
        [[c, -1j * s * complex(math.cos(phi), -math.sin(phi))],
         [-1j * s * complex(math.cos(phi), math.sin(phi)), c]]
    )


def selective_pulse(
    state: DensityState,
    transition_id: int,
    angle: float,
    phase: float = 0.0,
    flip_error: float = 0.0,
) -> DensityState:
    """Rotate the two levels of one transition, leaving every other element untouched."""
    t = state.model.transitions.get(transition_id)
    r = rotation(angle * (1 + flip_error), phase)
    idx = [t.upper, t.lower]
    m = state.matrix.copy()
    m[idx, :] = r @ m[idx, :]
    m[:, idx] = m[:, idx] @ r.conj().T
    return state.with_matrix(m)


def hard_rotation(model: SpinModel, species: str, angle: float, phase: float = 0.0) -> np.ndarray:
    """Eigenbasis unitary of a nonselective rotation of every ``species`` spin."""
    sys = model.system
    if species not in sys.species_order:
        raise KeyError(f"unknown species {species!r}")
    r = rotation(angle, phase)
    u = np.ones((1, 1), dtype=complex)
    for sp in sys.species:
        u = np.kron(u, r if sp == species else np.eye(2))
    v = model.eigen.vectors
    return v.conj().T @ u @ v


def hard_pulse(
    state: DensityState,
    species: str,
    angle: float,
    phase: float = 0.0,
    flip_error: float = 0.0,
) -> DensityState:
    u = hard_rotation(state.model, species, angle * (1 + flip_error), phase)
    return state.with_matrix(u @ state.matrix @ u.conj().T)


def apply_pulse(state: DensityState, pulse: PulseSpec) -> DensityState:
    if pulse.kind == "selective":
        return selective_pulse(state, int(pulse.target), pulse.angle, pulse.phase, pulse.flip_error)
    return hard_pulse(state, str(pulse.target), pulse.angle, pulse.phase, pulse.flip_error)


def zq_mask(model: SpinModel) -> np.ndarray:
    """True where two levels share every per-species M (diagonal included)."""
    man = model.eigen.manifold
    return (man[:, None, :] == man[None, :, :]).all(axis=2)


def crush(state: DensityState, mode: CrushMode = "all") -> DensityState:
    """Gradient crusher.

    ``all`` keeps only populations. ``retain_homonuclear_zq`` also keeps
    coherences between levels of identical per-species M, which a gradient
    cannot dephase.
    """
    m = state.matrix
    if mode == "all":
        return state.with_matrix(np.diag(m.diagonal()))
    if mode in ("retain_homonuclear_zq", "zq"):
        return state.with_matrix(np.where(zq_mask(state.model), m, 0))
    raise ValueError(f"unknown crush mode {mode!r}")


@dataclass(frozen=True)
class SpectrumLine:
    freq: float
    amplitude: float
    transition_id: int
    species: str


@dataclass(frozen=True)
class Spectrum1D:
    lines: tuple[SpectrumLine, ...]
    species: str
    linewidth: float = 1.0

    def amplitudes(self) -> dict[int, float]:
        return {ln.transition_id: ln.amplitude for ln in self.lines}

    def render(self, grid: np.ndarray | None = None, points: int = 4096) -> tuple[np.ndarray, np.ndarray]:
        """Sum of Lorentzians (peak height = amplitude, FWHM = linewidth)."""
        if grid is None:
            freqs = [ln.freq for ln in self.lines] or [0.0]
            pad = 10 * self.linewidth + 0.05 * (max(freqs) - min(freqs))
            grid = np.linspace(min(freqs) - pad, max(freqs) + pad, points)
        half = self.linewidth / 2
        trace = np.zeros_like(grid, dtype=float)
        for ln in self.lines:
            trace += ln.amplitude * half**2 / ((grid - ln.freq) ** 2 + half**2)
        return grid, trace

    def to_csv(self) -> str:
        from .io import fmt

        rows = ["freq_hz,amplitude,transition_id,species"]
        rows += [f"{fmt(ln.freq)},{fmt(ln.amplitude)},{ln.transition_id},{ln.species}" for ln in self.lines]
        return "\n".join(rows) + "\n"

    def to_record(self) -> dict:
        from .io import rounded

        return {
            "species": self.species,
            "linewidth_hz": rounded(self.linewidth),
            "lines": [
                {"freq_hz": rounded(ln.freq), "amplitude": rounded(ln.amplitude),
                 "transition_id": ln.transition_id, "species": ln.species}
                for ln in self.lines
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=2, sort_keys=True) + "\n"


def readout_spectrum(
    state: DensityState,
    species: str,
    angle: float = math.pi / 20,
    linewidth: float = 1.0,
    exact: bool = False,
) -> Spectrum1D:
    """Small-angle readout of ``species``.

    The fast path gives ``sin(angle) * intensity * (P_upper - P_lower)``, so
    equilibrium lines are positive and inverted lines negative. ``exact=True``
    applies the actual rotation and reads the single-quantum coherences.
    """
    if abs(angle) > math.pi / 8:
        log.warning("readout angle %.4g rad is outside the linear regime", angle)
    model = state.model
    table = model.transitions.of_species(species)
    if species not in model.system.species_order:
        raise KeyError(f"unknown species {species!r}")
    if exact:
        fplus = model.raising(species)
        u = hard_rotation(model, species, angle, 0.0)
        rho = u @ state.matrix @ u.conj().T
        amps = [-2.0 * (rho[t.lower, t.upper] * fplus[t.upper, t.lower]).imag for t in table]
    else:
        pops = state.matrix.diagonal().real
        s = math.sin(angle)
        amps = [s * t.intensity * (pops[t.upper] - pops[t.lower]) for t in table]
    lines = tuple(SpectrumLine(t.freq, float(a), t.id, t.species) for t, a in zip(table, amps))
    return Spectrum1D(lines, species, linewidth)
