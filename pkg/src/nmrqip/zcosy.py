"""Heteronuclear z-COSY peak lists in the linear regime.

Each omega1 row is the small-angle readout of the population change produced
by inverting one transition, so every cross peak marks a pair of transitions
that share an energy level. Rows are simulated directly as peak lists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .pulses import crush, hard_pulse, readout_spectrum, selective_pulse
from .spins import SpinModel, Transition
from .state import equilibrium_state, subtract_states

NONE = "none"
PROGRESSIVE = "progressive"
REGRESSIVE = "regressive"


@dataclass(frozen=True)
class Peak:
    omega1: float
    omega2: float
    t1_id: int
    t2_id: int
    amplitude: float
    species: str  # observed species (omega2 dimension)

    @property
    def key(self) -> tuple[int, int]:
        return (self.t1_id, self.t2_id)

    @property
    def is_diagonal(self) -> bool:
        return self.t1_id == self.t2_id


@dataclass(frozen=True)
class PeakList2D:
    """Peaks keyed by ``(t1_id, t2_id)``, kept in canonical key order."""

    entries: tuple[Peak, ...] = ()

    @classmethod
    def from_peaks(cls, peaks: Iterable[Peak]) -> "PeakList2D":
        by_key: dict[tuple[int, int], Peak] = {}
        for p in peaks:
            if p.key in by_key:
                raise ValueError(f"duplicate peak at {p.key}")
            by_key[p.key] = p
        return cls(tuple(by_key[k] for k in sorted(by_key)))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def as_dict(self) -> dict[tuple[int, int], Peak]:
        return {p.key: p for p in self.entries}

    def get(self, t1: int, t2: int) -> Peak | None:
        return self.as_dict().get((t1, t2))

    def diagonal(self) -> dict[int, Peak]:
        return {p.t1_id: p for p in self.entries if p.is_diagonal}

    def row(self, t1: int) -> list[Peak]:
        return [p for p in self.entries if p.t1_id == t1]

    def ids(self) -> list[int]:
        return sorted({p.t1_id for p in self.entries} | {p.t2_id for p in self.entries})


def inversion_difference(model: SpinModel, transition_id: int, crush_mode: str = "all"):
    """Equilibrium inverted across one transition (then crushed) minus equilibrium."""
    eq = equilibrium_state(model)
    inverted = crush(selective_pulse(eq, transition_id, math.pi), crush_mode)
    return subtract_states(inverted, eq)


def simulate_hetzcosy(
    model: SpinModel,
    observed_species: str,
    alpha: float = math.pi / 20,
    beta: float = math.pi / 20,
    floor: float = 1e-9,
) -> PeakList2D:
    """One HET-Z-COSY experiment observing ``observed_species`` during t2.

    Row ``r`` holds ``sin(alpha) * intensity(r)`` times the ``beta`` readout of
    the inversion difference for ``r``; entries below ``floor`` times the
    diagonal magnitude are not emitted.
    """
    peaks = []
    for r in model.transitions:
        diff = inversion_difference(model, r.id)
        spec = readout_spectrum(diff, observed_species, beta)
        scale = math.sin(alpha) * r.intensity
        diag_mag = 2 * math.sin(beta) * r.intensity**2 * math.sin(alpha) * abs(
            model.populations[r.upper] - model.populations[r.lower]
        )
        for ln in spec.lines:
            amp = scale * ln.amplitude
            if abs(amp) > floor * max(diag_mag, 1e-300):
                peaks.append(Peak(r.freq, ln.freq, r.id, ln.transition_id, amp, observed_species))
    return PeakList2D.from_peaks(peaks)


def merge_experiments(lists: Sequence[PeakList2D], rel_tol: float = 1e-12) -> PeakList2D:
    """Union of per-species experiments; identical duplicates collapse, conflicting ones raise."""
    merged: dict[tuple[int, int], Peak] = {}
    for pl in lists:
        for p in pl.entries:
            q = merged.get(p.key)
            if q is None:
                merged[p.key] = p
            elif not math.isclose(q.amplitude, p.amplitude, rel_tol=rel_tol, abs_tol=0.0):
                raise ValueError(f"conflicting amplitudes at {p.key}: {q.amplitude!r} vs {p.amplitude!r}")
    return PeakList2D(tuple(merged[k] for k in sorted(merged)))


def symmetrize(peaks: PeakList2D, tol: float = 0.0) -> PeakList2D:
    """Keep the lower-magnitude amplitude of each mirrored cross-peak pair at both positions.

    Unpaired cross peaks are dropped and the diagonal is untouched. When the
    magnitudes agree within ``tol`` the ``(i, j)``, ``i < j`` entry wins.
    """
    table = peaks.as_dict()
    out = []
    for (i, j), p in sorted(table.items()):
        if i == j:
            out.append(p)
            continue
        mirror = table.get((j, i))
        if mirror is None:
            continue
        a, b = (p, mirror) if i < j else (mirror, p)
        keep = b if abs(b.amplitude) < abs(a.amplitude) - tol else a
        out.append(Peak(p.omega1, p.omega2, i, j, keep.amplitude, p.species))
    return PeakList2D(tuple(out))


@dataclass(frozen=True)
class ConnectivityMatrix:
    """Symmetric progressive/regressive relation over transition ids."""

    ids: tuple[int, ...]
    entries: Mapping[tuple[int, int], str] = field(default_factory=dict)  # keys (i, j) with i < j

    def __post_init__(self):
        known = set(self.ids)
        for (i, j), kind in self.entries.items():
            if not i < j:
                raise ValueError(f"connectivity key ({i},{j}) must satisfy i < j")
            if i not in known or j not in known:
                raise ValueError(f"connectivity ({i},{j}) references an unknown transition")
            if kind not in (PROGRESSIVE, REGRESSIVE):
                raise ValueError(f"bad connectivity type {kind!r}")

    def get(self, i: int, j: int) -> str:
        if i == j:
            return NONE
        return self.entries.get((min(i, j), max(i, j)), NONE)

    def neighbors(self, i: int) -> list[int]:
        return sorted({b if a == i else a for a, b in self.entries if i in (a, b)})

    def as_array(self) -> np.ndarray:
        """Integer matrix in ``ids`` order: +1 progressive, -1 regressive, 0 none."""
        pos = {t: k for k, t in enumerate(self.ids)}
        m = np.zeros((len(self.ids), len(self.ids)), dtype=int)
        for (i, j), kind in self.entries.items():
            v = 1 if kind == PROGRESSIVE else -1
            m[pos[i], pos[j]] = m[pos[j], pos[i]] = v
        return m


def extract_connectivity(peaks: PeakList2D, ids: Iterable[int] | None = None) -> ConnectivityMatrix:
    """Classify cross peaks by their sign relative to the row's diagonal peak.

    Opposite sign means progressive, same sign regressive.
    """
    table = peaks.as_dict()
    diag = peaks.diagonal()
    entries: dict[tuple[int, int], str] = {}
    for (i, j), p in sorted(table.items()):
        if i == j:
            continue
        if i not in diag:
            raise ValueError(f"cross peak ({i},{j}) has no diagonal peak in row {i}")
        kind = PROGRESSIVE if np.sign(p.amplitude) != np.sign(diag[i].amplitude) else REGRESSIVE
        key = (min(i, j), max(i, j))
        if entries.setdefault(key, kind) != kind:
            raise ValueError(f"inconsistent connectivity signs for pair {key}")
    all_ids = set(peaks.ids()) | set(ids or ())
    return ConnectivityMatrix(tuple(sorted(all_ids)), entries)


def ladder_relation(a: Transition, b: Transition) -> str:
    """Geometric relation of two transitions from their level pairs."""
    shared = {a.upper, a.lower} & {b.upper, b.lower}
    if a.id == b.id or len(shared) != 1:
        return NONE
    (s,) = shared
    a_upper, b_upper = s == a.upper, s == b.upper
    return REGRESSIVE if a_upper == b_upper else PROGRESSIVE


def geometric_connectivity(transitions: Sequence[Transition]) -> ConnectivityMatrix:
    entries = {}
    for k, a in enumerate(transitions):
        for b in transitions[k + 1:]:
            rel = ladder_relation(a, b)
            if rel != NONE:
                entries[(min(a.id, b.id), max(a.id, b.id))] = rel
    return ConnectivityMatrix(tuple(sorted(t.id for t in transitions)), entries)


def full_hetzcosy(model: SpinModel, alpha: float = math.pi / 20, beta: float = math.pi / 20) -> PeakList2D:
    """All per-species experiments merged and symmetrized."""
    lists = [simulate_hetzcosy(model, sp, alpha, beta) for sp in model.system.species_order]
    return symmetrize(merge_experiments(lists))


def free_evolution(state, t: float):
    """Evolution for ``t`` seconds under the Hamiltonian: ``rho_ij *= exp(-2 pi i (E_i - E_j) t)``."""
    e = state.model.eigen.energies
    phase = np.exp(-2j * math.pi * (e[:, None] - e[None, :]) * t)
    return state.with_matrix(state.matrix * phase)


def zero_quantum_leakage(model: SpinModel, alpha: float = math.pi / 20, t1: float = 1.37e-3) -> dict[str, float]:
    """Zero-quantum coherence surviving the gradient in one z-COSY increment.

    A nonselective pi/2, free evolution for ``t1`` (which builds multi-spin
    terms through the couplings), the ``alpha`` pulse, then the crusher. A
    gradient cannot dephase homonuclear zero-quantum coherence; this is the
    artifact zero-quantum shifting removes. Returns the summed off-diagonal
    magnitude left by each crush mode.
    """
    rho = equilibrium_state(model)
    for sp in model.system.species_order:
        rho = hard_pulse(rho, sp, math.pi / 2)
    rho = free_evolution(rho, t1)
    for sp in model.system.species_order:
        rho = hard_pulse(rho, sp, alpha)
    off = ~np.eye(model.dim, dtype=bool)
    return {
        mode: float(np.abs(crush(rho, mode).matrix[off]).sum())
        for mode in ("all", "retain_homonuclear_zq")
    }
