"""Quantum-information protocols on simulated deviation density matrices.

Covers pseudopure-state preparation (a pair of pseudopure states by
subtraction, or a subsystem pseudopure state by spatial averaging), controlled
gates built from selective pi pulses, and the entanglement creation and
transfer run, together with a line-oriented protocol script language, a
fidelity measure and a coherence report.
"""

from __future__ import annotations

import cmath
import math
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .compiler import CompileError, compile_level_swap, sequence_permutation
from .pulses import PulseSpec, apply_pulse, crush, hard_pulse, selective_pulse
from .spins import LabelMap, SpinModel, Transition
from .state import DensityState, equilibrium_state, subtract_states


class ProtocolError(ValueError):
    """A protocol precondition failed (bad transition, invalid ladder, unknown tag)."""


class ScriptError(ValueError):
    """Malformed or unresolvable protocol script; the message names the line."""


# --- protocol scripts ------------------------------------------------------------

_ANGLE = re.compile(r"^([+-]?)(\d*\.?\d*)\*?(pi)?(?:/(\d*\.?\d+))?$")
CRUSH_MODES = ("all", "retain_homonuclear_zq", "zq")


def parse_angle(text: str) -> float:
    """Angles in radians: ``1.57``, ``pi``, ``pi/2``, ``-pi/2``, ``3pi/4``, ``0.5*pi``."""
    m = _ANGLE.match(text.strip().lower())
    if not m or not (m.group(2) or m.group(3)):
        raise ValueError(f"bad angle {text!r}")
    sign, num, pi, den = m.groups()
    x = float(num) if num else 1.0
    if pi:
        x *= math.pi
    if den:
        x /= float(den)
    return -x if sign == "-" else x


@dataclass(frozen=True)
class Step:
    op: str  # pulse | crush | subtract | snapshot
    args: tuple
    line: int = 0


@dataclass(frozen=True)
class ProtocolScript:
    """Ordered protocol steps.

    Text format, one step per line, ``#`` starts a comment::

        pulse selective <id | label-label> <angle> [phase]
        pulse hard <species> <angle> [phase]
        crush all | retain_homonuclear_zq
        subtract <tag>        # state minus a snapshot ("equilibrium" is predefined)
        snapshot <tag>
    """

    steps: tuple[Step, ...]

    @classmethod
    def parse(cls, text: str, source: str = "<script>") -> "ProtocolScript":
        steps = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            where = f"{source}:{lineno}"
            tok = line.split()
            op = tok[0]
            try:
                if op == "pulse":
                    if len(tok) not in (4, 5) or tok[1] not in ("selective", "hard"):
                        raise ValueError("expected 'pulse selective|hard <target> <angle> [phase]'")
                    target = tok[2]
                    if tok[1] == "selective" and target.isdigit():
                        target = int(target)
                    angle = parse_angle(tok[3])
                    phase = parse_angle(tok[4]) if len(tok) == 5 else 0.0
                    steps.append(Step("pulse", (tok[1], target, angle, phase), lineno))
                elif op == "crush":
                    if len(tok) != 2 or tok[1] not in CRUSH_MODES:
                        raise ValueError(f"expected 'crush <mode>' with mode in {CRUSH_MODES}")
                    steps.append(Step("crush", (tok[1],), lineno))
                elif op in ("subtract", "snapshot"):
                    if len(tok) != 2:
                        raise ValueError(f"expected '{op} <tag>'")
                    steps.append(Step(op, (tok[1],), lineno))
                else:
                    raise ValueError(f"unknown step {op!r}")
            except ValueError as exc:
                raise ScriptError(f"{where}: {exc}: {raw.strip()!r}") from None
        return cls(tuple(steps))

    def to_text(self) -> str:
        from .io import fmt

        out = []
        for s in self.steps:
            if s.op == "pulse":
                kind, target, angle, phase = s.args
                out.append(f"pulse {kind} {target} {fmt(angle)} {fmt(phase)}")
            else:
                out.append(f"{s.op} {s.args[0]}")
        return "\n".join(out) + ("\n" if out else "")

    def resolve(self, model: SpinModel, source: str = "<script>") -> "ProtocolScript":
        """Replace label-pair targets by transition ids and check every reference."""
        resolved, tags = [], {"equilibrium"}
        for s in self.steps:
            where = f"{source}:{s.line}"
            if s.op == "pulse" and s.args[0] == "selective":
                try:
                    t = model.resolve_transition(s.args[1])
                except (KeyError, ValueError) as exc:
                    raise ScriptError(f"{where}: {exc.args[0] if exc.args else exc}") from None
                s = Step("pulse", ("selective", t.id, *s.args[2:]), s.line)
            elif s.op == "pulse" and s.args[1] not in model.system.species_order:
                raise ScriptError(f"{where}: unknown species {s.args[1]!r}")
            elif s.op == "subtract" and s.args[0] not in tags:
                raise ScriptError(f"{where}: unknown snapshot tag {s.args[0]!r}")
            elif s.op == "snapshot":
                tags.add(s.args[0])
            resolved.append(s)
        return ProtocolScript(tuple(resolved))


@dataclass
class ScriptResult:
    state: DensityState
    snapshots: dict[str, DensityState] = field(default_factory=dict)


def execute_script(
    script: ProtocolScript,
    model: SpinModel,
    initial: DensityState | None = None,
    flip_error: float = 0.0,
) -> ScriptResult:
    """Run ``script`` from ``initial`` (equilibrium by default); every pulse gets ``flip_error``."""
    script = script.resolve(model)
    eq = equilibrium_state(model)
    state = initial if initial is not None else eq
    snaps = {"equilibrium": eq}
    for s in script.steps:
        if s.op == "pulse":
            kind, target, angle, phase = s.args
            state = apply_pulse(state, PulseSpec(kind, target, angle, phase, flip_error))
        elif s.op == "crush":
            state = crush(state, s.args[0])
        elif s.op == "subtract":
            state = subtract_states(state, snaps[s.args[0]])
        else:
            snaps[s.args[0]] = state
    return ScriptResult(state, snaps)


# --- pseudopure states -----------------------------------------------------------


def _transition(model: SpinModel, spec) -> Transition:
    try:
        return model.resolve_transition(spec)
    except (KeyError, ValueError) as exc:
        raise ProtocolError(str(exc.args[0] if exc.args else exc)) from None


def prepare_pops(model: SpinModel, transition, crush_mode: str = "all", flip_error: float = 0.0) -> DensityState:
    """Selectively inverted equilibrium, crushed, minus equilibrium."""
    t = _transition(model, transition)
    eq = equilibrium_state(model)
    inverted = crush(selective_pulse(eq, t.id, math.pi, 0.0, flip_error), crush_mode)
    return subtract_states(inverted, eq)


def majority_species(model: SpinModel) -> str:
    sys = model.system
    return max(sys.species_order, key=lambda s: (len(sys.spins_of(s)), -sys.species_order.index(s)))


def prepare_sallt(model: SpinModel, transition, flip_error: float = 0.0) -> DensityState:
    """Subsystem pseudopure state via population equalization.

    Every species other than the target's gets a hard pi/2, a crusher removes
    the resulting coherences (leaving only the target species' polarization,
    constant within each of its manifolds), and a selective pi on the target
    transition moves one level out of each of its two manifolds.
    """
    t = _transition(model, transition)
    sys = model.system
    if len(sys.species_order) < 2 or t.species == majority_species(model):
        raise ProtocolError(f"transition {t.id} is not a heteronuclear transition")
    state = equilibrium_state(model)
    for sp in sys.species_order:
        if sp != t.species:
            state = hard_pulse(state, sp, math.pi / 2, 0.0, flip_error)
    state = crush(state, "all")
    return selective_pulse(state, t.id, math.pi, 0.0, flip_error)


# --- gates -----------------------------------------------------------------------


def _bit_distance(a: str, b: str) -> int:
    return sum(x != y for x, y in zip(a, b))


def apply_cnnot(
    state: DensityState,
    transition,
    labels: LabelMap | None = None,
    crush_mode: str | None = "all",
    flip_error: float = 0.0,
) -> DensityState:
    """Controlled-NOT on one qubit, controlled by all others: a selective pi on a one-bit transition."""
    model = state.model
    labels = labels or model.labels
    t = _transition(model, transition)
    a, b = labels.label(t.upper), labels.label(t.lower)
    if _bit_distance(a, b) != 1:
        raise ProtocolError(f"transition {t.id} ({a}-{b}) is not a controlled-NOT transition")
    out = selective_pulse(state, t.id, math.pi, 0.0, flip_error)
    return crush(out, crush_mode) if crush_mode else out


def check_ladder(model: SpinModel, seq: Sequence) -> tuple[Transition, Transition, Transition]:
    """Validate a three-pulse swap: outer pulses equal, middle sharing one level with them."""
    if len(seq) != 3:
        raise ProtocolError("a swap ladder needs exactly three transitions")
    t1, t2, t3 = (_transition(model, s) for s in seq)
    if t1.id != t3.id:
        raise ProtocolError(f"invalid ladder {[t1.id, t2.id, t3.id]}: outer pulses differ")
    shared = set(t1.levels()) & set(t2.levels())
    if t1.id != t2.id and len(shared) != 1:
        raise ProtocolError(f"invalid ladder {[t1.id, t2.id, t3.id]}: middle shares no single level with outer")
    return t1, t2, t3


def apply_cswap(
    state: DensityState,
    seq: Sequence,
    labels: LabelMap | None = None,
    crush_mode: str | None = "all",
    flip_error: float = 0.0,
) -> DensityState:
    """Three selective pi pulses ``a, b, a`` exchanging the two levels not shared between ``a`` and ``b``."""
    model = state.model
    for t in check_ladder(model, seq):
        state = selective_pulse(state, t.id, math.pi, 0.0, flip_error)
        if crush_mode:
            state = crush(state, crush_mode)
    return state


def ladder_permutation(model: SpinModel, seq: Sequence) -> tuple[int, ...]:
    ids = [t.id for t in check_ladder(model, seq)]
    return sequence_permutation(model.transitions, ids, model.dim)


# --- fidelity and coherences -------------------------------------------------------


def fidelity(state: DensityState, target, subsystem: Sequence[int] | None = None, tol: float = 1e-9) -> float:
    """Overlap of the normalized deviation with a pure target.

    ``rho`` is restricted to the ``subsystem`` levels (all levels by default),
    its traceless part ``D`` is rescaled to the size of a pure-state deviation,
    ``rho_n = 1/d + D / sqrt(tr(D^2) / (1 - 1/d))``, and the result is
    ``<psi|rho_n|psi>`` clipped to [0, 1]. A pseudopure state with a positive
    excess on ``psi`` scores exactly 1. ``target`` may span the full space
    (it must then vanish outside the subsystem) or only the subsystem.
    """
    levels = list(range(state.model.dim)) if subsystem is None else list(subsystem)
    d = len(levels)
    psi = np.asarray(target, dtype=complex).ravel()
    if psi.size == state.model.dim and d != state.model.dim:
        outside = np.delete(psi, levels)
        if np.abs(outside).max(initial=0.0) > tol:
            raise ValueError("target has weight outside the subsystem")
        psi = psi[levels]
    if psi.size != d:
        raise ValueError(f"target dimension {psi.size} does not match subsystem dimension {d}")
    if abs(np.linalg.norm(psi) - 1.0) > tol:
        raise ValueError("target state is not normalized")
    if d < 2:
        raise ValueError("fidelity needs a subsystem of at least two levels")
    rho = state.matrix[np.ix_(levels, levels)]
    dev = rho - np.trace(rho) / d * np.eye(d)
    size = math.sqrt(max(np.trace(dev @ dev).real, 0.0) / (1 - 1 / d))
    if size == 0.0:
        return 1.0 / d
    rho_n = np.eye(d) / d + dev / size
    f = float((psi.conj() @ rho_n @ psi).real)
    return min(1.0, max(0.0, f))


@dataclass(frozen=True)
class CoherenceEntry:
    levels: tuple[int, int]
    labels: tuple[str, str]
    orders: dict[str, int]
    magnitude: float
    phase: float
    omega1: float | None
    path: tuple[int, ...] = ()

    @property
    def total_order(self) -> int:
        return sum(abs(v) for v in self.orders.values())

    def to_record(self) -> dict:
        return {
            "levels": list(self.levels),
            "labels": list(self.labels),
            "orders": dict(self.orders),
            "magnitude": self.magnitude,
            "phase": self.phase,
            "omega1_hz": self.omega1,
            "path": list(self.path),
        }


@dataclass(frozen=True)
class CoherenceReport:
    entries: tuple[CoherenceEntry, ...]
    floor: float
    unconnected: tuple[tuple[int, int], ...] = ()

    def dominant(self, rel: float = 0.1) -> list[CoherenceEntry]:
        """Entries within a factor ``rel`` of the largest magnitude."""
        if not self.entries:
            return []
        top = max(e.magnitude for e in self.entries)
        return [e for e in self.entries if e.magnitude >= rel * top]

    def to_record(self) -> dict:
        return {
            "floor": self.floor,
            "entries": [e.to_record() for e in self.entries],
            "unconnected": [list(p) for p in self.unconnected],
        }


def _shortest_path(model: SpinModel, a: int, b: int) -> list[Transition] | None:
    adj: dict[int, list[Transition]] = {}
    for t in model.transitions:
        adj.setdefault(t.upper, []).append(t)
        adj.setdefault(t.lower, []).append(t)
    for v in adj:
        adj[v].sort(key=lambda t: t.id)
    prev: dict[int, Transition | None] = {a: None}
    queue = deque([a])
    while queue and b not in prev:
        v = queue.popleft()
        for t in adj.get(v, []):
            w = t.other(v)
            if w not in prev:
                prev[w] = t
                queue.append(w)
    if b not in prev:
        return None
    path, v = [], b
    while prev[v] is not None:
        t = prev[v]
        path.append(t)
        v = t.other(v)
    return path[::-1]


def coherence_report(state: DensityState, labels: LabelMap | None = None, floor: float = 1e-9) -> CoherenceReport:
    """Every ``rho[i, j]``, ``i < j``, with magnitude above ``floor``.

    ``omega1`` is ``E_i - E_j`` accumulated along a shortest transition path
    (each step from an upper to a lower level adds its line frequency), the
    composite frequency at which the coherence would evolve.
    """
    model = state.model
    labels = labels or model.labels
    man = model.eigen.manifold
    species = model.system.species_order
    rho = state.matrix
    entries, missing = [], []
    iu, ju = np.triu_indices(model.dim, k=1)
    mags = np.abs(rho[iu, ju])
    for i, j, mag in zip(iu[mags > floor], ju[mags > floor], mags[mags > floor]):
        i, j = int(i), int(j)
        path = _shortest_path(model, i, j)
        omega = None
        if path is None:
            missing.append((i, j))
        else:
            omega, v = 0.0, i
            for t in path:
                omega += t.freq if v == t.upper else -t.freq
                v = t.other(v)
        orders = {sp: int(round(man[i, k] - man[j, k])) for k, sp in enumerate(species)}
        entries.append(CoherenceEntry(
            (i, j), (labels.label(i), labels.label(j)), orders, float(mag),
            float(cmath.phase(rho[i, j])), omega, tuple(t.id for t in path or ()),
        ))
    return CoherenceReport(tuple(entries), floor, tuple(missing))


# --- entanglement creation and transfer ----------------------------------------------


def transfer_phase(t: Transition, source: int) -> float:
    """Pulse phase that moves amplitude from ``source`` onto the other level with a real positive factor."""
    return -math.pi / 2 if source == t.lower else math.pi / 2


@dataclass
class StageResult:
    name: str
    state: DensityState
    target: np.ndarray
    fidelity: float
    coherences: CoherenceReport
    pulses: list[dict]

    def to_record(self, labels: LabelMap, subsystem: Sequence[int]) -> dict:
        pops = self.state.populations
        amp = {labels.label(lv): complex(self.target[k]) for k, lv in enumerate(subsystem) if abs(self.target[k]) > 0}
        return {
            "name": self.name,
            "fidelity": self.fidelity,
            "target": {k: [v.real, v.imag] for k, v in sorted(amp.items())},
            "pulses": self.pulses,
            "populations": {labels.label(k): float(pops[k]) for k in range(len(pops))},
            "coherences": self.coherences.to_record(),
        }


@dataclass
class EntanglementRun:
    stages: list[StageResult]
    subsystem: list[int]
    flip_error: float
    fidelity_floor: float
    swap_sequence: tuple[int, ...]

    @property
    def fidelities(self) -> dict[str, float]:
        return {s.name: s.fidelity for s in self.stages}

    @property
    def flagged(self) -> list[str]:
        return [s.name for s in self.stages if s.fidelity < self.fidelity_floor]

    def to_record(self, labels: LabelMap) -> dict:
        return {
            "flip_error": self.flip_error,
            "fidelity_floor": self.fidelity_floor,
            "flagged": self.flagged,
            "subsystem": [labels.label(k) for k in self.subsystem],
            "swap_sequence": list(self.swap_sequence),
            "fidelities": self.fidelities,
            "stages": [s.to_record(labels, self.subsystem) for s in self.stages],
        }


def run_entanglement_transfer(
    model: SpinModel,
    flip_error: float = 0.0,
    fidelity_floor: float = 0.5,
    domain_bit: str = "1",
    floor: float = 1e-9,
) -> EntanglementRun:
    """Create a two-qubit entangled state inside one heteronuclear domain and move it.

    Labels are ``x|abcd``: the first bit selects the domain (the heteronucleus
    is spin 1) and the remaining four are the subsystem qubits.

    1. spatially averaged pseudopure ``|0000>`` in the domain,
    2. pi/2 on ``0000 - 0100``: single-quantum superposition,
    3. pi on ``0100 - 0110``: entangled ``(|0000> + |0110>)/sqrt2``,
    4. a three-pulse swap ``0110 <-> 1001``, giving ``(|0000> + |1001>)/sqrt2``.

    Pulse phases are chosen so every target amplitude is real and positive.
    ``flip_error`` scales every pulse angle by ``1 + flip_error``.
    """
    labels = model.labels
    n = model.system.n_spins
    if n != 5:
        raise ProtocolError(f"entanglement transfer needs a 5-spin system, got {n}")
    dom = domain_bit
    other = "1" if dom == "0" else "0"
    subsystem = [lv for lv in range(model.dim) if labels.label(lv)[0] == dom]
    sub_index = {lv: k for k, lv in enumerate(subsystem)}

    def lv(bits: str) -> int:
        return labels.level(dom + bits)

    def tr(a: str, b: str) -> Transition:
        t = model.transition_between(lv(a), lv(b))
        if t is None:
            raise ProtocolError(f"no transition between {dom}{a} and {dom}{b}")
        return t

    def ket(*bits: str) -> np.ndarray:
        v = np.zeros(len(subsystem), dtype=complex)
        for b in bits:
            v[sub_index[lv(b)]] = 1.0
        return v / np.linalg.norm(v)

    stages: list[StageResult] = []

    def record(name, state, target, pulses):
        stages.append(StageResult(
            name, state, target, fidelity(state, target, subsystem),
            coherence_report(state, labels, floor), pulses,
        ))

    def pulse(state, t: Transition, angle: float, source: int, log: list):
        ph = transfer_phase(t, source)
        log.append({"transition_id": t.id, "levels": [labels.label(t.upper), labels.label(t.lower)],
                    "angle": angle, "phase": ph})
        return selective_pulse(state, t.id, angle, ph, flip_error)

    # 1. subsystem pseudopure state
    sallt = model.transition_between(labels.level(other + "0000"), labels.level(dom + "0000"))
    if sallt is None:
        raise ProtocolError("no heteronuclear transition between the two |0000> levels")
    state = prepare_sallt(model, sallt.id, flip_error)
    record("pseudopure", state, ket("0000"), [{"sallt_transition_id": sallt.id}])

    # 2. superposition
    log: list = []
    state = pulse(state, tr("0000", "0100"), math.pi / 2, lv("0000"), log)
    record("superposition", state, ket("0000", "0100"), log)

    # 3. controlled NOT: entangled pair
    log = []
    state = pulse(state, tr("0100", "0110"), math.pi, lv("0100"), log)
    record("entangle", state, ket("0000", "0110"), log)

    # 4. swap 0110 <-> 1001
    a, b = lv("0110"), lv("1001")
    middle = model.transition_between(lv("0100"), b)
    if middle is not None:
        outer = tr("0110", "0100")
        seq = [(outer, a), (middle, lv("0100")), (outer, a)]
    else:
        try:
            ids = compile_level_swap(model.transitions, a, b, model.dim).transitions
        except CompileError as exc:
            raise ProtocolError(f"cannot swap {dom}0110 and {dom}1001: {exc}") from None
        # forward half ferries the 0110 amplitude along the path; the mirrored half reuses its phases
        half, pos = [], a
        for tid in ids[: (len(ids) + 1) // 2]:
            t = model.transitions.get(tid)
            half.append((t, pos))
            pos = t.other(pos)
        seq = half + half[-2::-1]
    log = []
    for t, src in seq:
        state = pulse(state, t, math.pi, src, log)
    record("transfer", state, ket("0000", "1001"), log)

    return EntanglementRun(stages, subsystem, flip_error, fidelity_floor, tuple(t.id for t, _ in seq))
