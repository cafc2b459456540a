"""Spin Hamiltonians of partially oriented spin-1/2 systems and their eigenstructure.

Conventions
-----------
- Product (Zeeman) basis, spin 0 is the most significant bit, and bit value 0
  means ``alpha`` (m = +1/2). The binary label of a product state is therefore
  its computational-basis label.
- Every Hamiltonian term is stored in Hz.
- Species are ordered by first appearance in the spin list. Per-species total
  magnetic quantum numbers ("M vectors") use that order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

MAX_SPINS = 12
DEFAULT_THRESHOLD = 1e-3
DEFAULT_GAMMA = {"H": 1.0, "F": 0.94}

_SX = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
_SY = np.array([[0, -0.5j], [0.5j, 0]], dtype=complex)
_SZ = np.array([[0.5, 0], [0, -0.5]], dtype=complex)
_SP = np.array([[0, 1], [0, 0]], dtype=complex)


class SpinSystemError(ValueError):
    """Raised for an invalid spin-system description."""


class LabelingError(ValueError):
    """Raised when eigenstates cannot be labeled unambiguously."""


@dataclass(frozen=True)
class SpinSystem:
    """Physical model of N coupled spin-1/2 nuclei.

    Couplings are keyed by 0-based ordered pairs ``(i, j)`` with ``i < j``.
    """

    species: tuple[str, ...]
    gamma: tuple[float, ...]
    larmor: tuple[float, ...]
    dipolar: Mapping[tuple[int, int], float] = field(default_factory=dict)
    scalar: Mapping[tuple[int, int], float] = field(default_factory=dict)

    @property
    def n_spins(self) -> int:
        return len(self.species)

    @property
    def dim(self) -> int:
        return 2**self.n_spins

    @cached_property
    def species_order(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(self.species))

    def is_hetero(self, i: int, j: int) -> bool:
        return self.species[i] != self.species[j]

    def spins_of(self, species: str) -> list[int]:
        return [k for k, s in enumerate(self.species) if s == species]

    def gamma_of(self, species: str) -> float:
        return self.gamma[self.species.index(species)]

    def pairs(self) -> list[tuple[int, int]]:
        return sorted(set(self.dipolar) | set(self.scalar))

    def net_coupling_sign(self, eps: float = 1e-9) -> int:
        """Sign of the summed zz coupling: ``2D + J`` per homonuclear pair, ``D + J`` per heteronuclear pair."""
        total = 0.0
        for p in self.pairs():
            d, j = self.dipolar.get(p, 0.0), self.scalar.get(p, 0.0)
            total += (d + j) if self.is_hetero(*p) else (2 * d + j)
        return 0 if abs(total) <= eps else (1 if total > 0 else -1)


def build_spin_system(
    spins: Sequence[Mapping],
    couplings: Sequence[Mapping] = (),
) -> SpinSystem:
    """Validate parsed configuration rows and return a :class:`SpinSystem`.

    ``spins`` rows carry ``index`` (1-based), ``species``, ``larmor_hz`` and
    optionally ``gamma_rel``; ``couplings`` rows carry ``i``, ``j`` (1-based),
    ``d_hz`` and ``j_hz``.
    """
    n = len(spins)
    if not 1 <= n <= MAX_SPINS:
        raise SpinSystemError(f"n_spins must be in [1, {MAX_SPINS}], got {n}")
    rows = sorted(spins, key=lambda r: r["index"])
    if [r["index"] for r in rows] != list(range(1, n + 1)):
        raise SpinSystemError(
            "spin indices must be exactly 1..%d, got %s" % (n, [r["index"] for r in spins])
        )

    species, gamma, larmor = [], [], []
    for r in rows:
        sp = str(r["species"])
        if not sp:
            raise SpinSystemError(f"spin {r['index']}: empty species tag")
        g = r.get("gamma_rel")
        if g is None:
            if sp not in DEFAULT_GAMMA:
                raise SpinSystemError(f"spin {r['index']}: no gamma_rel and no default for species {sp!r}")
            g = DEFAULT_GAMMA[sp]
        g, nu = float(g), float(r["larmor_hz"])
        if not (math.isfinite(g) and math.isfinite(nu)):
            raise SpinSystemError(f"spin {r['index']}: non-finite value")
        if g <= 0:
            raise SpinSystemError(f"spin {r['index']}: gamma_rel must be positive")
        species.append(sp)
        gamma.append(g)
        larmor.append(nu)

    for sp in set(species):
        gs = {g for s, g in zip(species, gamma) if s == sp}
        if len(gs) > 1:
            raise SpinSystemError(f"species {sp!r} has inconsistent gamma_rel values {sorted(gs)}")

    dipolar: dict[tuple[int, int], float] = {}
    scalar: dict[tuple[int, int], float] = {}
    for c in couplings:
        i, j = int(c["i"]), int(c["j"])
        if i == j:
            raise SpinSystemError(f"coupling ({i},{j}) is a self-pair")
        if not (1 <= i <= n and 1 <= j <= n):
            raise SpinSystemError(f"coupling ({i},{j}) references a missing spin")
        key = (min(i, j) - 1, max(i, j) - 1)
        if key in dipolar:
            raise SpinSystemError(f"duplicate coupling pair ({key[0] + 1},{key[1] + 1})")
        d, jj = float(c.get("d_hz", 0.0)), float(c.get("j_hz", 0.0))
        if not (math.isfinite(d) and math.isfinite(jj)):
            raise SpinSystemError(f"coupling ({i},{j}): non-finite value")
        dipolar[key] = d
        scalar[key] = jj

    return SpinSystem(tuple(species), tuple(gamma), tuple(larmor), dipolar, scalar)


def _embed(op: np.ndarray, k: int, n: int) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for s in range(n):
        out = np.kron(out, op if s == k else np.eye(2))
    return out


def spin_operators(n: int) -> dict[str, list[np.ndarray]]:
    """Single-spin operators ``x, y, z, +`` embedded in the 2^n product space."""
    return {
        "x": [_embed(_SX, k, n) for k in range(n)],
        "y": [_embed(_SY, k, n) for k in range(n)],
        "z": [_embed(_SZ, k, n) for k in range(n)],
        "+": [_embed(_SP, k, n) for k in range(n)],
    }


def product_m(n: int, spins: Sequence[int]) -> np.ndarray:
    """Total m over ``spins`` for every product state, as an integer-valued float array."""
    idx = np.arange(2**n)
    m = np.zeros(2**n)
    for k in spins:
        bit = (idx >> (n - 1 - k)) & 1
        m += 0.5 - bit
    return m


def build_hamiltonian(sys: SpinSystem) -> np.ndarray:
    """Full Hamiltonian (Hz) in the product basis.

    Homonuclear pairs get the full dipolar ``D(3IzIz - I.I)`` and scalar
    ``J I.I`` forms; heteronuclear pairs get the truncated ``(D + J) IzSz``.
    """
    n = sys.n_spins
    ops = spin_operators(n)
    # Zeeman and IzIz parts are diagonal
    diag = np.zeros(sys.dim)
    idx = np.arange(sys.dim)
    mz = [0.5 - ((idx >> (n - 1 - k)) & 1) for k in range(n)]
    for k in range(n):
        diag += sys.larmor[k] * mz[k]
    h = np.zeros((sys.dim, sys.dim), dtype=complex)
    for i, j in sys.pairs():
        d = sys.dipolar.get((i, j), 0.0)
        jc = sys.scalar.get((i, j), 0.0)
        zz = mz[i] * mz[j]
        if sys.is_hetero(i, j):
            diag += (d + jc) * zz
            continue
        flipflop = ops["x"][i] @ ops["x"][j] + ops["y"][i] @ ops["y"][j]
        # D(3IzIz - I.I) + J I.I = (2D + J) IzIz + (J - D)(IxIx + IyIy)
        diag += (2 * d + jc) * zz
        h += (jc - d) * flipflop
    h += np.diag(diag)
    return h


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues (Hz) and eigenvectors (columns) of a spin Hamiltonian.

    Levels are ordered by descending per-species M vector, then by
    descending energy.
    """

    energies: np.ndarray
    vectors: np.ndarray
    manifold: np.ndarray  # (dim, n_species) per-species total M
    species_order: tuple[str, ...]

    @property
    def dim(self) -> int:
        return len(self.energies)

    def manifold_of(self, level: int) -> tuple[float, ...]:
        return tuple(self.manifold[level])


def _manifold_table(sys: SpinSystem) -> np.ndarray:
    n = sys.n_spins
    return np.stack([product_m(n, sys.spins_of(sp)) for sp in sys.species_order], axis=1)


def _canonical_phase(v: np.ndarray) -> np.ndarray:
    mag = np.abs(v)
    k = int(np.flatnonzero(mag >= mag.max() - 1e-12)[0])
    return v * (abs(v[k]) / v[k])


def _canonical_degenerate(vecs: np.ndarray, product_idx: np.ndarray) -> np.ndarray:
    """Deterministic basis of a degenerate eigenspace.

    Product states are projected into the subspace in order of descending
    projection norm (ties to the lowest index) and Gram-Schmidt orthogonalized.
    """
    k = vecs.shape[1]
    proj = vecs @ vecs.conj().T
    norms = np.linalg.norm(proj, axis=0)
    order = sorted(range(len(product_idx)), key=lambda p: (-round(norms[p], 9), p))
    basis: list[np.ndarray] = []
    for p in order:
        v = proj[:, p].copy()
        for b in basis:
            v -= (b.conj() @ v) * b
        nv = np.linalg.norm(v)
        if nv > 1e-6:
            basis.append(v / nv)
        if len(basis) == k:
            break
    return np.stack(basis, axis=1)


def diagonalize(h: np.ndarray, sys: SpinSystem) -> EigenSystem:
    """Diagonalize ``h`` block by block over the per-species M manifolds."""
    if not np.allclose(h, h.conj().T, atol=1e-12 * max(1.0, np.abs(h).max())):
        raise ValueError("Hamiltonian is not Hermitian")
    man = _manifold_table(sys)
    dim = h.shape[0]
    keys = sorted({tuple(row) for row in man}, reverse=True)
    energies = np.empty(dim)
    vectors = np.zeros((dim, dim), dtype=complex)
    manifold = np.empty_like(man)
    scale = max(1.0, np.abs(h).max())
    col = 0
    for key in keys:
        idx = np.flatnonzero((man == key).all(axis=1))
        block = h[np.ix_(idx, idx)]
        try:
            w, v = np.linalg.eigh(block)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(f"eigensolver failed on manifold {key}") from exc
        order = np.argsort(-w, kind="stable")
        w, v = w[order], v[:, order]
        start = 0
        while start < len(w):
            stop = start + 1
            while stop < len(w) and abs(w[stop] - w[start]) <= 1e-9 * scale:
                stop += 1
            if stop - start > 1:
                v[:, start:stop] = _canonical_degenerate(v[:, start:stop], idx)
                w[start:stop] = w[start:stop].mean()
            start = stop
        for k in range(len(w)):
            vectors[idx, col] = _canonical_phase(v[:, k])
            energies[col] = w[k]
            manifold[col] = key
            col += 1
    return EigenSystem(energies, vectors, manifold, sys.species_order)


@dataclass(frozen=True)
class Transition:
    id: int
    upper: int
    lower: int
    freq: float
    intensity: float
    species: str

    def levels(self) -> tuple[int, int]:
        return (self.upper, self.lower)

    def other(self, level: int) -> int:
        if level == self.upper:
            return self.lower
        if level == self.lower:
            return self.upper
        raise ValueError(f"level {level} not on transition {self.id}")


class TransitionTable(tuple):
    """Immutable sequence of :class:`Transition` with lookup by id."""

    @cached_property
    def _by_id(self) -> dict[int, Transition]:
        return {t.id: t for t in self}

    def get(self, tid: int) -> Transition:
        try:
            return self._by_id[tid]
        except KeyError:
            raise KeyError(f"unknown transition id {tid}") from None

    def __contains__(self, tid) -> bool:  # type: ignore[override]
        if isinstance(tid, Transition):
            return tuple.__contains__(self, tid)
        return tid in self._by_id

    def of_species(self, species: str) -> list[Transition]:
        return [t for t in self if t.species == species]

    def between(self, a: int, b: int) -> Transition | None:
        for t in self:
            if {t.upper, t.lower} == {a, b}:
                return t
        return None

    @property
    def ids(self) -> list[int]:
        return [t.id for t in self]


def raising_operators(sys: SpinSystem) -> dict[str, np.ndarray]:
    ops = spin_operators(sys.n_spins)["+"]
    return {sp: sum(ops[k] for k in sys.spins_of(sp)) for sp in sys.species_order}


def compute_transitions(
    es: EigenSystem, sys: SpinSystem, threshold: float = DEFAULT_THRESHOLD
) -> TransitionTable:
    """Observable single-quantum transitions.

    ``upper`` is the level with the higher M of the active species (the one
    ``F+`` raises into) and ``freq = E_upper - E_lower`` is the signed line
    position; it is positive whenever the rotating-frame offsets are. Lines
    weaker than ``threshold`` times the strongest are dropped. Species with
    the most spins come first, then ascending frequency; ids start at 1.
    """
    raw = []
    nsp = len(es.species_order)
    for s_idx, sp in enumerate(es.species_order):
        fplus = es.vectors.conj().T @ raising_operators(sys)[sp] @ es.vectors
        step = np.zeros(nsp)
        step[s_idx] = 1.0
        for lower in range(es.dim):
            target = es.manifold[lower] + step
            uppers = np.flatnonzero((es.manifold == target).all(axis=1))
            for upper in uppers:
                inten = abs(fplus[upper, lower]) ** 2
                raw.append((sp, int(upper), int(lower), float(inten)))
    if not raw:
        log.warning("no transitions found")
        return TransitionTable()
    top = max(r[3] for r in raw)
    kept = [r for r in raw if r[3] > threshold * top]
    rank = {sp: (-len(sys.spins_of(sp)), k) for k, sp in enumerate(es.species_order)}
    entries = []
    for sp, u, l, inten in kept:
        f = float(es.energies[u] - es.energies[l])
        entries.append((rank[sp], f, u, l, inten, sp))
    entries.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
    if not entries:
        log.warning("transition table is empty")
    return TransitionTable(
        Transition(k + 1, u, l, f, inten, sp) for k, (_, f, u, l, inten, sp) in enumerate(entries)
    )


@dataclass(frozen=True)
class LabelMap:
    """Bijection between level indices and n-bit computational labels."""

    labels: tuple[str, ...]

    @cached_property
    def _index(self) -> dict[str, int]:
        return {lab: k for k, lab in enumerate(self.labels)}

    def label(self, level: int) -> str:
        return self.labels[level]

    def level(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"unknown label {label!r}") from None

    def __len__(self) -> int:
        return len(self.labels)


def label_states(es: EigenSystem, sys: SpinSystem, tie_tol: float = 1e-9) -> LabelMap:
    """Assign every eigenstate the label of its maximum-overlap product state.

    Assignment is greedy in descending overlap inside each M manifold, so a
    conflict defers the loser to its next-best product state. Two competing
    candidates whose overlaps agree within ``tie_tol`` raise
    :class:`LabelingError`.
    """
    n = sys.n_spins
    overlap = np.abs(es.vectors) ** 2  # [product, eigen]
    prod_man = _manifold_table(sys)
    labels: list[str | None] = [None] * es.dim
    for key in sorted({tuple(r) for r in es.manifold}, reverse=True):
        levels = np.flatnonzero((es.manifold == key).all(axis=1))
        prods = np.flatnonzero((prod_man == key).all(axis=1))
        free_l, free_p = set(levels.tolist()), set(prods.tolist())
        cands = sorted(
            ((overlap[p, k], k, p) for k in levels for p in prods),
            key=lambda c: (-c[0], c[1], c[2]),
        )
        for ov, k, p in cands:
            if k not in free_l or p not in free_p:
                continue
            rivals = [
                (ov2, k2, p2)
                for ov2, k2, p2 in cands
                if (k2, p2) != (k, p)
                and k2 in free_l
                and p2 in free_p
                and (k2 == k or p2 == p)
                and abs(ov2 - ov) <= tie_tol
            ]
            if rivals:
                _, k2, p2 = rivals[0]
                raise LabelingError(
                    f"ambiguous labeling: levels {k} and {k2} / product states "
                    f"{format(p, f'0{n}b')} and {format(p2, f'0{n}b')} overlap equally ({ov:.6g})"
                )
            labels[k] = format(int(p), f"0{n}b")
            free_l.discard(k)
            free_p.discard(p)
    return LabelMap(tuple(labels))  # type: ignore[arg-type]


class SpinModel:
    """A spin system together with its eigensystem, transition table and labels.

    This is the basis every :class:`~nmrqip.state.DensityState` refers to.
    """

    def __init__(self, system: SpinSystem, threshold: float = DEFAULT_THRESHOLD):
        self.system = system
        self.threshold = threshold
        self.hamiltonian = build_hamiltonian(system)
        self.eigen = diagonalize(self.hamiltonian, system)
        self.transitions = compute_transitions(self.eigen, system, threshold)

    @property
    def dim(self) -> int:
        return self.system.dim

    @cached_property
    def labels(self) -> LabelMap:
        return label_states(self.eigen, self.system)

    @cached_property
    def populations(self) -> np.ndarray:
        """Equilibrium deviation populations, sum of gamma-weighted M per level."""
        weights = np.array([self.system.gamma_of(sp) for sp in self.eigen.species_order])
        return self.eigen.manifold @ weights

    def transition_between(self, a: int, b: int) -> Transition | None:
        return self.transitions.between(a, b)

    def resolve_transition(self, spec: str | int) -> Transition:
        """Look up a transition by id or by a ``label-label`` pair."""
        if isinstance(spec, (int, np.integer)):
            return self.transitions.get(int(spec))
        spec = str(spec).strip()
        if "-" in spec:
            a, b = (self.labels.level(x.strip()) for x in spec.split("-", 1))
            t = self.transitions.between(a, b)
            if t is None:
                raise KeyError(f"no observable transition between {spec}")
            return t
        return self.transitions.get(int(spec))

    @cached_property
    def _raising(self) -> dict[str, np.ndarray]:
        v = self.eigen.vectors
        return {sp: v.conj().T @ op @ v for sp, op in raising_operators(self.system).items()}

    def raising(self, species: str) -> np.ndarray:
        """Total raising operator of ``species`` in the eigenbasis."""
        try:
            return self._raising[species]
        except KeyError:
            raise KeyError(f"unknown species {species!r}") from None
