"""Energy-level diagram reconstruction from a transition list and its connectivity.

Every transition owns two endpoint slots (upper, lower). A progressive pair
says one transition ends where the other begins; a regressive pair says they
share a common upper or a common lower level. Each pair is thus a binary
choice of which two slots are the same level. The solver merges slots with a
union-find, propagates energies along ``E_upper = E_lower + freq`` with a
weighted union-find, and backtracks over the remaining choices. Any merge
that closes an energy cycle outside ``tol``, folds a transition onto itself,
or makes two transitions share a level in a way the connectivity does not
list is rejected.

Frequencies and connectivity fix the diagram only up to a global reflection:
turning every transition upside down and negating all energies is equally
consistent, and corresponds to reversing the sign of every coupling. One bit
of outside knowledge, the sign of the summed zz coupling, selects between the
two (see :func:`coupling_energy`).
"""

from __future__ import annotations

import logging
import re
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .zcosy import PROGRESSIVE, REGRESSIVE, ConnectivityMatrix

log = logging.getLogger(__name__)

SIM_TOL = 1e-6
EXPERIMENTAL_TOL = 0.5


class ReconstructionError(RuntimeError):
    """No consistent level assignment exists.

    ``consistent_subset`` lists the connectivity pairs satisfied by the
    largest consistent partial assignment found.
    """

    def __init__(self, message: str, consistent_subset: list[tuple[int, int]]):
        super().__init__(message)
        self.consistent_subset = consistent_subset


class AmbiguityWarning(UserWarning):
    pass


@dataclass
class LevelDiagram:
    """Levels with relative energies (Hz) and transition edges ``id -> (upper, lower)``."""

    energies: dict[int, float]
    edges: dict[int, tuple[int, int]]
    freqs: dict[int, float] = field(default_factory=dict)
    species: dict[int, str] = field(default_factory=dict)
    components: list[list[int]] = field(default_factory=list)
    unassigned: list[int] = field(default_factory=list)
    n_levels_expected: int | None = None
    n_solutions: int | None = None

    @property
    def n_levels(self) -> int:
        return len(self.energies)

    def shifted(self, offset: float) -> "LevelDiagram":
        return LevelDiagram(
            {k: e + offset for k, e in self.energies.items()}, dict(self.edges), dict(self.freqs),
            dict(self.species), [list(c) for c in self.components], list(self.unassigned),
            self.n_levels_expected, self.n_solutions,
        )

    def mirrored(self) -> "LevelDiagram":
        """The reflected diagram: every edge reversed and every energy negated."""
        energies: dict[int, float] = {}
        relabel: dict[int, int] = {}
        components = []
        next_id = 0
        for comp in self.components:
            members = set(comp)
            ref_t = min(t for t, (u, l) in self.edges.items() if u in members)
            ref_e = self.energies[self.edges[ref_t][0]]
            order = sorted(comp, key=lambda k: (self.energies[k] - ref_e, k))
            new = []
            for k in order:
                relabel[k] = next_id
                energies[next_id] = ref_e - self.energies[k]
                new.append(next_id)
                next_id += 1
            components.append(new)
        edges = {t: (relabel[l], relabel[u]) for t, (u, l) in self.edges.items()}
        return LevelDiagram(energies, edges, dict(self.freqs), dict(self.species), components,
                            list(self.unassigned), self.n_levels_expected, self.n_solutions)

    def partition(self, species: str) -> list[list[int]]:
        """Connected groups of levels when only ``species`` edges are kept."""
        parent = {k: k for k in self.energies}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for tid, (u, l) in self.edges.items():
            if self.species.get(tid) == species:
                parent[find(u)] = find(l)
        groups = defaultdict(list)
        for k in sorted(self.energies):
            groups[find(k)].append(k)
        return sorted(groups.values(), key=lambda g: g[0])

    def to_record(self) -> dict:
        return {
            "n_levels": self.n_levels,
            "n_levels_expected": self.n_levels_expected,
            "levels": [{"level": k, "energy_hz": self.energies[k]} for k in sorted(self.energies)],
            "edges": [
                {"transition_id": t, "upper": u, "lower": l, "freq_hz": self.freqs.get(t),
                 "species": self.species.get(t)}
                for t, (u, l) in sorted(self.edges.items())
            ],
            "components": self.components,
            "unassigned": self.unassigned,
            "n_solutions": self.n_solutions,
        }


class _State:
    __slots__ = ("ident", "members", "bparent", "boff")

    def __init__(self, ident, members, bparent, boff):
        self.ident = ident
        self.members = members
        self.bparent = bparent
        self.boff = boff

    def copy(self) -> "_State":
        return _State(list(self.ident), {k: list(v) for k, v in self.members.items()},
                      list(self.bparent), list(self.boff))

    def find(self, x: int) -> int:
        ident = self.ident
        while ident[x] != x:
            ident[x] = ident[ident[x]]
            x = ident[x]
        return x

    def bfind(self, x: int) -> tuple[int, float]:
        """Root of x's energy component and ``E(x) - E(root)``."""
        off = 0.0
        while self.bparent[x] != x:
            off += self.boff[x]
            x = self.bparent[x]
        return x, off


class _Solver:
    def __init__(self, ids, freqs, conn: ConnectivityMatrix, tol: float, strict: bool):
        self.ids = list(ids)
        self.pos = {t: k for k, t in enumerate(self.ids)}
        self.freqs = [freqs[t] for t in self.ids]
        self.tol = tol
        self.strict = strict
        self.kind = {}
        self.constraints = []
        for (i, j), kind in sorted(conn.entries.items()):
            if i in self.pos and j in self.pos:
                a, b = self.pos[i], self.pos[j]
                self.kind[(a, b)] = self.kind[(b, a)] = kind
                self.constraints.append((a, b, kind))
        self.best_depth = -1
        self.best_satisfied: list[int] = []

    @staticmethod
    def upper(k: int) -> int:
        return 2 * k

    @staticmethod
    def lower(k: int) -> int:
        return 2 * k + 1

    def options(self, c: int) -> tuple[tuple[int, int], tuple[int, int]]:
        a, b, kind = self.constraints[c]
        U, L = self.upper, self.lower
        if kind == PROGRESSIVE:
            return ((U(a), L(b)), (L(a), U(b)))
        return ((L(a), L(b)), (U(a), U(b)))

    def initial(self) -> _State:
        n = 2 * len(self.ids)
        bparent = list(range(n))
        boff = [0.0] * n
        for k, f in enumerate(self.freqs):
            # E(upper) = E(lower) + freq
            bparent[self.upper(k)] = self.lower(k)
            boff[self.upper(k)] = f
        return _State(list(range(n)), {x: [x] for x in range(n)}, bparent, boff)

    def feasible(self, st: _State, x: int, y: int) -> bool:
        rx, ry = st.find(x), st.find(y)
        if rx == ry:
            return True
        bx, ox = st.bfind(x)
        by, oy = st.bfind(y)
        if bx == by and abs(ox - oy) > self.tol:
            return False
        for s1 in st.members[rx]:
            t1, r1 = divmod(s1, 2)
            for s2 in st.members[ry]:
                t2, r2 = divmod(s2, 2)
                if t1 == t2:
                    return False
                kind = self.kind.get((t1, t2))
                if kind is None:
                    if self.strict:
                        return False
                elif (kind == PROGRESSIVE) != (r1 != r2):
                    return False
                if st.find(s1 ^ 1) == st.find(s2 ^ 1):
                    return False
        return True

    def merge(self, st: _State, x: int, y: int) -> None:
        rx, ry = st.find(x), st.find(y)
        if rx == ry:
            return
        if len(st.members[rx]) < len(st.members[ry]):
            rx, ry = ry, rx
        st.ident[ry] = rx
        st.members[rx].extend(st.members.pop(ry))
        bx, ox = st.bfind(x)
        by, oy = st.bfind(y)
        if bx != by:
            # attach by under bx so that E(x) == E(y)
            st.bparent[by] = bx
            st.boff[by] = ox - oy

    def satisfied(self, st: _State, c: int) -> bool:
        return any(st.find(x) == st.find(y) for x, y in self.options(c))

    def propagate(self, st: _State, pending: list[int]) -> list[int] | None:
        changed = True
        while changed:
            changed = False
            rest = []
            for c in pending:
                if self.satisfied(st, c):
                    continue
                ok = [o for o in self.options(c) if self.feasible(st, *o)]
                if not ok:
                    return None
                if len(ok) == 1:
                    self.merge(st, *ok[0])
                    changed = True
                else:
                    rest.append(c)
            pending = rest
        return pending

    def _record(self, st: _State):
        sat = [c for c in range(len(self.constraints)) if self.satisfied(st, c)]
        if len(sat) > self.best_depth:
            self.best_depth = len(sat)
            self.best_satisfied = sat

    def search(self, st: _State, pending: list[int]):
        pending = self.propagate(st, pending)
        if pending is None:
            self._record(st)
            return
        self._record(st)
        if not pending:
            yield st
            return
        c, rest = pending[0], pending[1:]
        for opt in self.options(c):
            if self.feasible(st, *opt):
                child = st.copy()
                self.merge(child, *opt)
                yield from self.search(child, rest)

    def choice_signature(self, st: _State) -> tuple[int, ...]:
        return tuple(0 if st.find(self.options(c)[0][0]) == st.find(self.options(c)[0][1]) else 1
                     for c in range(len(self.constraints)))


def coupling_energy(diagram: LevelDiagram) -> float:
    """``sum_k E_k (M_k^2 - mean M^2)`` over each component, with total M from the edges.

    For a simulated system this has the sign of the summed zz coupling
    (``2D + J`` homonuclear, ``D + J`` heteronuclear), and it changes sign
    under :meth:`LevelDiagram.mirrored`.
    """
    adj: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for u, l in diagram.edges.values():
        adj[u].append((l, -1))
        adj[l].append((u, 1))
    total = 0.0
    for comp in diagram.components:
        m = {comp[0]: 0}
        stack = [comp[0]]
        while stack:
            k = stack.pop()
            for nb, step in adj[k]:
                if nb not in m:
                    m[nb] = m[k] + step
                    stack.append(nb)
        mid = (max(m.values()) + min(m.values())) / 2
        q = {k: (v - mid) ** 2 for k, v in m.items()}
        qbar = sum(q.values()) / len(q)
        total += sum(diagram.energies[k] * (q[k] - qbar) for k in q)
    return total


def reconstruct_levels(
    transitions: Sequence,
    connectivity: ConnectivityMatrix,
    n_spins: int | None = None,
    tol: float = SIM_TOL,
    exhaustive: bool = False,
    strict: bool = True,
    max_solutions: int = 64,
    coupling_sign: int | None = None,
) -> LevelDiagram:
    """Build the level diagram implied by ``transitions`` and ``connectivity``.

    ``transitions`` items need ``id``, ``freq`` and ``species``. A transition
    without any connectivity stays unassigned unless it is the only one. The
    lower level of the lowest-id transition of each connected component sits
    at 0 Hz. With ``exhaustive=True`` all solutions (up to
    ``max_solutions``) are counted and an :class:`AmbiguityWarning` lists the
    undetermined pairs when there is more than one. ``strict=False`` allows
    transitions to share a level without a listed connectivity, for
    experimental lists with missing cross peaks.

    ``coupling_sign`` (+1 or -1) resolves the global reflection: the returned
    diagram is the one whose :func:`coupling_energy` has that sign. Without
    it the first solution found is returned as is, and exhaustive counts
    include both reflections.
    """
    if coupling_sign not in (None, 1, -1):
        raise ValueError("coupling_sign must be +1, -1 or None")
    trans = sorted(transitions, key=lambda t: t.id)
    freqs = {t.id: float(t.freq) for t in trans}
    species = {t.id: t.species for t in trans}
    linked = {i for pair in connectivity.entries for i in pair}
    if len(trans) > 1:
        assigned = [t.id for t in trans if t.id in linked]
    else:
        assigned = [t.id for t in trans]
    unassigned = [t.id for t in trans if t.id not in assigned]

    solver = _Solver(assigned, freqs, connectivity, tol, strict)
    gen = solver.search(solver.initial(), list(range(len(solver.constraints))))
    first = next(gen, None)
    if first is None:
        pairs = [(solver.ids[solver.constraints[c][0]], solver.ids[solver.constraints[c][1]])
                 for c in solver.best_satisfied]
        raise ReconstructionError(
            f"no consistent level assignment; largest consistent subset satisfies "
            f"{len(pairs)} of {len(solver.constraints)} connectivities",
            pairs,
        )
    build = lambda st: _build_diagram(solver, st, freqs, species, unassigned, n_spins, None)
    diagram = _oriented(build(first), coupling_sign)
    n_solutions = None
    if exhaustive:
        sigs = []
        for st in [first, *gen]:
            if coupling_sign is not None and _sign(coupling_energy(build(st))) != coupling_sign:
                continue
            sigs.append(solver.choice_signature(st))
            if len(sigs) >= max_solutions:
                break
        n_solutions = len(sigs)
        if n_solutions > 1:
            undetermined = [
                (solver.ids[solver.constraints[c][0]], solver.ids[solver.constraints[c][1]])
                for c in range(len(solver.constraints))
                if len({s[c] for s in sigs}) > 1
            ]
            warnings.warn(
                f"{n_solutions} consistent level diagrams; undetermined pairs: {undetermined}",
                AmbiguityWarning,
                stacklevel=2,
            )
    diagram.n_solutions = n_solutions
    return diagram


def _sign(x: float, eps: float = 1e-9) -> int:
    return 0 if abs(x) <= eps else (1 if x > 0 else -1)


def _oriented(diagram: LevelDiagram, coupling_sign: int | None) -> LevelDiagram:
    if coupling_sign is None:
        return diagram
    s = _sign(coupling_energy(diagram))
    if s == 0:
        warnings.warn("net coupling energy is zero; reflection left unresolved", AmbiguityWarning, stacklevel=3)
        return diagram
    return diagram if s == coupling_sign else diagram.mirrored()


def _build_diagram(solver, st, freqs, species, unassigned, n_spins, n_solutions) -> LevelDiagram:
    ids = solver.ids
    # group level classes by energy component; component reference = lower slot of lowest-id transition
    comp_classes: dict[int, set[int]] = defaultdict(set)
    comp_ref: dict[int, int] = {}
    for k in range(len(ids)):
        for slot in (solver.upper(k), solver.lower(k)):
            root, _ = st.bfind(slot)
            comp_classes[root].add(st.find(slot))
            comp_ref.setdefault(root, solver.lower(k))
    comps = sorted(comp_classes, key=lambda r: comp_ref[r])
    energies: dict[int, float] = {}
    level_of_class: dict[int, int] = {}
    components: list[list[int]] = []
    next_id = 0
    for root in comps:
        _, ref_off = st.bfind(comp_ref[root])
        rows = []
        for cls in comp_classes[root]:
            _, off = st.bfind(cls)
            rows.append((-(off - ref_off), min(st.members[cls]), cls, off - ref_off))
        rows.sort()
        comp_levels = []
        for _, _, cls, e in rows:
            level_of_class[cls] = next_id
            energies[next_id] = e
            comp_levels.append(next_id)
            next_id += 1
        components.append(comp_levels)
    edges = {
        t: (level_of_class[st.find(solver.upper(k))], level_of_class[st.find(solver.lower(k))])
        for k, t in enumerate(ids)
    }
    return LevelDiagram(
        energies=energies,
        edges=edges,
        freqs={t: freqs[t] for t in ids},
        species={t: species[t] for t in ids},
        components=components,
        unassigned=unassigned,
        n_levels_expected=2**n_spins if n_spins else None,
        n_solutions=n_solutions,
    )


@dataclass
class VerifyReport:
    max_residual: float
    flagged: list[tuple[int, float]]
    unassigned: list[int]
    n_levels: int
    n_levels_expected: int | None
    tol: float

    @property
    def level_count_ok(self) -> bool:
        return self.n_levels_expected is None or self.n_levels == self.n_levels_expected

    @property
    def ok(self) -> bool:
        return not self.flagged and not self.unassigned and self.level_count_ok

    def to_record(self) -> dict:
        return {
            "ok": self.ok,
            "max_residual_hz": self.max_residual,
            "tol_hz": self.tol,
            "flagged": [{"transition_id": t, "residual_hz": r} for t, r in self.flagged],
            "unassigned": self.unassigned,
            "n_levels": self.n_levels,
            "n_levels_expected": self.n_levels_expected,
            "level_count_ok": self.level_count_ok,
        }


def verify_diagram(diagram: LevelDiagram, transitions: Sequence, tol: float = SIM_TOL) -> VerifyReport:
    """Energy-closure residual of every edge against ``transitions`` frequencies."""
    flagged, worst = [], 0.0
    for t in sorted(transitions, key=lambda t: t.id):
        if t.id not in diagram.edges:
            continue
        u, l = diagram.edges[t.id]
        res = abs(diagram.energies[u] - diagram.energies[l] - t.freq)
        worst = max(worst, res)
        if res > tol:
            flagged.append((t.id, res))
    unassigned = sorted(t.id for t in transitions if t.id not in diagram.edges)
    return VerifyReport(worst, flagged, unassigned, diagram.n_levels, diagram.n_levels_expected, tol)


def match_levels(diagram: LevelDiagram, transitions: Sequence) -> dict[int, int]:
    """Map diagram levels onto the ``upper``/``lower`` level indices of simulated transitions.

    Raises ``ValueError`` when the edge structure is not consistent with a
    bijection, i.e. the diagram is not isomorphic to the ground truth.
    """
    mapping: dict[int, int] = {}
    for t in transitions:
        if t.id not in diagram.edges:
            continue
        for rec, true in zip(diagram.edges[t.id], (t.upper, t.lower)):
            if mapping.setdefault(rec, true) != true:
                raise ValueError(f"diagram level {rec} maps to both {mapping[rec]} and {true}")
    if len(set(mapping.values())) != len(mapping):
        raise ValueError("two diagram levels map to the same true level")
    return mapping


def diagram_labels(diagram: LevelDiagram, transitions: Sequence, labels) -> dict[int, str]:
    return {rec: labels.label(true) for rec, true in match_levels(diagram, transitions).items()}


def export_dot(
    diagram: LevelDiagram,
    labels: Mapping[int, str] | None = None,
    cluster_species: str | None = None,
) -> str:
    """Graphviz text of the diagram, levels listed by descending energy.

    Levels are grouped into clusters joined by ``cluster_species`` edges
    (default: the species with the most edges, when more than one species is
    present).
    """
    counts: dict[str, int] = defaultdict(int)
    for t in diagram.edges:
        counts[diagram.species.get(t, "")] += 1
    if cluster_species is None and len(counts) > 1:
        cluster_species = sorted(counts, key=lambda s: (-counts[s], s))[0]
    groups = diagram.partition(cluster_species) if cluster_species else [sorted(diagram.energies)]

    def node(k: int) -> str:
        lab = f"{k}" if not labels or k not in labels else f"{k} |{labels[k]}>"
        e = diagram.energies[k]
        return f'    L{k} [label="{lab}\\n{e:.9g} Hz", energy="{e:.9g}"];'

    out = ["digraph levels {", "  rankdir=TB;", "  node [shape=box];"]
    for g, members in enumerate(groups):
        out.append(f"  subgraph cluster_{g} {{")
        out.append(f'    label="group {g}";')
        for k in sorted(members, key=lambda k: (-diagram.energies[k], k)):
            out.append(node(k))
        out.append("  }")
    for t, (u, l) in sorted(diagram.edges.items()):
        f = diagram.freqs.get(t)
        ftxt = f', freq="{f:.9g}"' if f is not None else ""
        out.append(f'  L{u} -> L{l} [label="{t}", transition="{t}"{ftxt}];')
    out.append("}")
    return "\n".join(out) + "\n"


_NODE = re.compile(r'^\s*L(\d+) \[label="[^"]*", energy="([^"]+)"\];$')
_EDGE = re.compile(r'^\s*L(\d+) -> L(\d+) \[label="(\d+)", transition="(\d+)"')


def parse_dot(text: str) -> tuple[dict[int, float], dict[int, tuple[int, int]]]:
    """Inverse of :func:`export_dot` for node energies and edges."""
    nodes, edges = {}, {}
    for line in text.splitlines():
        m = _NODE.match(line)
        if m:
            nodes[int(m.group(1))] = float(m.group(2))
            continue
        m = _EDGE.match(line)
        if m:
            edges[int(m.group(4))] = (int(m.group(1)), int(m.group(2)))
    return nodes, edges
