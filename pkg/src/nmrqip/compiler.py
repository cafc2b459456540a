"""Compile level permutations into transition-selective pi-pulse sequences.

A selective pi pulse on a transition exchanges the populations of its two
levels. Swapping two levels joined by a path ``v0 .. vk`` of transitions uses
the palindrome ``e1 .. e(k-1), ek, e(k-1) .. e1``: the outer pulses ferry the
content of ``v0`` along the path and back, so every intermediate level ends
where it started. Paths come from breadth-first search with the lowest
transition id explored first, so sequences are minimal within this family
and deterministic.

Permutations use the ``dest`` convention: ``dest[i]`` is the level that
receives the content of level ``i``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping, Sequence


class CompileError(ValueError):
    pass


@dataclass(frozen=True)
class PulseSequence:
    transitions: tuple[int, ...]
    net_permutation: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.transitions)

    def to_script(self, crush: str | None = "all") -> str:
        """ProtocolScript fragment: one selective pi per transition, each optionally crushed."""
        lines = []
        for t in self.transitions:
            lines.append(f"pulse selective {t} pi 0")
            if crush:
                lines.append(f"crush {crush}")
        return "\n".join(lines) + ("\n" if lines else "")


def _level_pairs(transitions) -> dict[int, tuple[int, int]]:
    return {t.id: (t.upper, t.lower) for t in transitions}


def _n_levels(pairs: Mapping[int, tuple[int, int]]) -> int:
    return 1 + max((max(p) for p in pairs.values()), default=-1)


def sequence_permutation(transitions, ids: Sequence[int], n_levels: int | None = None) -> tuple[int, ...]:
    """Net ``dest`` permutation of pi pulses applied in order on ``ids``."""
    pairs = _level_pairs(transitions)
    n = n_levels if n_levels is not None else _n_levels(pairs)
    where = list(range(n))  # where[i]: current position of the content that started at level i
    at = list(range(n))  # at[p]: which original content sits at level p
    for t in ids:
        if t not in pairs:
            raise CompileError(f"unknown transition id {t}")
        a, b = pairs[t]
        at[a], at[b] = at[b], at[a]
        where[at[a]], where[at[b]] = a, b
    return tuple(where)


def level_path(transitions, a: int, b: int) -> list[int]:
    """Transition ids along a shortest path from level ``a`` to ``b``."""
    pairs = _level_pairs(transitions)
    adj: dict[int, list[tuple[int, int]]] = {}
    for t in sorted(pairs):
        u, l = pairs[t]
        adj.setdefault(u, []).append((t, l))
        adj.setdefault(l, []).append((t, u))
    prev: dict[int, tuple[int, int] | None] = {a: None}
    queue = deque([a])
    while queue:
        v = queue.popleft()
        if v == b:
            break
        for t, w in adj.get(v, []):
            if w not in prev:
                prev[w] = (t, v)
                queue.append(w)
    if b not in prev:
        raise CompileError(f"no pulse path between levels {a} and {b}")
    path = []
    v = b
    while prev[v] is not None:
        t, v = prev[v]
        path.append(t)
    return path[::-1]


def compile_level_swap(transitions, level_a: int, level_b: int, n_levels: int | None = None) -> PulseSequence:
    pairs = _level_pairs(transitions)
    n = n_levels if n_levels is not None else _n_levels(pairs)
    for lv in (level_a, level_b):
        if not 0 <= lv < n:
            raise CompileError(f"level {lv} out of range 0..{n - 1}")
    if level_a == level_b:
        return PulseSequence((), tuple(range(n)))
    path = level_path(transitions, level_a, level_b)
    seq = tuple(path[:-1] + path[-1:] + path[-2::-1])
    perm = sequence_permutation(transitions, seq, n)
    expected = list(range(n))
    expected[level_a], expected[level_b] = level_b, level_a
    if list(perm) != expected:
        raise AssertionError(f"palindrome {seq} does not realize the swap ({level_a} {level_b})")
    return PulseSequence(seq, perm)


def _cycles(dest: Sequence[int]) -> list[list[int]]:
    seen, out = set(), []
    for start in range(len(dest)):
        if start in seen or dest[start] == start:
            continue
        cyc, v = [], start
        while v not in seen:
            seen.add(v)
            cyc.append(v)
            v = dest[v]
        out.append(cyc)
    return out


def compile_permutation(transitions, permutation: Sequence[int] | Mapping[int, int]) -> PulseSequence:
    """Sequence whose net effect moves the content of level ``i`` to ``permutation[i]``.

    A mapping may list only the moved levels. Each cycle ``c0 -> c1 -> ..``
    becomes the swaps ``(c0 c1), (c0 c2), ..``, each compiled as a palindrome.
    """
    pairs = _level_pairs(transitions)
    n = _n_levels(pairs)
    if isinstance(permutation, Mapping):
        dest = list(range(n))
        for k, v in permutation.items():
            dest[k] = v
    else:
        dest = list(permutation)
        n = max(n, len(dest))
        dest += list(range(len(dest), n))
    if sorted(dest) != list(range(n)):
        raise CompileError("target is not a permutation of the level set")
    seq: list[int] = []
    for cyc in _cycles(dest):
        for c in cyc[1:]:
            try:
                seq.extend(compile_level_swap(transitions, cyc[0], c, n).transitions)
            except CompileError as exc:
                raise CompileError(f"cycle {cyc}: {exc}") from None
    perm = sequence_permutation(transitions, seq, n)
    if list(perm) != dest:
        raise AssertionError("composed sequence does not realize the target permutation")
    return PulseSequence(tuple(seq), perm)


def permutation_matrix(dest: Sequence[int]) -> list[list[int]]:
    """0/1 matrix ``P`` with ``P[dest[i]][i] = 1`` so that ``P @ pops`` moves populations."""
    n = len(dest)
    m = [[0] * n for _ in range(n)]
    for i, d in enumerate(dest):
        m[d][i] = 1
    return m
