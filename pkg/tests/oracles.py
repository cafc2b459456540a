"""Independent reference computations used by the tests.

These deliberately avoid the package's own operator construction: the
Hamiltonian is assembled from ``D (3 IzIz - I.I) + J I.I``, unitaries come
from ``scipy.linalg.expm``, and permutations are composed as matrices.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import eigvalsh, expm

from nmrqip.spins import build_spin_system

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex) / 2,
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex) / 2,
    "z": np.array([[1, 0], [0, -1]], dtype=complex) / 2,
}


def op(n: int, k: int, axis: str) -> np.ndarray:
    mats = [PAULI[axis] if i == k else np.eye(2) for i in range(n)]
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def hamiltonian(sys) -> np.ndarray:
    n = sys.n_spins
    h = sum(sys.larmor[k] * op(n, k, "z") for k in range(n))
    for (i, j) in sys.pairs():
        d, jj = sys.dipolar.get((i, j), 0.0), sys.scalar.get((i, j), 0.0)
        zz = op(n, i, "z") @ op(n, j, "z")
        if sys.species[i] == sys.species[j]:
            dot = sum(op(n, i, a) @ op(n, j, a) for a in "xyz")
            h = h + d * (3 * zz - dot) + jj * dot
        else:
            h = h + (d + jj) * zz
    return np.asarray(h, dtype=complex)


def energies(sys) -> np.ndarray:
    return np.sort(eigvalsh(hamiltonian(sys)))


def selective_unitary(dim: int, upper: int, lower: int, theta: float, phi: float) -> np.ndarray:
    g = np.zeros((dim, dim), dtype=complex)
    g[upper, lower] = 0.5 * np.exp(-1j * phi)
    g[lower, upper] = 0.5 * np.exp(1j * phi)
    return expm(-1j * theta * g)


def hard_unitary(model, species: str, theta: float, phi: float) -> np.ndarray:
    sys = model.system
    n = sys.n_spins
    gen = sum(math.cos(phi) * op(n, k, "x") + math.sin(phi) * op(n, k, "y")
              for k in sys.spins_of(species))
    v = model.eigen.vectors
    return v.conj().T @ expm(-1j * theta * gen) @ v


def evolve(rho, u):
    return u @ rho @ u.conj().T


def normalized_overlap(rho: np.ndarray, levels, psi: np.ndarray) -> float:
    """Restrict, remove the identity part, rescale to pure-state size, project."""
    sub = rho[np.ix_(levels, levels)]
    d = len(levels)
    dev = sub - np.eye(d) * np.trace(sub) / d
    pure_norm = math.sqrt(1 - 1 / d)
    scale = np.linalg.norm(dev, "fro") / pure_norm
    f = 1 / d + (psi.conj() @ dev @ psi).real / scale
    return float(np.clip(f, 0, 1))


def transposition_matrix(n: int, a: int, b: int) -> np.ndarray:
    p = np.eye(n, dtype=int)
    p[[a, b]] = p[[b, a]]
    return p


def composed_permutation(n: int, pairs) -> np.ndarray:
    """Matrix product of the transpositions, first pulse applied first."""
    m = np.eye(n, dtype=int)
    for a, b in pairs:
        m = transposition_matrix(n, a, b) @ m
    return m


def random_system(rng, n: int, hetero: bool | None = None, d_scale: float = 400.0):
    """Random oriented system: H offsets 1500-3000 Hz, optional single F at 5000-8000 Hz."""
    species = ["H"] * n
    if hetero is None:
        hetero = n > 1 and rng.random() < 0.5
    if hetero:
        species[int(rng.integers(n))] = "F"
    spins = [
        {"index": k + 1, "species": s,
         "larmor_hz": float(rng.uniform(1500, 3000) if s == "H" else rng.uniform(5000, 8000))}
        for k, s in enumerate(species)
    ]
    couplings = [
        {"i": i + 1, "j": j + 1, "d_hz": float(rng.uniform(-d_scale, d_scale)), "j_hz": float(rng.uniform(-10, 10))}
        for i in range(n) for j in range(i + 1, n)
    ]
    return build_spin_system(spins, couplings)


def transition_graph_connected(model) -> bool:
    seen, stack = {0}, [0]
    adj = {}
    for t in model.transitions:
        adj.setdefault(t.upper, []).append(t.lower)
        adj.setdefault(t.lower, []).append(t.upper)
    while stack:
        v = stack.pop()
        for w in adj.get(v, []):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == model.dim
