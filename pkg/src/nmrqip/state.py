"""Deviation density matrices expressed in the eigenbasis of a :class:`SpinModel`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spins import SpinModel


class BasisMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DensityState:
    """Immutable 2^n x 2^n deviation density matrix in the eigenbasis of ``model``."""

    matrix: np.ndarray
    model: SpinModel

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (self.model.dim, self.model.dim):
            raise ValueError(f"matrix shape {m.shape} does not match model dimension {self.model.dim}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def populations(self) -> np.ndarray:
        return self.matrix.diagonal().real.copy()

    def coherences(self) -> np.ndarray:
        return self.matrix - np.diag(self.matrix.diagonal())

    def with_matrix(self, matrix: np.ndarray) -> "DensityState":
        return DensityState(matrix, self.model)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return bool(np.abs(self.matrix - self.matrix.conj().T).max() <= tol * max(1.0, np.abs(self.matrix).max()))


def equilibrium_state(model: SpinModel) -> DensityState:
    """High-temperature deviation state ``sum_i gamma_i I_zi`` in the eigenbasis.

    Every eigenstate has definite per-species M, so the result is diagonal
    with population ``sum_s gamma_s M_s``.
    """
    return DensityState(np.diag(model.populations).astype(complex), model)


def population_state(model: SpinModel, populations) -> DensityState:
    return DensityState(np.diag(np.asarray(populations, dtype=float)).astype(complex), model)


def subtract_states(a: DensityState, b: DensityState) -> DensityState:
    if a.model is not b.model:
        raise BasisMismatchError("states refer to different eigenbases")
    return DensityState(a.matrix - b.matrix, a.model)
