"""Operators on the truncated oscillator (x) spin-1/2 space.

Joint basis index is ``2*n + s`` with oscillator level ``n`` and spin index
``s`` (0 for S_z = +1/2, 1 for S_z = -1/2), i.e. the spin index runs fastest
and ``np.kron(osc_op, spin_op)`` produces matrices in this ordering.

Phases are chosen so that x, p^2 and S_x are real; with these conventions
the model Hamiltonian is real symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class BasisSpec:
    n_osc: int = 400

    def __post_init__(self) -> None:
        if int(self.n_osc) != self.n_osc or self.n_osc < 2:
            raise ValueError(f"n_osc must be an integer >= 2, got {self.n_osc!r}")

    @property
    def dim(self) -> int:
        return 2 * self.n_osc

    @property
    def top_band(self) -> int:
        """First oscillator level of the top 5% band watched for leakage."""
        return self.n_osc - max(1, int(np.ceil(0.05 * self.n_osc)))


@dataclass(frozen=True)
class HamiltonianSpec:
    """One piecewise-constant segment: ``eps_active`` is 0 while rf is off."""

    eps_active: float
    eta: float
    delta: float = 0.0


def spin_operators() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sx = np.array([[0.0, 0.5], [0.5, 0.0]])
    sy = np.array([[0.0, -0.5j], [0.5j, 0.0]])
    sz = np.array([[0.5, 0.0], [0.0, -0.5]])
    return sx, sy, sz


def annihilation(n_osc: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n_osc, dtype=float)), k=1)


def osc_x(b: BasisSpec) -> np.ndarray:
    """Position on the oscillator factor: <n-1|x|n> = sqrt(n/2)."""
    off = np.sqrt(np.arange(1, b.n_osc, dtype=float) / 2.0)
    return np.diag(off, 1) + np.diag(off, -1)


def osc_p(b: BasisSpec) -> np.ndarray:
    """Momentum on the oscillator factor, p = -i (a - a^dag) / sqrt(2)."""
    a = annihilation(b.n_osc)
    return -1j * (a - a.T) / np.sqrt(2.0)


def osc_h0(b: BasisSpec) -> np.ndarray:
    return np.diag(np.arange(b.n_osc, dtype=float) + 0.5)


def lift_osc(op: np.ndarray) -> np.ndarray:
    return np.kron(op, np.eye(2))


def lift_spin(op: np.ndarray, b: BasisSpec) -> np.ndarray:
    return np.kron(np.eye(b.n_osc), op)


def build_x(b: BasisSpec) -> np.ndarray:
    """Position operator lifted to the joint space."""
    return lift_osc(osc_x(b))


def build_p(b: BasisSpec) -> np.ndarray:
    return lift_osc(osc_p(b))


def build_hamiltonian(h: HamiltonianSpec, b: BasisSpec) -> np.ndarray:
    """H = (p^2 + x^2)/2 + eps S_x + 2 eta x S_z + delta S_z, real symmetric."""
    sx, _, sz = spin_operators()
    H = np.kron(osc_h0(b), np.eye(2))
    if h.eps_active:
        H += h.eps_active * lift_spin(sx, b)
    if h.eta:
        H += 2.0 * h.eta * np.kron(osc_x(b), sz)
    if h.delta:
        H += h.delta * lift_spin(sz, b)
    return H


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return m.shape[0] == m.shape[1] and bool(np.max(np.abs(m - m.conj().T)) <= tol)


def named_operators(b: BasisSpec, h: HamiltonianSpec | None = None) -> dict[str, np.ndarray]:
    """Operators available to the ``operators-dump`` command."""
    sx, sy, sz = spin_operators()
    ops = {
        "x": build_x(b),
        "p": build_p(b),
        "Sx": lift_spin(sx, b),
        "Sy": lift_spin(sy, b),
        "Sz": lift_spin(sz, b),
    }
    if h is not None:
        ops["H"] = build_hamiltonian(h, b)
    return ops
