"""Initial states, expectation values and spin-oscillator entanglement.

A joint state is stored as a complex vector in the ``2*n + s`` ordering of
:mod:`oscar_mrfm.hilbert`; reshaping to ``(n_osc, 2)`` gives the two spin
components ``u_alpha`` (column 0) and ``u_beta`` (column 1) in the number
basis.

The coherent state uses the standard number-basis normalisation
``exp(-|a|^2/2) a^n / sqrt(n!)`` with ``a = (x0 + i p0)/sqrt(2)``.  The
Hermite-polynomial form of the same state that appears in the literature is
a position-representation expansion and, as usually printed, is missing its
normalisation; only the properties <x> = x0, <p> = p0 and <(dx)^2> = 1/2 are
relied upon here.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .hilbert import BasisSpec


class TruncationError(RuntimeError):
    """The state does not fit inside the truncated oscillator basis."""


class Sense(str, Enum):
    ALIGNED = "aligned"
    ANTI_ALIGNED = "anti_aligned"

    @property
    def sign(self) -> int:
        return 1 if self is Sense.ALIGNED else -1

    def flipped(self) -> "Sense":
        return Sense.ANTI_ALIGNED if self is Sense.ALIGNED else Sense.ALIGNED


class SpinVector(NamedTuple):
    sx: float
    sy: float
    sz: float

    @property
    def magnitude(self) -> float:
        return math.sqrt(self.sx**2 + self.sy**2 + self.sz**2)

    def dot(self, direction) -> float:
        d = np.asarray(direction, dtype=float)
        return float(self.sx * d[0] + self.sy * d[1] + self.sz * d[2])


@dataclass(frozen=True)
class EffectiveField:
    """Rotating-frame field (B_x, B_z) seen by the spin."""

    bx: float
    bz: float

    @classmethod
    def at(cls, eps: float, eta: float, x: float) -> "EffectiveField":
        return cls(eps, 2.0 * eta * x)

    @property
    def magnitude(self) -> float:
        return math.hypot(self.bx, self.bz)

    def unit(self) -> np.ndarray:
        mag = self.magnitude
        if mag == 0:
            raise ValueError("effective field has zero magnitude")
        return np.array([self.bx / mag, 0.0, self.bz / mag])


@dataclass(frozen=True)
class JointState:
    amplitudes: np.ndarray
    basis: BasisSpec
    tau: float = 0.0

    def __post_init__(self) -> None:
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.basis.dim,):
            raise ValueError(f"amplitudes must have shape ({self.basis.dim},), got {amps.shape}")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def u(self) -> np.ndarray:
        """Spin components as columns, shape ``(n_osc, 2)``."""
        return self.amplitudes.reshape(self.basis.n_osc, 2)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def with_amplitudes(self, amplitudes: np.ndarray, tau: float | None = None) -> "JointState":
        return replace(self, amplitudes=amplitudes, tau=self.tau if tau is None else tau)

    def canonical(self) -> "JointState":
        """Same state with the largest-magnitude amplitude made real positive."""
        return self.with_amplitudes(fix_global_phase(self.amplitudes))

    def to_csv(self, path: str | Path) -> None:
        u = self.canonical().u
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "re_u_alpha", "im_u_alpha", "re_u_beta", "im_u_beta"])
            for n, (a, b) in enumerate(u):
                w.writerow([n, f"{a.real:.17g}", f"{a.imag:.17g}", f"{b.real:.17g}", f"{b.imag:.17g}"])


def fix_global_phase(amplitudes: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(amplitudes)))
    a = amplitudes[k]
    if a == 0:
        return amplitudes
    return amplitudes * (abs(a) / a)


def coherent_state(x0: float, p0: float, b: BasisSpec) -> np.ndarray:
    """Number-basis amplitudes of the coherent state centred at (x0, p0)."""
    alpha = complex(x0, p0) / math.sqrt(2.0)
    mean_n = abs(alpha) ** 2
    if mean_n + 8.0 * math.sqrt(mean_n) >= b.n_osc:
        raise TruncationError(
            f"coherent state with <n> = {mean_n:.1f} does not fit in n_osc = {b.n_osc}; "
            f"need n_osc > {mean_n + 8.0 * math.sqrt(mean_n):.0f}"
        )
    c = np.zeros(b.n_osc, dtype=complex)
    if alpha == 0:
        c[0] = 1.0
        return c
    n = np.arange(b.n_osc)
    # log|c_n| = log|c_{n-1}| + log|alpha| - log(n)/2
    steps = np.empty(b.n_osc)
    steps[0] = -0.5 * mean_n
    steps[1:] = math.log(abs(alpha)) - 0.5 * np.log(n[1:])
    log_mag = np.cumsum(steps)
    c = np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))
    return c / np.linalg.norm(c)


def spin_state_along(field: EffectiveField, sense: Sense | str = Sense.ALIGNED) -> np.ndarray:
    """Real spinor (alpha, beta) with <S> = +-(1/2) field / |field|."""
    sense = Sense(sense)
    if field.magnitude == 0:
        raise ValueError("cannot orient a spin along a zero effective field")
    theta = math.atan2(field.bx, field.bz)
    if sense is Sense.ALIGNED:
        return np.array([math.cos(theta / 2), math.sin(theta / 2)], dtype=complex)
    return np.array([-math.sin(theta / 2), math.cos(theta / 2)], dtype=complex)


def product_state(osc: np.ndarray, spinor: np.ndarray, b: BasisSpec, tau: float = 0.0) -> JointState:
    amps = np.kron(np.asarray(osc, dtype=complex), np.asarray(spinor, dtype=complex))
    return JointState(fix_global_phase(amps / np.linalg.norm(amps)), b, tau)


def initial_state(
    eps: float, eta: float, x0: float, p0: float, b: BasisSpec,
    sense: Sense | str = Sense.ANTI_ALIGNED,
) -> JointState:
    """Coherent CT state times a spin along/against B_eff(x0)."""
    field = EffectiveField.at(eps, eta, x0)
    return product_state(coherent_state(x0, p0, b), spin_state_along(field, sense), b)


def observables(psi: np.ndarray, n_osc: int) -> dict[str, np.ndarray]:
    """Expectation values for one state (shape ``(dim,)``) or a batch ``(dim, K)``.

    Uses the tridiagonal structure of x and p; values are not divided by the
    norm.
    """
    psi = np.asarray(psi)
    single = psi.ndim == 1
    u = psi.reshape(n_osc, 2, -1)
    pop = np.abs(u) ** 2  # (n, 2, K)
    level_pop = pop.sum(axis=1)  # (n, K)
    # <a> = sum_n sqrt(n+1) conj(u_n) u_{n+1}
    a_mean = np.einsum("n,nsk->k", np.sqrt(np.arange(1, n_osc)), u[:-1].conj() * u[1:])
    rho00 = pop[:, 0].sum(axis=0)
    rho11 = pop[:, 1].sum(axis=0)
    rho01 = np.einsum("nk,nk->k", u[:, 0], u[:, 1].conj())
    top = level_pop[n_osc - max(1, int(np.ceil(0.05 * n_osc))):].sum(axis=0)
    out = {
        "x": math.sqrt(2.0) * a_mean.real,
        "p": math.sqrt(2.0) * a_mean.imag,
        "h0": (np.arange(n_osc) + 0.5) @ level_pop,
        "sx": rho01.real,
        "sy": -rho01.imag,
        "sz": 0.5 * (rho00 - rho11),
        "norm": np.sqrt(rho00 + rho11),
        "top": top,
    }
    if single:
        out = {k: float(v[0]) for k, v in out.items()}
    return out


def expectations(s: JointState) -> tuple[float, float, float, SpinVector]:
    """(<x>, <p>, <H0>, <S>) for a normalised state."""
    o = observables(s.amplitudes, s.basis.n_osc)
    return o["x"], o["p"], o["h0"], SpinVector(o["sx"], o["sy"], o["sz"])


def reduced_spin_density(s: JointState) -> np.ndarray:
    u = s.u
    return u.T @ u.conj()


def spin_purity(s: JointState) -> tuple[float, float]:
    """Return ``(|<S>|, 1 - Tr(rho_s^2))`` of the reduced spin state."""
    rho = reduced_spin_density(s)
    sx = rho[0, 1].real
    sy = -rho[0, 1].imag
    sz = 0.5 * (rho[0, 0] - rho[1, 1]).real
    length = math.sqrt(sx**2 + sy**2 + sz**2)
    return length, float(1.0 - np.trace(rho @ rho).real)
