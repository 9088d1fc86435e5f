"""Closed-form estimates for the OSCAR frequency shift and its noise-induced reduction."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .params import ModelParams, PhysicalParams, to_model

# Prefactor of the per-reversal spin deviation; taken as given.
SPIN_DEVIATION_PREFACTOR = 3.4


def delta_omega0(m: ModelParams) -> float:
    """Relative CT frequency shift for a spin following the effective field."""
    return 2.0 * m.spin * m.eta**2 / math.sqrt(2.0 * m.eta**2 * m.x_m**2 + m.eps**2)


def thermal_amplitude(p: PhysicalParams) -> tuple[float, float]:
    """Thermal CT amplitude near the Rabi frequency (m) and the Rabi frequency (rad/s)."""
    omega_R = p.gamma * p.B1
    a_T = (p.omega_c / omega_R) * math.sqrt(p.k_B * p.T_K / (2.0 * p.k_c))
    return a_T, omega_R


def spin_deviation_sq(p: PhysicalParams, a_T: float) -> float:
    """Mean-square spin deviation accumulated in one adiabatic reversal.

    The gyromagnetic ratio multiplies the gradient here; without it the
    expression is not dimensionless.
    """
    return SPIN_DEVIATION_PREFACTOR * p.gamma * p.G * a_T**2 / (p.omega_c * p.X_m)


class RootNotFound(ValueError):
    pass


def _bisect(f, lo: float, hi: float, tol: float) -> float:
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def _branch_peak(k: int) -> float:
    """Maximiser of tau*sin(tau) on (k pi, (k+1) pi), k even: root of sin(t) + t cos(t)."""
    g = lambda t: math.sin(t) + t * math.cos(t)  # noqa: E731
    return _bisect(g, k * math.pi + math.pi / 2, (k + 1) * math.pi, 1e-15)


def collapse_time_roots(
    r: float, tau_max: float | None = None, max_branches: int = 1000, tol: float = 1e-10,
) -> list[float]:
    """Positive roots of ``tau*sin(tau) = r``, ascending.

    Each positive lobe ``(k pi, (k+1) pi)`` (k even) holds a rising and a
    falling root once its peak exceeds ``r``.  Without ``tau_max`` only the
    first such lobe is returned; otherwise every root below ``tau_max``.
    At most ``max_branches`` lobes are scanned.
    """
    if not r > 0:
        raise ValueError("right-hand side must be positive")
    f = lambda t: t * math.sin(t) - r  # noqa: E731
    roots: list[float] = []
    for b in range(max_branches):
        k = 2 * b
        if tau_max is not None and k * math.pi >= tau_max:
            break
        peak = _branch_peak(k)
        if peak * math.sin(peak) < r:
            continue
        roots.append(_bisect(f, k * math.pi, peak, tol * 1e-2))
        roots.append(_bisect(f, peak, (k + 1) * math.pi, tol * 1e-2))
        if tau_max is None:
            break
    if tau_max is not None:
        roots = [t for t in roots if t < tau_max]
    if not roots:
        raise RootNotFound(f"tau*sin(tau) never reaches {r} within {max_branches} lobes")
    return roots


def collapse_time_root(r: float, max_branches: int = 1000, tol: float = 1e-10) -> float:
    """Smallest positive root of ``tau*sin(tau) = r``."""
    return collapse_time_roots(r, max_branches=max_branches, tol=tol)[0]


def collapse_rhs(m: ModelParams) -> float:
    """Right-hand side 1/(4 x_m dw0): trajectories separated by the coherent-state width."""
    return 1.0 / (4.0 * m.x_m * delta_omega0(m))


def collapse_time_for(x_m: float, dw0: float) -> float:
    """Collapse time when the two trajectories separate by the coherent-state width."""
    if not (x_m > 0 and dw0 > 0):
        raise ValueError("x_m and dw0 must be positive")
    return collapse_time_root(1.0 / (4.0 * x_m * dw0))


def shift_reduction(p_flip: float, dw0: float) -> float:
    """Mean shift when the opposite-shift trajectory has probability ``p_flip``."""
    if not 0.0 <= p_flip <= 0.5:
        raise ValueError(f"flipped-branch probability must lie in [0, 1/2], got {p_flip}")
    return dw0 * (1.0 - 2.0 * p_flip)


def flipped_branch_probability(dtheta_sq: float) -> float:
    """Weight of the flipped trajectory for an accumulated spin deviation."""
    return dtheta_sq / 4.0


@dataclass(frozen=True)
class ThermalSeparation:
    separation_m: float
    separation: float  # in units of X0
    tau_coll: float
    periods: float


def thermal_separation_case(p: PhysicalParams, m: ModelParams | None = None) -> ThermalSeparation:
    """Collapse when trajectories separate by the thermal CT fluctuation.

    The two trajectories with shifts +-dw0 separate with envelope
    ``2 x_m dw0 tau``; the returned time is when that envelope reaches the
    thermal amplitude sqrt(k_B T / k_c).
    """
    if m is None:
        m = to_model(p)
    if m.X0 is None:
        raise ValueError("model parameters need the length unit X0")
    sep_m = math.sqrt(p.k_B * p.T_K / p.k_c)
    sep = sep_m / m.X0
    tau = sep / (2.0 * m.x_m * delta_omega0(m))
    return ThermalSeparation(sep_m, sep, tau, tau / (2.0 * math.pi))


@dataclass(frozen=True)
class EstimateReport:
    delta_omega0: float
    a_T: float
    omega_R: float
    dtheta1_sq: float
    collapse_rhs: float
    tau_coll_root: float
    mean_shift_reduction: float  # <dw>/dw0 for one reversal
    thermal: ThermalSeparation

    def rows(self) -> list[tuple[str, float, str]]:
        return [
            ("delta_omega0", self.delta_omega0, "1"),
            ("a_T", self.a_T, "m"),
            ("omega_R", self.omega_R, "rad/s"),
            ("dtheta1_sq", self.dtheta1_sq, "rad^2"),
            ("collapse_rhs", self.collapse_rhs, "1"),
            ("tau_coll_root", self.tau_coll_root, "1"),
            ("mean_shift_reduction", self.mean_shift_reduction, "1"),
            ("thermal_separation", self.thermal.separation_m, "m"),
            ("thermal_separation_dimless", self.thermal.separation, "1"),
            ("thermal_tau_coll", self.thermal.tau_coll, "1"),
            ("thermal_tau_coll_periods", self.thermal.periods, "periods"),
        ]


def estimate(p: PhysicalParams) -> EstimateReport:
    m = to_model(p)
    dw0 = delta_omega0(m)
    a_T, omega_R = thermal_amplitude(p)
    dth = spin_deviation_sq(p, a_T)
    rhs = collapse_rhs(m)
    return EstimateReport(
        delta_omega0=dw0,
        a_T=a_T,
        omega_R=omega_R,
        dtheta1_sq=dth,
        collapse_rhs=rhs,
        tau_coll_root=collapse_time_root(rhs),
        mean_shift_reduction=shift_reduction(dth, dw0) / dw0,
        thermal=thermal_separation_case(p, m),
    )
