"""Physical experiment parameters and their dimensionless images.

Lengths are measured in units of the cantilever zero-point scale
``X0 = sqrt(hbar * omega_c / k_c)``, momenta in ``P0 = hbar / X0`` and time in
units of ``1 / omega_c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

# CODATA values; GAMMA_E is the magnitude of the electron gyromagnetic ratio.
GAMMA_E = 1.760859e11  # rad s^-1 T^-1
HBAR = 1.054571817e-34  # J s
K_B = 1.380649e-23  # J / K


class ParameterError(ValueError):
    """Raised when a parameter is outside its physical domain."""


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise ParameterError(f"{name} must be a finite positive number, got {value!r}")


@dataclass(frozen=True)
class PhysicalParams:
    """Experimental inputs in SI units.

    The cantilever frequency is given as ``f_c = omega_c / 2 pi`` in Hz.
    """

    f_c: float
    k_c: float
    B1: float
    G: float
    X_m: float
    T_K: float
    gamma: float = GAMMA_E
    hbar: float = HBAR
    k_B: float = K_B

    def __post_init__(self) -> None:
        _require_positive(
            f_c=self.f_c, k_c=self.k_c, B1=self.B1, G=self.G, X_m=self.X_m,
            T_K=self.T_K, gamma=self.gamma, hbar=self.hbar, k_B=self.k_B,
        )

    @property
    def omega_c(self) -> float:
        return 2.0 * math.pi * self.f_c


@dataclass(frozen=True)
class ModelParams:
    """Dimensionless model parameters.

    ``X0`` and ``P0`` are ``None`` for parameter sets defined directly in
    dimensionless form (e.g. the reduced simulation set).
    """

    eps: float
    eta: float
    x_m: float
    X0: float | None = None
    P0: float | None = None
    spin: float = 0.5
    tau_R: float = field(init=False)

    def __post_init__(self) -> None:
        _require_positive(eps=self.eps, x_m=self.x_m, spin=self.spin)
        if not (math.isfinite(self.eta) and self.eta >= 0):
            raise ParameterError(f"eta must be finite and non-negative, got {self.eta!r}")
        object.__setattr__(self, "tau_R", 2.0 * math.pi / self.eps)


def to_model(p: PhysicalParams) -> ModelParams:
    """Convert experimental inputs to dimensionless model parameters."""
    omega_c = p.omega_c
    X0 = math.sqrt(p.hbar * omega_c / p.k_c)
    return ModelParams(
        eps=p.gamma * p.B1 / omega_c,
        eta=0.5 * (p.gamma * X0 / omega_c) * p.G,
        x_m=p.X_m / X0,
        X0=X0,
        P0=p.hbar / X0,
        spin=0.5,
    )


@dataclass(frozen=True)
class AdiabaticReport:
    eps: float
    eta_x_m: float
    tau_R: float
    ratio: float  # 2 eta x_m / eps

    def lines(self) -> list[str]:
        return [
            f"eps            = {self.eps:.6g}",
            f"eta*x_m        = {self.eta_x_m:.6g}",
            f"tau_R          = {self.tau_R:.6g}",
            f"2*eta*x_m/eps  = {self.ratio:.6g}",
        ]


def validate_adiabatic(m: ModelParams) -> AdiabaticReport:
    """Summarise the parameter regime. Never raises."""
    return AdiabaticReport(
        eps=m.eps,
        eta_x_m=m.eta * m.x_m,
        tau_R=m.tau_R,
        ratio=2.0 * m.eta * m.x_m / m.eps,
    )


# Parameters of the single-spin OSCAR experiment.
EXPERIMENT = PhysicalParams(
    f_c=6.6e3, k_c=600e-6, B1=300e-6, G=4.3e5, X_m=10e-9, T_K=0.2,
)

# Reduced parameter set used for the full quantum simulations.
SIMULATION = ModelParams(eps=10.0, eta=0.3, x_m=13.0)
