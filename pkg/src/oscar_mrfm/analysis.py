"""Zero crossings of <x>, half-period statistics and frequency shifts.

Per half-period j the observables are the crossing interval ``dtau_j``, its
deviation ``|dtau_j - pi|`` from the unperturbed half-period, the effective
frequency ``omega_j = pi / dtau_j`` and the effective shift
``omega_j - 1`` (positive when the half-period is shorter than pi).  Note that
the deviation and the shift are related by ``deviation ~ pi * shift`` to
first order, not by a reciprocal.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .params import ModelParams
from .quasiclassical import delta_omega0


class CrossingError(ValueError):
    pass


@dataclass(frozen=True)
class CrossingSeries:
    crossings: np.ndarray
    directions: np.ndarray  # +1 for upward, -1 for downward

    def __post_init__(self) -> None:
        if np.any(np.diff(self.crossings) <= 0):
            raise CrossingError("crossing times must be strictly increasing")

    @property
    def dtau_j(self) -> np.ndarray:
        return np.diff(self.crossings)

    @property
    def deviations(self) -> np.ndarray:
        return np.abs(self.dtau_j - math.pi)

    @property
    def omega_j(self) -> np.ndarray:
        return math.pi / self.dtau_j

    def __len__(self) -> int:
        return len(self.dtau_j)

    def to_csv(self, path: str | Path) -> None:
        shifts = effective_shift_series(self) if len(self) else np.empty(0)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "tau_j", "dtau_j", "deviation_j", "shift_j"])
            for j, (t, d, dev, s) in enumerate(
                zip(self.crossings[1:], self.dtau_j, self.deviations, shifts), start=1
            ):
                w.writerow([j, f"{t:.17g}", f"{d:.17g}", f"{dev:.17g}", f"{s:.17g}"])


def _refine(t: np.ndarray, x: np.ndarray, i: int) -> float:
    """Root of the cubic through the 4 samples around the bracket [i, i+1]."""
    lo = min(max(i - 1, 0), len(t) - 4)
    tt = t[lo:lo + 4]
    xx = x[lo:lo + 4]
    scale = t[i + 1] - t[i]
    s = (tt - t[i]) / scale
    coeffs = np.polyfit(s, xx, 3)
    roots = np.roots(coeffs)
    roots = roots[np.abs(roots.imag) < 1e-9].real
    roots = roots[(roots >= -1e-9) & (roots <= 1 + 1e-9)]
    if len(roots):
        r = roots[np.argmin(np.abs(roots - 0.5))]
    else:
        r = -x[i] / (x[i + 1] - x[i])
    return float(t[i] + r * scale)


def find_crossings(tau: np.ndarray, x: np.ndarray) -> CrossingSeries:
    """Zero crossings of uniformly sampled ``x(tau)`` with cubic refinement."""
    tau = np.asarray(tau, dtype=float)
    x = np.asarray(x, dtype=float)
    if len(tau) < 4 or len(tau) != len(x):
        raise CrossingError("need at least 4 samples of equal length")
    dt = np.diff(tau)
    if np.any(dt <= 0):
        raise CrossingError("sample times are not strictly increasing")
    up = (x[:-1] < 0) & (x[1:] >= 0)
    down = (x[:-1] > 0) & (x[1:] <= 0)
    idx = np.flatnonzero(up | down)
    if len(idx) == 0:
        raise CrossingError("no zero crossings found")
    times: list[float] = []
    dirs: list[int] = []
    for i in idx:
        t0 = _refine(tau, x, int(i))
        d = 1 if up[i] else -1
        if times and t0 - times[-1] < dt[i]:
            # grazing contact: a close pair collapses into one crossing
            times[-1] = 0.5 * (times[-1] + t0)
            dirs[-1] = d
            continue
        times.append(t0)
        dirs.append(d)
    return CrossingSeries(np.array(times), np.array(dirs, dtype=int))


def effective_shift_series(c: CrossingSeries) -> np.ndarray:
    """Signed effective shift per half-period, ``pi/dtau_j - 1``."""
    if len(c) == 0:
        raise CrossingError("crossing series has no half-periods")
    return c.omega_j - 1.0


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    rms: float
    n: int


def linear_fit(j, y, window: slice | None = None) -> FitResult:
    """Ordinary least squares ``y = slope * j + intercept``."""
    j = np.asarray(j, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is not None:
        j, y = j[window], y[window]
    if len(j) < 2:
        raise ValueError("need at least 2 points for a linear fit")
    if np.ptp(j) == 0:
        raise ValueError("degenerate fit: all abscissae equal")
    A = np.column_stack([j, np.ones_like(j)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * j + intercept)
    return FitResult(float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))), len(j))


def fit_deviations(c: CrossingSeries, window: slice | None = None) -> FitResult:
    """Linear trend of the deviation series against half-period index j = 1, 2, ..."""
    return linear_fit(np.arange(1, len(c) + 1), c.deviations, window)


def mean_shift(shifts, window: slice | None = None) -> float:
    s = np.asarray(shifts, dtype=float)
    if window is not None:
        s = s[window]
    if len(s) == 0:
        raise ValueError("empty averaging window")
    return float(np.mean(s))


def saturated_mean_shift(shifts, ceiling: float, window: slice | None = None) -> float:
    """Mean of ``min(|shift_j|, ceiling)``.

    A collapse moves the cantilever onto a trajectory whose phase already
    differs from the mean one; the catch-up appears as a single half-period
    with an oversized deviation.  Saturating at the definite-spin shift keeps
    that phase step from being counted as frequency.
    """
    s = np.abs(np.asarray(shifts, dtype=float))
    if window is not None:
        s = s[window]
    if len(s) == 0:
        raise ValueError("empty averaging window")
    return float(np.mean(np.minimum(s, ceiling)))


def effective_spin_decrease(mean: float, m: ModelParams) -> float:
    """Apparent reduction of the spin implied by a reduced mean shift."""
    return (mean - delta_omega0(m)) * math.sqrt(2.0 * m.eta**2 * m.x_m**2 + m.eps**2) / (2.0 * m.eta**2)
