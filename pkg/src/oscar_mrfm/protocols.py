"""Experiment drivers: plain OSCAR runs, interrupted OSCAR and collapse events.

Collapse model
--------------
A collapse is an instantaneous projective measurement of the spin along the
effective field at the current <x>, lifted as (identity on the CT) x
(spin projector).  The branch is drawn by the Born rule.  Collapse timing is
an input (:class:`CollapsePolicy`), not a prediction.

Interrupted OSCAR
-----------------
Switching the rf off for a quarter CT period acts as a pi/2 rotation of the
spin relative to the effective field.  The rotation angle depends on where
in the CT cycle the window sits, so pulses are locked to the CT motion: each
pulse starts a fixed offset after an upward zero crossing of <x>.  The offset
is calibrated with a semiclassical model (classical CT, classical spin,
coupled through the gradient term) so that the pulse produces the nominal
rotation; the quantum run then reports the angle actually achieved.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import analysis
from .evolve import DEFAULT_SAMPLE_DTAU, Evolver, NoiseRealization, TimeSeries, build_schedule, run
from .hilbert import BasisSpec
from .params import ModelParams
from .quasiclassical import delta_omega0
from .states import EffectiveField, JointState, Sense, initial_state, observables, spin_state_along

log = logging.getLogger(__name__)


class ScheduleConflict(ValueError):
    pass


def realization_rng(master_seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for ensemble member ``index``.

    Derived from the key ``(master_seed, index, stream)`` alone, so a member's
    draws do not depend on how many other members ran or in what order.
    Stream 0 drives the kick noise, stream 1 the collapse outcomes.
    """
    return np.random.default_rng(np.random.SeedSequence([master_seed, index, stream]))


class CollapseMode(str, Enum):
    NONE = "none"
    FIXED_INTERVAL = "fixed_interval"
    AT_TIMES = "at_times"


@dataclass(frozen=True)
class PulseSequence:
    """Periodic rf-off windows; ``duration`` pi/2 is a pi/2-pulse, pi a pi-pulse."""

    period: float
    duration: float = math.pi / 2
    count: int | None = None
    first: float = 0.0  # nominal time of the first pulse

    def __post_init__(self) -> None:
        if not self.period > self.duration > 0:
            raise ValueError("need period > duration > 0")
        if self.count is not None and self.count < 0:
            raise ValueError("count must be non-negative")


@dataclass(frozen=True)
class CollapsePolicy:
    mode: CollapseMode = CollapseMode.NONE
    tau_coll: float | None = None
    times: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", CollapseMode(self.mode))
        if self.mode is CollapseMode.FIXED_INTERVAL and not (self.tau_coll and self.tau_coll > 0):
            raise ValueError("fixed_interval collapse needs tau_coll > 0")
        object.__setattr__(self, "times", tuple(sorted(self.times)))

    @classmethod
    def none(cls) -> "CollapsePolicy":
        return cls()

    @classmethod
    def fixed_interval(cls, tau_coll: float) -> "CollapsePolicy":
        return cls(CollapseMode.FIXED_INTERVAL, tau_coll=tau_coll)

    @classmethod
    def at_times(cls, times: Sequence[float]) -> "CollapsePolicy":
        return cls(CollapseMode.AT_TIMES, times=tuple(times))


@dataclass
class OscarResult:
    series: TimeSeries
    crossings: analysis.CrossingSeries
    fit: analysis.FitResult
    shifts: np.ndarray
    state: JointState


def run_oscar(
    model: ModelParams,
    x0: float,
    p0: float = 0.0,
    noise: NoiseRealization | None = None,
    half_periods: int = 20,
    basis: BasisSpec = BasisSpec(),
    sample_dtau: float = DEFAULT_SAMPLE_DTAU,
    sense: Sense | str = Sense.ANTI_ALIGNED,
) -> OscarResult:
    """Uninterrupted OSCAR run from a coherent CT state with the spin against B_eff(x0)."""
    s0 = initial_state(model.eps, model.eta, x0, p0, basis, sense)
    schedule = build_schedule(model, (half_periods + 1) * math.pi, noise)
    series, state = run(s0, schedule, sample_dtau)
    crossings = analysis.find_crossings(series.tau, series.x)
    return OscarResult(
        series=series,
        crossings=crossings,
        fit=analysis.fit_deviations(crossings),
        shifts=analysis.effective_shift_series(crossings),
        state=state,
    )


@dataclass(frozen=True)
class CollapseOutcome:
    state: JointState
    sense: Sense
    outcome: str  # "kept" or "jumped"
    probabilities: tuple[float, float]  # (aligned, anti_aligned)


def branch_probabilities(s: JointState, eps_active: float, eta: float) -> tuple[float, float, np.ndarray]:
    """Weights of the spin along/against B_eff(<x>) and the field direction used."""
    x = observables(s.amplitudes, s.basis.n_osc)["x"]
    field_ = EffectiveField.at(eps_active, eta, x)
    if field_.magnitude == 0:
        raise ValueError("effective field vanishes at <x>; projection basis undefined")
    u = s.u
    weights = []
    for sense in (Sense.ALIGNED, Sense.ANTI_ALIGNED):
        v = spin_state_along(field_, sense)
        weights.append(float(np.sum(np.abs(u @ v.conj()) ** 2)))
    return weights[0], weights[1], field_.unit()


def apply_collapse(
    s: JointState,
    eps_active: float,
    eta: float,
    rng: np.random.Generator,
    reference: Sense | str = Sense.ANTI_ALIGNED,
) -> CollapseOutcome:
    """Project the spin onto B_eff(<x>) with a Born-rule branch choice."""
    reference = Sense(reference)
    p_al, p_anti, _ = branch_probabilities(s, eps_active, eta)
    total = p_al + p_anti
    p_al, p_anti = p_al / total, p_anti / total
    sense = Sense.ALIGNED if rng.random() < p_al else Sense.ANTI_ALIGNED
    x = observables(s.amplitudes, s.basis.n_osc)["x"]
    v = spin_state_along(EffectiveField.at(eps_active, eta, x), sense)
    branch = np.outer(s.u @ v.conj(), v)
    norm = np.linalg.norm(branch)
    if norm == 0:
        raise RuntimeError("selected collapse branch has zero norm")
    new = s.with_amplitudes((branch / norm).reshape(-1))
    return CollapseOutcome(new, sense, "kept" if sense is reference else "jumped", (p_al, p_anti))


def measure_reference_shift(
    model: ModelParams,
    x0: float,
    p0: float = 0.0,
    basis: BasisSpec = BasisSpec(),
    sample_dtau: float = DEFAULT_SAMPLE_DTAU,
    half_periods: int = 24,
    skip: int = 2,
) -> tuple[float, dict[str, float]]:
    """Definite-spin shift measured from noiseless uninterrupted runs.

    Averages ``|pi/dtau_j - 1|`` over both spin senses, skipping the first
    ``skip`` half-periods.  Returns the average and the per-sense values.
    """
    per_sense = {}
    for sense in Sense:
        r = run_oscar(model, x0, p0, None, half_periods, basis, sample_dtau, sense)
        per_sense[sense.value] = float(np.mean(np.abs(r.shifts[skip:])))
    return float(np.mean(list(per_sense.values()))), per_sense


def invert_collapse_time(mean_shift: float, dw0: float, tau_p: float) -> float:
    """Collapse time from the reduced mean shift of a periodic pi/2 sequence."""
    if not tau_p > 0 or not dw0 > 0:
        raise ValueError("tau_p and dw0 must be positive")
    ratio = mean_shift / dw0
    if not 0.0 <= ratio <= 1.0:
        log.warning("mean shift ratio %.4g outside [0, 1]; clamping", ratio)
        ratio = min(max(ratio, 0.0), 1.0)
    return tau_p * (1.0 - ratio)


# --- semiclassical pulse calibration -------------------------------------

def _rf_off_dot(eta: float, eps: float, x, p, S, duration: float):
    """<S>.B_eff after a classical rf-off window (closed form; S_z is conserved)."""
    sz = S[2]
    f = -2.0 * eta * sz  # constant force from the frozen S_z
    c, s = math.cos(duration), math.sin(duration)
    x_end = f + (x - f) * c + p * s
    # integral of x over the window
    phi = 2.0 * eta * (f * duration + (x - f) * s + p * (1.0 - c))
    cp, sp = np.cos(phi), np.sin(phi)
    sx = cp * S[0] - sp * S[1]
    bz = 2.0 * eta * x_end
    return (sx * eps + sz * bz) / np.hypot(eps, bz)


def _pick_offset(offsets: np.ndarray, f: np.ndarray, fun) -> float:
    sign_change = np.flatnonzero(np.sign(f[:-1]) != np.sign(f[1:]))
    if len(sign_change):
        i = sign_change[np.argmin(np.abs(offsets[sign_change]))]
        return float(brentq(fun, offsets[i], offsets[i + 1], xtol=1e-13))
    return float(offsets[np.argmin(np.abs(f))])


def calibrate_pulse_offset(
    model: ModelParams,
    amplitude: float,
    duration: float = math.pi / 2,
    sense: Sense | str = Sense.ALIGNED,
    approach: str = "turning_point",
) -> float:
    """Offset from an upward zero crossing at which an rf-off window should start.

    The target is ``<S>.B_eff = sign * cos(duration) / 2`` at the end of the
    window, i.e. a rotation by ``duration`` relative to the field.

    ``approach="turning_point"`` follows the spin adiabatically (rf on) from
    the preceding turning point, which is the situation inside a run.
    ``approach="prepared"`` assumes the spin is prepared exactly along the
    field at the window start.
    """
    sense = Sense(sense)
    eps, eta, A = model.eps, model.eta, float(amplitude)
    target = sense.sign * 0.5 * math.cos(duration)
    offsets = np.linspace(-math.pi / 4, math.pi / 4, 801)

    if approach == "prepared":
        def dots(s):
            s = np.asarray(s, dtype=float)
            x, p = A * np.sin(s), A * np.cos(s)
            b = np.hypot(eps, 2 * eta * x)
            S = sense.sign * 0.5 * np.array([eps / b, np.zeros_like(x), 2 * eta * x / b])
            return _rf_off_dot(eta, eps, x, p, S, duration)
    elif approach == "turning_point":
        def rhs(_, y):
            x, p, sx, sy, sz = y
            bz = 2 * eta * x
            return [p, -x - 2 * eta * sz, -bz * sy, bz * sx - eps * sz, eps * sy]

        b0 = math.hypot(eps, 2 * eta * A)
        y0 = [-A, 0.0, sense.sign * 0.5 * eps / b0, 0.0, -sense.sign * 0.5 * 2 * eta * A / b0]
        crossing = lambda t, y: y[0]  # noqa: E731
        crossing.terminal = True
        crossing.direction = 1
        first = solve_ivp(rhs, (0, 2 * math.pi), y0, events=crossing, rtol=1e-11, atol=1e-12)
        t_c, y_c = first.t_events[0][0], first.y_events[0][0]
        sol = solve_ivp(rhs, (t_c, t_c + math.pi / 4), y_c, rtol=1e-11, atol=1e-12, dense_output=True)
        back = solve_ivp(rhs, (t_c, t_c - math.pi / 4), y_c, rtol=1e-11, atol=1e-12, dense_output=True)

        def dots(s):
            s = np.atleast_1d(np.asarray(s, dtype=float))
            out = np.empty_like(s)
            for i, si in enumerate(s):
                y = sol.sol(t_c + si) if si >= 0 else back.sol(t_c + si)
                out[i] = _rf_off_dot(eta, eps, y[0], y[1], y[2:], duration)
            return out
    else:
        raise ValueError(f"unknown approach {approach!r}")

    fun = lambda s: float(np.atleast_1d(dots(s))[0]) - target  # noqa: E731
    return _pick_offset(offsets, dots(offsets) - target, fun)


@dataclass(frozen=True)
class PulseResponse:
    offset: float
    p_aligned: float
    p_anti: float
    angle: float
    dot_before: float
    dot_after: float


def prepared_pulse_response(
    model: ModelParams,
    amplitude: float,
    duration: float = math.pi / 2,
    sense: Sense | str = Sense.ALIGNED,
    offset: float | None = None,
    basis: BasisSpec = BasisSpec(),
) -> PulseResponse:
    """Quantum response to one rf-off window on a freshly prepared product state.

    The CT starts as a coherent state at phase ``offset`` after an upward
    crossing of an orbit with the given amplitude; the spin points along
    (``sense``) B_eff there.  ``offset`` defaults to the calibrated value.
    """
    sense = Sense(sense)
    if offset is None:
        offset = calibrate_pulse_offset(model, amplitude, duration, sense, approach="prepared")
    x0, p0 = amplitude * math.sin(offset), amplitude * math.cos(offset)
    s0 = initial_state(model.eps, model.eta, x0, p0, basis, sense)
    _, _, bhat = branch_probabilities(s0, model.eps, model.eta)
    o = observables(s0.amplitudes, basis.n_osc)
    before = float(np.array([o["sx"], o["sy"], o["sz"]]) @ bhat)
    ev = Evolver(s0, duration)
    ev.advance(duration, 0.0, model.eta)
    p_al, p_anti, angle = _pulse_angle(ev.state, model.eps, model.eta)
    _, _, bhat = branch_probabilities(ev.state, model.eps, model.eta)
    o = observables(ev.state.amplitudes, basis.n_osc)
    after = float(np.array([o["sx"], o["sy"], o["sz"]]) @ bhat)
    return PulseResponse(offset, p_al, p_anti, angle, before, after)


# --- interrupted OSCAR driver ----------------------------------------------

@dataclass
class PulseRecord:
    trigger: float
    start: float
    end: float
    p_aligned: float
    p_anti: float
    angle: float  # angle between <S> and B_eff after the window, radians


@dataclass
class InterruptedResult:
    series: TimeSeries
    crossings: analysis.CrossingSeries
    shifts: np.ndarray
    pulses: list[PulseRecord]
    collapses: list[dict]
    mean_shift: float | None
    window: tuple[float, float] | None
    reference_shift: float
    state: JointState
    offsets: dict = field(default_factory=dict)


def _pulse_angle(s: JointState, eps: float, eta: float) -> tuple[float, float, float]:
    p_al, p_anti, bhat = branch_probabilities(s, eps, eta)
    o = observables(s.amplitudes, s.basis.n_osc)
    S = np.array([o["sx"], o["sy"], o["sz"]])
    length = np.linalg.norm(S)
    angle = math.acos(max(-1.0, min(1.0, float(S @ bhat) / length))) if length > 0 else math.nan
    return p_al, p_anti, angle


def run_interrupted_oscar(
    model: ModelParams,
    seq: PulseSequence | None,
    policy: CollapsePolicy,
    tau_end: float,
    x0: float,
    p0: float = 0.0,
    basis: BasisSpec = BasisSpec(),
    sample_dtau: float = DEFAULT_SAMPLE_DTAU,
    rng: np.random.Generator | None = None,
    noise: NoiseRealization | None = None,
    sense: Sense | str = Sense.ALIGNED,
    reference_shift: float | None = None,
) -> InterruptedResult:
    """OSCAR with periodic rf-off windows locked to the CT motion and optional collapses.

    ``reference_shift`` is the definite-spin shift used as the saturation
    ceiling of the mean-shift estimate; it defaults to the closed-form value.
    The mean shift is averaged over the complete pulse periods of the run.
    """
    sense = Sense(sense)
    rng = rng if rng is not None else np.random.default_rng()
    if reference_shift is None:
        reference_shift = delta_omega0(model)
    if seq is not None and policy.mode is CollapseMode.FIXED_INTERVAL and not seq.period > policy.tau_coll:
        raise ScheduleConflict(f"tau_p = {seq.period} must exceed tau_coll = {policy.tau_coll}")
    eps, eta = model.eps, model.eta
    amplitude = math.hypot(x0, p0)
    ev = Evolver(initial_state(eps, eta, x0, p0, basis, sense), sample_dtau, noise)
    reference_sense = sense
    pending = list(policy.times) if policy.mode is CollapseMode.AT_TIMES else []
    collapses: list[dict] = []
    pulses: list[PulseRecord] = []
    offsets: dict[Sense, float] = {}

    def offset_for(sn: Sense) -> float:
        if seq is None:
            return 0.0
        if sn not in offsets:
            offsets[sn] = calibrate_pulse_offset(model, amplitude, seq.duration, sn)
        return offsets[sn]

    def collapse_now(eps_active: float) -> None:
        nonlocal sense
        out = apply_collapse(ev.state, eps_active, eta, rng, reference_sense)
        sense = out.sense
        record = {"tau": ev.tau, "sense": out.sense.value, "outcome": out.outcome,
                  "p_aligned": out.probabilities[0], "p_anti_aligned": out.probabilities[1]}
        collapses.append(record)
        ev.replace_state(out.state.amplitudes, {"event": "collapse", **record})

    def advance_on(until: float) -> None:
        while pending and pending[0] <= until:
            t = pending.pop(0)
            if t >= ev.tau:
                ev.advance(t, eps, eta)
                collapse_now(eps)
        ev.advance(until, eps, eta)

    def next_pending() -> float:
        return pending[0] if pending else math.inf

    def find_upward_crossing(after: float) -> float | None:
        """First upward crossing of <x> later than ``after``; commits evolution up to ~it."""
        while ev.tau < tau_end:
            horizon = min(ev.tau + 0.75 * math.pi, tau_end, next_pending())
            if horizon <= ev.tau:
                advance_on(next_pending())
                continue
            t_rec, x_rec = ev.recorded_x()
            t_new, x_new = ev.peek(horizon, eps, eta)
            t = np.concatenate([t_rec[-3:], t_new])
            x = np.concatenate([x_rec[-3:], x_new])
            ups = np.flatnonzero((x[:-1] < 0) & (x[1:] >= 0))
            for i in ups:
                if t[i + 1] <= after or len(t) < 4:
                    continue
                c = analysis._refine(t, x, int(i))
                if c > after:
                    return c
            # no crossing yet: commit all but a margin wider than any pulse offset
            if horizon >= min(tau_end, next_pending()):
                advance_on(horizon)
            else:
                advance_on(max(ev.tau, horizon - math.pi / 4))
        return None

    n_pulses = 0
    nominal = seq.first if seq is not None else math.inf
    triggers: list[float] = []
    while seq is not None and (seq.count is None or n_pulses < seq.count) and ev.tau < tau_end:
        advance_on(min(tau_end, max(ev.tau, nominal - math.pi)))
        search_from = max(ev.tau, nominal - math.pi)
        c = find_upward_crossing(search_from)
        if c is None:
            break
        start = c + offset_for(sense)
        if start < ev.tau:
            c = find_upward_crossing(c + 0.5 * math.pi)
            if c is None:
                break
            start = c + offset_for(sense)
        end = start + seq.duration
        if end > tau_end:
            break
        if next_pending() < end and next_pending() >= start:
            raise ScheduleConflict(f"collapse at {next_pending():.6g} falls inside rf-off window ({start:.6g}, {end:.6g})")
        advance_on(start)
        ev.advance(end, 0.0, eta)
        p_al, p_anti, angle = _pulse_angle(ev.state, eps, eta)
        pulses.append(PulseRecord(c, start, end, p_al, p_anti, angle))
        triggers.append(c)
        ev.events.append({"tau": end, "event": "pulse", "start": start, "p_aligned": p_al})
        n_pulses += 1
        if policy.mode is CollapseMode.FIXED_INTERVAL:
            t_coll = end + policy.tau_coll
            if pending:
                raise ScheduleConflict(
                    f"collapse pending at {pending[0]:.6g} when the pulse at {start:.6g} started"
                )
            pending.append(t_coll)
        nominal = nominal + seq.period
        if policy.mode is CollapseMode.FIXED_INTERVAL and pending[0] >= nominal - math.pi:
            raise ScheduleConflict(
                f"collapse at {pending[0]:.6g} would not precede the next pulse near {nominal:.6g}"
            )
    # record the trigger that closes the last complete period
    if seq is not None and pulses and nominal - math.pi < tau_end:
        advance_on(max(ev.tau, nominal - math.pi))
        c = find_upward_crossing(max(ev.tau, nominal - math.pi))
        if c is not None:
            triggers.append(c)
    if tau_end > ev.tau:
        advance_on(tau_end)

    series = ev.series()
    crossings = analysis.find_crossings(series.tau, series.x)
    shifts = analysis.effective_shift_series(crossings)
    window = None
    mean = None
    if len(triggers) >= 2:
        window = (triggers[0], triggers[-1])
        tol = 0.25 * math.pi
        starts, ends = crossings.crossings[:-1], crossings.crossings[1:]
        sel = (starts >= window[0] - tol) & (ends <= window[1] + tol)
        if np.any(sel):
            mean = analysis.saturated_mean_shift(shifts[sel], reference_shift)
    return InterruptedResult(
        series=series,
        crossings=crossings,
        shifts=shifts,
        pulses=pulses,
        collapses=collapses,
        mean_shift=mean,
        window=window,
        reference_shift=reference_shift,
        state=ev.state,
        offsets={k.value: v for k, v in offsets.items()},
    )
