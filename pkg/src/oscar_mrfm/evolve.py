"""Exact propagation under piecewise-constant Hamiltonians.

Between noise kicks (and rf switching events) the Hamiltonian is constant,
so the state is propagated exactly through the eigendecomposition of the
real symmetric segment Hamiltonian.  Only a handful of distinct segment
Hamiltonians occur in a run; their decompositions are cached.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .hilbert import BasisSpec, HamiltonianSpec, build_hamiltonian
from .params import ModelParams
from .states import JointState, TruncationError, observables

log = logging.getLogger(__name__)

DEFAULT_SAMPLE_DTAU = math.pi / 200
TRUNCATION_WARN = 1e-8
TRUNCATION_FAIL = 1e-4
NORM_TOL = 1e-10
_CHUNK = 512


class EigensolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpectralPropagator:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source: HamiltonianSpec
    basis: BasisSpec

    def coefficients(self, psi: np.ndarray) -> np.ndarray:
        return self.eigenvectors.T @ psi

    def expand(self, coeffs: np.ndarray) -> np.ndarray:
        """V @ coeffs for complex coeffs, done as a real matrix product."""
        coeffs = np.ascontiguousarray(coeffs, dtype=complex)
        if coeffs.ndim == 1:
            return (self.eigenvectors @ coeffs.view(float).reshape(-1, 2)).reshape(-1).view(complex)
        k = coeffs.shape[1]
        out = self.eigenvectors @ coeffs.view(float)
        return np.ascontiguousarray(out).view(complex).reshape(-1, k)

    def evolve(self, psi: np.ndarray, dtau: float) -> np.ndarray:
        c = self.coefficients(psi)
        return self.expand(np.exp(-1j * self.eigenvalues * dtau) * c)

    def evolve_many(self, psi: np.ndarray, dtaus: np.ndarray) -> np.ndarray:
        """States at each offset in ``dtaus`` as columns of a ``(dim, K)`` array."""
        c = self.coefficients(psi)
        phases = np.exp(-1j * np.outer(self.eigenvalues, np.asarray(dtaus, dtype=float)))
        return self.expand(phases * c[:, None])


@functools.lru_cache(maxsize=16)
def _decompose(h: HamiltonianSpec, b: BasisSpec) -> SpectralPropagator:
    H = build_hamiltonian(h, b)
    try:
        w, V = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(
            f"eigendecomposition failed for {h} at dim={b.dim}: {exc}"
        ) from exc
    residual = np.max(np.abs((V * w) @ V.T - H))
    orth = np.max(np.abs(V.T @ V - np.eye(b.dim)))
    if residual > 1e-9 * max(1.0, np.max(np.abs(w))) or orth > 1e-10:
        raise EigensolverError(
            f"eigendecomposition of {h} inaccurate: residual={residual:.3e}, orthogonality={orth:.3e}"
        )
    w.setflags(write=False)
    V.setflags(write=False)
    return SpectralPropagator(w, V, h, b)


def diagonalize(h: HamiltonianSpec, b: BasisSpec) -> SpectralPropagator:
    """Cached eigendecomposition of the segment Hamiltonian."""
    # -0.0 and 0.0 hash alike, so a zero-amplitude kick shares the noiseless entry
    return _decompose(HamiltonianSpec(float(h.eps_active), float(h.eta), float(h.delta)), b)


def step(s: JointState, prop: SpectralPropagator, dtau: float) -> JointState:
    if prop.basis != s.basis:
        raise ValueError(f"propagator basis {prop.basis} does not match state basis {s.basis}")
    if dtau < 0:
        raise ValueError("step only runs forward; use SpectralPropagator.evolve for negative times")
    return s.with_amplitudes(prop.evolve(s.amplitudes, dtau), tau=s.tau + dtau)


@dataclass(frozen=True)
class NoiseRealization:
    """Two-valued kick noise: value ``signs[i] * delta0`` from ``kick_times[i]`` on."""

    seed: int | None
    delta0: float
    kick_times: np.ndarray
    signs: np.ndarray

    def value_at(self, tau: float) -> float:
        i = int(np.searchsorted(self.kick_times, tau, side="right")) - 1
        return float(self.signs[max(i, 0)] * self.delta0)

    def pieces(self, start: float, end: float) -> Iterator[tuple[float, float, float]]:
        """Constant-noise sub-intervals covering ``[start, end]``."""
        inner = self.kick_times[(self.kick_times > start) & (self.kick_times < end)]
        edges = [start, *inner.tolist(), end]
        for a, b in zip(edges[:-1], edges[1:]):
            yield a, b, self.value_at(0.5 * (a + b))


def sample_noise(
    seed: int | None, delta0: float, tau_R: float, tau_end: float,
    rng: np.random.Generator | None = None,
) -> NoiseRealization:
    """Kick times with intervals uniform on (-3 tau_R/4, 5 tau_R/4), non-positive draws redrawn."""
    if delta0 < 0:
        raise ValueError("delta0 must be non-negative")
    if tau_end <= 0:
        raise ValueError("tau_end must be positive")
    if rng is None:
        rng = np.random.default_rng(seed)
    times = [0.0]
    while times[-1] <= tau_end:
        interval = 0.0
        while interval <= 0.0:
            interval = rng.uniform(-0.75 * tau_R, 1.25 * tau_R)
        times.append(times[-1] + interval)
    signs = np.where(np.arange(len(times)) % 2 == 0, 1, -1)
    return NoiseRealization(seed, float(delta0), np.array(times), signs)


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    spec: HamiltonianSpec


@dataclass(frozen=True)
class Schedule:
    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("schedule is empty")
        if self.segments[0].start != 0.0:
            raise ValueError("schedule must start at tau = 0")
        for a, b in zip(self.segments[:-1], self.segments[1:]):
            if a.end != b.start:
                raise ValueError(f"segments not contiguous at {a.end} / {b.start}")
        for s in self.segments:
            if not s.end > s.start:
                raise ValueError(f"empty or reversed segment {s}")

    @property
    def tau_end(self) -> float:
        return self.segments[-1].end

    def digest(self) -> str:
        h = hashlib.sha256()
        for s in self.segments:
            h.update(
                f"{s.start:.17g},{s.end:.17g},{s.spec.eps_active:.17g},"
                f"{s.spec.eta:.17g},{s.spec.delta:.17g};".encode()
            )
        return h.hexdigest()


def build_schedule(
    model: ModelParams,
    tau_end: float,
    noise: NoiseRealization | None = None,
    rf_off: Sequence[tuple[float, float]] = (),
) -> Schedule:
    """Merge noise kicks and rf-off windows into contiguous constant segments."""
    edges = {0.0, float(tau_end)}
    if noise is not None:
        edges.update(t for t in noise.kick_times.tolist() if 0.0 < t < tau_end)
    for a, b in rf_off:
        if not b > a:
            raise ValueError(f"rf-off window ({a}, {b}) is empty")
        edges.update(t for t in (a, b) if 0.0 < t < tau_end)
    edges = sorted(edges)
    segments: list[Segment] = []
    for a, b in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (a + b)
        rf_on = not any(lo <= mid < hi for lo, hi in rf_off)
        delta = noise.value_at(mid) if noise is not None else 0.0
        spec = HamiltonianSpec(model.eps if rf_on else 0.0, model.eta, delta + 0.0)
        if segments and segments[-1].spec == spec:
            segments[-1] = Segment(segments[-1].start, b, spec)
        else:
            segments.append(Segment(a, b, spec))
    return Schedule(tuple(segments))


_COLUMNS = ("tau", "x", "p", "sx", "sy", "sz", "spin_length", "norm_error", "top_band_population")


@dataclass
class TimeSeries:
    tau: np.ndarray
    x: np.ndarray
    p: np.ndarray
    h0: np.ndarray
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    norm_error: np.ndarray
    top_band_population: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def spin_length(self) -> np.ndarray:
        return np.sqrt(self.sx**2 + self.sy**2 + self.sz**2)

    def __len__(self) -> int:
        return len(self.tau)

    def to_csv(self, path: str | Path) -> None:
        cols = [getattr(self, c) for c in _COLUMNS]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_COLUMNS)
            for row in zip(*cols):
                w.writerow([f"{v:.17g}" for v in row])


class Evolver:
    """Propagates a state forward while recording observables on a uniform grid.

    Grid points are ``k * sample_dtau``; each is recorded once, from whichever
    segment contains it.
    """

    def __init__(self, state: JointState, sample_dtau: float = DEFAULT_SAMPLE_DTAU,
                 noise: NoiseRealization | None = None):
        if not sample_dtau > 0:
            raise ValueError("sample_dtau must be positive")
        self.state = state
        self.dt = float(sample_dtau)
        self.noise = noise
        self._chunks: list[dict[str, np.ndarray]] = []
        self._taus: list[np.ndarray] = []
        self._last_k = math.ceil(state.tau / self.dt - 1e-9) - 1
        self.max_norm_error = abs(state.norm - 1.0)
        self.max_top = 0.0
        self.truncation_warned = False
        self.segments = 0
        self.events: list[dict] = []
        self._record(np.array([state.tau]), state.amplitudes[:, None], on_grid=True)

    @property
    def basis(self) -> BasisSpec:
        return self.state.basis

    @property
    def tau(self) -> float:
        return self.state.tau

    def _grid(self, until: float) -> np.ndarray:
        k_hi = math.floor(until / self.dt + 1e-9)
        ks = np.arange(self._last_k + 1, k_hi + 1)
        return ks * self.dt

    def _record(self, taus: np.ndarray, psis: np.ndarray, on_grid: bool) -> None:
        if on_grid and abs(taus[0] / self.dt - round(taus[0] / self.dt)) > 1e-9:
            return
        obs = observables(psis, self.basis.n_osc)
        self._taus.append(taus)
        self._chunks.append(obs)
        self._last_k = int(round(taus[-1] / self.dt))
        self._check_health(obs)

    def _check_health(self, obs: dict[str, np.ndarray]) -> None:
        top = float(np.max(obs["top"]))
        self.max_top = max(self.max_top, top)
        self.max_norm_error = max(self.max_norm_error, float(np.max(np.abs(obs["norm"] - 1.0))))
        if top > TRUNCATION_FAIL:
            raise TruncationError(
                f"population {top:.3e} in the top 5% of oscillator levels exceeds "
                f"{TRUNCATION_FAIL:g}; increase n_osc"
            )
        if top > TRUNCATION_WARN and not self.truncation_warned:
            self.truncation_warned = True
            log.warning("truncation guard: top-band population %.3e at tau=%.4f", top, self.tau)

    def _sample_segment(self, prop: SpectralPropagator, until: float) -> None:
        taus = self._grid(until)
        if len(taus) == 0:
            return
        c = prop.coefficients(self.state.amplitudes)
        for i in range(0, len(taus), _CHUNK):
            t = taus[i:i + _CHUNK]
            phases = np.exp(-1j * np.outer(prop.eigenvalues, t - self.state.tau))
            psis = prop.expand(phases * c[:, None])
            obs = observables(psis, self.basis.n_osc)
            self._taus.append(t)
            self._chunks.append(obs)
            self._check_health(obs)
        self._last_k = int(round(taus[-1] / self.dt))

    def advance_segment(self, spec: HamiltonianSpec, until: float) -> None:
        """Evolve under a fixed Hamiltonian to ``until``, sampling on the way."""
        if until < self.tau:
            raise ValueError(f"cannot advance backwards from {self.tau} to {until}")
        if until == self.tau:
            return
        prop = diagonalize(spec, self.basis)
        self._sample_segment(prop, until)
        self.state = step(self.state, prop, until - self.tau)
        self.segments += 1
        err = abs(self.state.norm - 1.0)
        self.max_norm_error = max(self.max_norm_error, err)

    def advance(self, until: float, eps_active: float, eta: float) -> None:
        """Evolve to ``until`` with the rf amplitude ``eps_active``, splitting at noise kicks."""
        pieces = self.noise.pieces(self.tau, until) if self.noise is not None else [(self.tau, until, 0.0)]
        for _, b, delta in pieces:
            self.advance_segment(HamiltonianSpec(eps_active, eta, delta + 0.0), b)

    def peek(self, until: float, eps_active: float, eta: float) -> tuple[np.ndarray, np.ndarray]:
        """Grid samples of <x> up to ``until`` without committing the evolution."""
        saved = (self.state, self._last_k, len(self._taus), self.segments,
                 self.max_norm_error, self.max_top, self.truncation_warned)
        try:
            self.advance(until, eps_active, eta)
            taus = np.concatenate(self._taus[saved[2]:]) if len(self._taus) > saved[2] else np.empty(0)
            xs = (np.concatenate([c["x"] for c in self._chunks[saved[2]:]])
                  if len(self._chunks) > saved[2] else np.empty(0))
        finally:
            (self.state, self._last_k, n, self.segments,
             self.max_norm_error, self.max_top, self.truncation_warned) = saved
            del self._taus[n:]
            del self._chunks[n:]
        return taus, xs

    def replace_state(self, amplitudes: np.ndarray, event: dict | None = None) -> None:
        self.state = self.state.with_amplitudes(amplitudes)
        if event is not None:
            self.events.append({"tau": self.tau, **event})

    def recorded_x(self) -> tuple[np.ndarray, np.ndarray]:
        return np.concatenate(self._taus), np.concatenate([c["x"] for c in self._chunks])

    def series(self) -> TimeSeries:
        cat = {k: np.concatenate([c[k] for c in self._chunks]) for k in self._chunks[0]}
        return TimeSeries(
            tau=np.concatenate(self._taus),
            x=cat["x"], p=cat["p"], h0=cat["h0"],
            sx=cat["sx"], sy=cat["sy"], sz=cat["sz"],
            norm_error=np.abs(cat["norm"] - 1.0),
            top_band_population=cat["top"],
            diagnostics={
                "max_norm_error": self.max_norm_error,
                "max_top_band_population": self.max_top,
                "truncation_warning": self.truncation_warned,
                "segments": self.segments,
                "events": list(self.events),
            },
        )


def run(s0: JointState, schedule: Schedule, sample_dtau: float = DEFAULT_SAMPLE_DTAU) -> tuple[TimeSeries, JointState]:
    """Propagate ``s0`` through ``schedule``; returns the sampled series and final state."""
    ev = Evolver(s0, sample_dtau)
    for seg in schedule.segments:
        if seg.end <= ev.tau:
            continue
        ev.advance_segment(seg.spec, seg.end)
        if abs(ev.state.norm - 1.0) > NORM_TOL:
            log.warning("norm error %.3e after segment ending at %.6f", abs(ev.state.norm - 1.0), seg.end)
    series = ev.series()
    series.diagnostics["schedule_digest"] = schedule.digest()
    return series, ev.state
