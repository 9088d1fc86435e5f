import csv
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import jacobi_eigh, naive_hamiltonian, rejection_interval_mean, taylor_expm
from oscar_mrfm.evolve import (
    Evolver,
    Schedule,
    Segment,
    build_schedule,
    diagonalize,
    run,
    sample_noise,
    step,
)
from oscar_mrfm.hilbert import BasisSpec, HamiltonianSpec, build_hamiltonian
from oscar_mrfm.params import SIMULATION, ModelParams
from oscar_mrfm.states import JointState, TruncationError, coherent_state, initial_state, product_state

B8 = BasisSpec(8)


def random_state(b, rng):
    v = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
    return JointState(v / np.linalg.norm(v), b)


def test_unperturbed_and_decoupled_spectra():
    b = BasisSpec(20)
    w = diagonalize(HamiltonianSpec(0.0, 0.0), b).eigenvalues
    np.testing.assert_allclose(w, np.repeat(np.arange(20) + 0.5, 2), atol=1e-12)
    w = diagonalize(HamiltonianSpec(10.0, 0.0), b).eigenvalues
    expected = np.sort(np.concatenate([np.arange(20) + 0.5 - 5, np.arange(20) + 0.5 + 5]))
    np.testing.assert_allclose(w, expected, atol=1e-12)


def test_spectrum_matches_jacobi_on_naive_matrix():
    w_ref, _ = jacobi_eigh(naive_hamiltonian(6, 10.0, 0.3))
    np.testing.assert_allclose(diagonalize(HamiltonianSpec(10.0, 0.3), BasisSpec(6)).eigenvalues, w_ref, atol=1e-10)


def test_propagator_invariants_full_basis():
    b = BasisSpec(400)
    prop = diagonalize(HamiltonianSpec(10.0, 0.3, 0.5), b)
    H = build_hamiltonian(prop.source, b)
    V, w = prop.eigenvectors, prop.eigenvalues
    assert np.max(np.abs((V * w) @ V.T - H)) <= 1e-9
    assert np.max(np.abs(V.T @ V - np.eye(b.dim))) <= 1e-10
    assert diagonalize(HamiltonianSpec(10.0, 0.3, 0.5), b) is prop  # cached


def test_zero_step_is_identity_and_basis_mismatch():
    s = random_state(B8, np.random.default_rng(1))
    prop = diagonalize(HamiltonianSpec(10.0, 0.3), B8)
    np.testing.assert_allclose(step(s, prop, 0.0).amplitudes, s.amplitudes, atol=1e-14)
    with pytest.raises(ValueError, match="basis"):
        step(s, diagonalize(HamiltonianSpec(10.0, 0.3), BasisSpec(9)), 1.0)
    with pytest.raises(ValueError):
        step(s, prop, -1.0)


def test_free_oscillator_period():
    b = BasisSpec(400)
    s = product_state(coherent_state(13.0, 0.0, b), np.array([1.0, 0.0]), b)
    out = step(s, diagonalize(HamiltonianSpec(0.0, 0.0), b), 2 * math.pi)
    assert abs(np.vdot(s.amplitudes, out.amplitudes)) == pytest.approx(1.0, abs=1e-8)
    assert out.tau == pytest.approx(2 * math.pi)


def test_step_matches_taylor_exponential():
    rng = np.random.default_rng(7)
    for _ in range(10):
        h = HamiltonianSpec(rng.uniform(0, 12), rng.uniform(0, 0.5), rng.choice([-0.5, 0.0, 0.5]))
        dtau = rng.uniform(0, 3)
        s = random_state(B8, rng)
        U = taylor_expm(-1j * naive_hamiltonian(8, h.eps_active, h.eta, h.delta) * dtau)
        np.testing.assert_allclose(step(s, diagonalize(h, B8), dtau).amplitudes, U @ s.amplitudes, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0, 5), b=st.floats(0, 5), seed=st.integers(0, 1000))
def test_composition_and_time_reversal(a, b, seed):
    rng = np.random.default_rng(seed)
    s = random_state(B8, rng)
    prop = diagonalize(HamiltonianSpec(10.0, 0.3, 0.2), B8)
    two = step(step(s, prop, a), prop, b)
    one = step(s, prop, a + b)
    np.testing.assert_allclose(two.amplitudes, one.amplitudes, atol=1e-10)
    back = prop.evolve(prop.evolve(s.amplitudes, a), -a)
    assert 1 - abs(np.vdot(s.amplitudes, back)) ** 2 <= 1e-9
    assert abs(np.linalg.norm(one.amplitudes) - 1) <= 1e-10


def test_energy_constant_within_segment():
    b = BasisSpec(200)
    s = initial_state(10.0, 0.3, 13.0, 0.0, b)
    prop = diagonalize(HamiltonianSpec(10.0, 0.3, 0.4), b)
    H = build_hamiltonian(prop.source, b)
    psis = prop.evolve_many(s.amplitudes, np.linspace(0, 2 * math.pi, 25))
    energies = np.einsum("ik,ij,jk->k", psis.conj(), H, psis).real
    assert np.ptp(energies) <= 1e-9


def test_noise_sampler_contract():
    tau_R = SIMULATION.tau_R
    a = sample_noise(5, 0.3, tau_R, 100.0)
    b = sample_noise(5, 0.3, tau_R, 100.0)
    np.testing.assert_array_equal(a.kick_times, b.kick_times)
    assert a.kick_times[0] == 0.0 and a.kick_times[-1] > 100.0
    assert np.all(np.diff(a.kick_times) > 0)
    assert np.all(np.diff(a.kick_times) < 1.25 * tau_R)
    np.testing.assert_array_equal(a.signs[:4], [1, -1, 1, -1])
    assert np.all(a.signs[1:] == -a.signs[:-1])
    assert a.value_at(0.0) == 0.3 and a.value_at(0.5 * (a.kick_times[1] + a.kick_times[2])) == -0.3
    with pytest.raises(ValueError):
        sample_noise(1, -0.1, tau_R, 10.0)
    with pytest.raises(ValueError):
        sample_noise(1, 0.1, tau_R, 0.0)


def test_noise_interval_mean_against_monte_carlo():
    tau_R = 1.0
    realization = sample_noise(11, 1.0, tau_R, 2.0e5)
    intervals = np.diff(realization.kick_times)
    # independent 1e6-draw Monte Carlo of the same rejection rule
    draws = np.random.default_rng(99).uniform(-0.75, 1.25, size=1_000_000)
    mc_mean = draws[draws > 0].mean()
    sem = intervals.std() / math.sqrt(len(intervals))
    assert abs(intervals.mean() - mc_mean) < 4 * sem + 4 * draws[draws > 0].std() / math.sqrt((draws > 0).sum())
    assert intervals.mean() == pytest.approx(rejection_interval_mean(tau_R), abs=4 * sem)


def test_schedule_merges_kicks_and_windows():
    noise = sample_noise(3, 0.5, SIMULATION.tau_R, 10.0)
    sched = build_schedule(SIMULATION, 10.0, noise, rf_off=[(2.0, 3.5)])
    segs = sched.segments
    assert segs[0].start == 0.0 and segs[-1].end == 10.0
    for x, y in zip(segs[:-1], segs[1:]):
        assert x.end == y.start and x.spec != y.spec
    off = [s for s in segs if s.spec.eps_active == 0.0]
    assert off[0].start == 2.0 and off[-1].end == 3.5
    assert sched.digest() == build_schedule(SIMULATION, 10.0, noise, rf_off=[(2.0, 3.5)]).digest()
    quiet = build_schedule(SIMULATION, 10.0, sample_noise(3, 0.0, SIMULATION.tau_R, 10.0))
    assert len(quiet.segments) == 1 and quiet.segments[0].spec.delta == 0.0
    with pytest.raises(ValueError):
        Schedule((Segment(0.0, 1.0, HamiltonianSpec(1, 0)), Segment(1.5, 2.0, HamiltonianSpec(1, 0))))
    with pytest.raises(ValueError):
        Schedule((Segment(0.5, 1.0, HamiltonianSpec(1, 0)),))


def test_zero_amplitude_noise_equals_noiseless_run():
    b = BasisSpec(200)
    s0 = initial_state(10, 0.3, 13, 0, b)
    a, _ = run(s0, build_schedule(SIMULATION, 7.0))
    z, _ = run(s0, build_schedule(SIMULATION, 7.0, sample_noise(2, 0.0, SIMULATION.tau_R, 7.0)))
    np.testing.assert_array_equal(a.x, z.x)


def test_decoupled_closed_forms():
    b = BasisSpec(400)
    m = ModelParams(eps=10.0, eta=0.0, x_m=13.0)
    s0 = product_state(coherent_state(13.0, 0.0, b), np.array([1.0, 0.0]), b)
    series, _ = run(s0, build_schedule(m, 4 * math.pi))
    np.testing.assert_allclose(series.x, 13 * np.cos(series.tau), atol=1e-8)
    # spin starts along +z and precesses about x: S_z = cos(eps t)/2, S_y = -sin(eps t)/2
    np.testing.assert_allclose(series.sz, 0.5 * np.cos(10 * series.tau), atol=1e-10)
    np.testing.assert_allclose(series.sy, -0.5 * np.sin(10 * series.tau), atol=1e-10)


def test_sampling_grid_and_norm_diagnostics():
    b = BasisSpec(200)
    noise = sample_noise(4, 0.5, SIMULATION.tau_R, 2 * math.pi)
    series, final = run(initial_state(10, 0.3, 13, 0, b), build_schedule(SIMULATION, 2 * math.pi, noise))
    dt = math.pi / 200
    np.testing.assert_allclose(np.diff(series.tau), dt, atol=1e-12)
    assert len(series) == 401
    assert series.diagnostics["max_norm_error"] <= 1e-10
    assert np.max(series.norm_error) <= 1e-10
    assert final.tau == pytest.approx(2 * math.pi)
    assert len(series.diagnostics["schedule_digest"]) == 64


def test_truncation_guard_warns_then_fails(caplog):
    b = BasisSpec(40)
    amps = np.zeros(b.dim, dtype=complex)
    amps[0] = math.sqrt(1 - 1e-6)
    amps[2 * 39] = 1e-3  # population 1e-6 in the top band
    with caplog.at_level(logging.WARNING):
        Evolver(JointState(amps, b))
    assert any("truncation" in r.message for r in caplog.records)
    amps[0], amps[2 * 39] = math.sqrt(1 - 1e-3), math.sqrt(1e-3)
    with pytest.raises(TruncationError):
        Evolver(JointState(amps, b))


def test_peek_does_not_commit():
    b = BasisSpec(200)
    ev = Evolver(initial_state(10, 0.3, 13, 0, b))
    t, x = ev.peek(1.0, 10.0, 0.3)
    assert ev.tau == 0.0 and len(ev.recorded_x()[0]) == 1
    ev.advance(1.0, 10.0, 0.3)
    np.testing.assert_array_equal(ev.recorded_x()[1][1:], x)


def test_time_series_csv(tmp_path):
    b = BasisSpec(200)
    series, _ = run(initial_state(10, 0.3, 13, 0, b), build_schedule(SIMULATION, 0.1))
    series.to_csv(tmp_path / "ts.csv")
    rows = list(csv.reader(open(tmp_path / "ts.csv")))
    assert rows[0] == ["tau", "x", "p", "sx", "sy", "sz", "spin_length", "norm_error", "top_band_population"]
    assert float(rows[1][1]) == series.x[0]  # 17 significant digits round-trip exactly
