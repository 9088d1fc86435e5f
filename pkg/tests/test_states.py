import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import coherent_amplitudes, ladder_x
from oscar_mrfm.evolve import diagonalize, step
from oscar_mrfm.hilbert import BasisSpec, HamiltonianSpec, annihilation, build_x
from oscar_mrfm.states import (
    EffectiveField,
    JointState,
    Sense,
    SpinVector,
    TruncationError,
    coherent_state,
    expectations,
    initial_state,
    observables,
    product_state,
    reduced_spin_density,
    spin_purity,
    spin_state_along,
)

B400 = BasisSpec(400)


def test_ground_state_for_zero_displacement():
    c = coherent_state(0.0, 0.0, BasisSpec(10))
    np.testing.assert_array_equal(c, np.eye(10)[0])


def test_coherent_state_matches_direct_recurrence():
    c = coherent_state(13.0, 2.0, B400)
    np.testing.assert_allclose(c, coherent_amplitudes(13.0, 2.0, 400), atol=1e-13)


def test_coherent_moments_paper_run():
    s = product_state(coherent_state(13.0, 0.0, B400), np.array([1, 0]), B400)
    x, p, h0, spin = expectations(s)
    assert x == pytest.approx(13.0, abs=1e-8)
    assert p == pytest.approx(0.0, abs=1e-8)
    X = build_x(B400)
    var = (s.amplitudes.conj() @ X @ X @ s.amplitudes).real - x**2
    assert var == pytest.approx(0.5, abs=1e-8)
    n_mean = np.sum(np.arange(400) * np.abs(coherent_state(13.0, 0.0, B400)) ** 2)
    assert n_mean == pytest.approx(84.5, abs=1e-8)
    assert spin.sz == pytest.approx(0.5, abs=1e-12)


def test_coherent_state_is_annihilation_eigenvector():
    x0, p0 = 5.0, -3.0
    c = coherent_state(x0, p0, BasisSpec(120))
    a = annihilation(120)
    alpha = complex(x0, p0) / math.sqrt(2)
    np.testing.assert_allclose((a @ c)[:100], alpha * c[:100], atol=1e-10)


def test_truncation_precondition():
    with pytest.raises(TruncationError, match="n_osc"):
        coherent_state(13.0, 0.0, BasisSpec(100))


def test_spin_along_field_examples():
    np.testing.assert_allclose(spin_state_along(EffectiveField(0.0, 2.0), "aligned"), [1, 0], atol=1e-15)
    np.testing.assert_allclose(
        spin_state_along(EffectiveField(3.0, 0.0), "aligned"), [1 / math.sqrt(2), 1 / math.sqrt(2)], atol=1e-15
    )
    s = product_state(np.eye(4)[0], spin_state_along(EffectiveField.at(10, 0.3, 13), Sense.ANTI_ALIGNED), BasisSpec(4))
    _, _, _, spin = expectations(s)
    # quoted to four decimals
    assert spin.sx == pytest.approx(-0.3943, abs=1e-4)
    assert spin.sz == pytest.approx(-0.3076, abs=1e-4)
    # hand value: -(1/2)(10, 7.8)/|(10, 7.8)|
    norm = math.hypot(10, 7.8)
    assert spin.sx == pytest.approx(-5 / norm, abs=1e-14)
    assert spin.sz == pytest.approx(-3.9 / norm, abs=1e-14)
    with pytest.raises(ValueError):
        spin_state_along(EffectiveField(0.0, 0.0))


@given(bx=st.floats(-50, 50), bz=st.floats(-50, 50))
def test_aligned_and_anti_aligned_are_orthogonal_and_oriented(bx, bz):
    f = EffectiveField(bx, bz)
    if f.magnitude < 1e-6:
        return
    up = spin_state_along(f, Sense.ALIGNED)
    down = spin_state_along(f, Sense.ANTI_ALIGNED)
    assert abs(np.vdot(up, down)) < 1e-14
    b = BasisSpec(2)
    for v, sign in ((up, 1), (down, -1)):
        _, _, _, spin = expectations(product_state(np.eye(2)[0], v, b))
        np.testing.assert_allclose(list(spin), sign * 0.5 * f.unit(), atol=1e-12)


def test_ground_state_expectations_vanish():
    s = product_state(np.eye(8)[0], np.array([0.6, 0.8j]), BasisSpec(8))
    x, p, h0, spin = expectations(s)
    assert x == 0 and p == 0 and h0 == 0.5
    assert spin.magnitude == pytest.approx(0.5, abs=1e-12)


def test_free_quarter_period_rotates_coherent_state():
    b = BasisSpec(200)
    s = product_state(coherent_state(13.0, 0.0, b), np.array([1, 0]), b)
    out = step(s, diagonalize(HamiltonianSpec(0.0, 0.0), b), math.pi / 2)
    x, p, _, _ = expectations(out)
    # alpha(tau) = alpha0 exp(-i tau)  ->  x = 13 cos tau, p = -13 sin tau
    assert x == pytest.approx(0.0, abs=1e-8)
    assert p == pytest.approx(-13.0, abs=1e-8)


def test_purity_of_product_and_bell_states():
    b = BasisSpec(4)
    prod = product_state(np.eye(4)[2], np.array([0.3, 0.4 + 0.2j]), b)
    length, entropy = spin_purity(prod)
    assert length == pytest.approx(0.5, abs=1e-12) and entropy == pytest.approx(0.0, abs=1e-12)
    bell = np.zeros(8, dtype=complex)
    bell[0] = bell[3] = 1 / math.sqrt(2)  # |0>alpha + |1>beta
    s = JointState(bell, b)
    length, entropy = spin_purity(s)
    assert length == pytest.approx(0.0, abs=1e-15)
    assert entropy == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=24, max_size=24))
def test_spin_length_half_iff_pure(values):
    b = BasisSpec(6)
    v = np.array(values[:12]) + 1j * np.array(values[12:])
    if np.linalg.norm(v) < 1e-3:
        return
    s = JointState(v / np.linalg.norm(v), b)
    length, entropy = spin_purity(s)
    assert length <= 0.5 + 1e-10
    # Tr rho^2 = 1/2 + 2 |S|^2 for a qubit
    assert entropy == pytest.approx(0.5 - 2 * length**2, abs=1e-12)
    rho = reduced_spin_density(s)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)


def test_batched_observables_match_single():
    b = BasisSpec(50)
    rng = np.random.default_rng(0)
    psis = rng.normal(size=(100, 3)) + 1j * rng.normal(size=(100, 3))
    psis /= np.linalg.norm(psis, axis=0)
    batch = observables(psis, 50)
    X = np.kron(ladder_x(50), np.eye(2))
    for k in range(3):
        single = observables(psis[:, k], 50)
        assert single["x"] == pytest.approx(batch["x"][k], abs=1e-14)
        assert single["x"] == pytest.approx((psis[:, k].conj() @ X @ psis[:, k]).real, abs=1e-12)


def test_state_csv_and_global_phase(tmp_path):
    b = BasisSpec(4)
    s = initial_state(10, 0.3, 0.5, 0, b)
    rotated = s.with_amplitudes(s.amplitudes * np.exp(0.7j))
    np.testing.assert_allclose(rotated.canonical().amplitudes, s.canonical().amplitudes, atol=1e-15)
    s.to_csv(tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["n", "re_u_alpha", "im_u_alpha", "re_u_beta", "im_u_beta"]
    assert len(rows) == 5
    assert float(rows[1][1]) + 1j * float(rows[1][2]) == pytest.approx(s.canonical().u[0, 0], abs=1e-16)


def test_joint_state_shape_check_and_spin_vector():
    with pytest.raises(ValueError):
        JointState(np.zeros(5), BasisSpec(4))
    v = SpinVector(0.3, 0.0, 0.4)
    assert v.magnitude == pytest.approx(0.5)
    assert v.dot([0, 0, 1]) == 0.4
