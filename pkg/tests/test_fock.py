import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binom, poisson

from homodyne_ch.fock import (DEFAULT_POLICY, FockVector, LossChannel, TruncationError,
                              TruncationPolicy, apply_beamsplitter, apply_loss, build_input,
                              coherent_state, detection_prob, loss_matrix, oracle_distribution,
                              oracle_event_prob, station_state, station_state_dense, tensor)
from homodyne_ch.model import InputSpec, SINGLE_D, Setting

alphas = st.floats(0.0, 2.0)
phases = st.floats(0.0, 2 * math.pi)
reflect = st.floats(0.0, 1.0)


def test_coherent_state_is_poissonian():
    alpha = 1.3
    state = coherent_state(alpha, 0.4)
    n = np.arange(state.cutoff + 1)
    assert np.allclose(state.probabilities(), poisson.pmf(n, alpha ** 2), atol=1e-15)
    assert 1.0 - state.norm2() < DEFAULT_POLICY.tail_tol


def test_coherent_state_phase():
    state = coherent_state(0.8, math.pi / 3)
    ratio = state.amplitudes[1] / state.amplitudes[0]
    assert ratio == pytest.approx(0.8 * np.exp(1j * math.pi / 3))


def test_cutoff_grows_with_intensity_and_caps():
    policy = TruncationPolicy()
    cuts = [policy.cutoff_for(a) for a in (0.0, 1.0, 2.0, 3.0)]
    assert cuts == sorted(cuts)
    assert cuts[0] == policy.floor
    for a, c in zip((1.0, 2.0, 3.0), cuts[1:]):
        assert poisson.sf(c, a * a) < policy.tail_tol / policy.mode_count
    with pytest.raises(TruncationError):
        policy.cutoff_for(7.0)


def test_fock_vector_rejects_ragged_shapes():
    with pytest.raises(ValueError):
        FockVector(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        FockVector(np.zeros((3, 3))).padded(1)


def test_tensor_pads_to_common_cutoff():
    a = coherent_state(0.5, cutoff=5)
    b = coherent_state(0.2, cutoff=8)
    t = tensor(a, b)
    assert t.amplitudes.shape == (9, 9)
    assert t.norm2() == pytest.approx(a.norm2() * b.norm2())


def test_beamsplitter_hong_ou_mandel():
    # |1,1> through a balanced beamsplitter never leaves one photon per port
    amps = np.zeros((4, 4), dtype=complex)
    amps[1, 1] = 1.0
    out = apply_beamsplitter(FockVector(amps), (0, 1), math.pi / 4)
    assert detection_prob(out, (1, 1)) < 1e-28
    assert detection_prob(out, (2, 0)) == pytest.approx(0.5)
    assert detection_prob(out, (0, 2)) == pytest.approx(0.5)


def test_beamsplitter_single_photon_convention():
    # a photon in b leaves through c with amplitude i sin(chi), through d with cos(chi)
    chi = 0.3
    amps = np.zeros((3, 3), dtype=complex)
    amps[0, 1] = 1.0
    out = apply_beamsplitter(FockVector(amps), (0, 1), chi).amplitudes
    assert out[1, 0] == pytest.approx(1j * math.sin(chi))
    assert out[0, 1] == pytest.approx(math.cos(chi))


def test_beamsplitter_inverse():
    state = tensor(coherent_state(0.7, 0.2, cutoff=10), coherent_state(0.4, 1.1, cutoff=10))
    there = apply_beamsplitter(state, (0, 1), 0.9)
    back = apply_beamsplitter(there, (0, 1), -0.9)
    # photon number is conserved, so sectors below the cutoff come back exactly
    k = np.add.outer(np.arange(11), np.arange(11))
    assert np.allclose(back.amplitudes[k <= 10], state.amplitudes[k <= 10], atol=1e-14)


def test_beamsplitter_bad_modes():
    state = coherent_state(0.1, cutoff=3)
    with pytest.raises(ValueError):
        apply_beamsplitter(tensor(state, state), (0, 0), 0.1)
    with pytest.raises(ValueError):
        apply_beamsplitter(tensor(state, state), (0, 2), 0.1)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(0, 6), m=st.integers(0, 6), chi=st.floats(-3.2, 3.2))
def test_beamsplitter_conserves_photon_number(n, m, chi):
    amps = np.zeros((13, 13), dtype=complex)
    amps[n, m] = 1.0
    out = apply_beamsplitter(FockVector(amps), (0, 1), chi)
    probs = out.probabilities()
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    k = np.add.outer(np.arange(13), np.arange(13))
    assert probs[k != n + m].sum() < 1e-24


def test_loss_matrix_is_binomial():
    eta, cutoff = 0.73, 15
    mat = loss_matrix(eta, cutoff)
    k = np.arange(cutoff + 1)
    expected = np.array([binom.pmf(k, n, eta) for n in range(cutoff + 1)]).T
    assert np.allclose(mat, expected, atol=1e-14)


def test_loss_on_coherent_state_rescales_intensity():
    alpha, eta = 1.1, 0.6
    state = coherent_state(alpha, 0.0)
    after = apply_loss(state, 0, LossChannel(eta))
    n = np.arange(after.shape[0])
    assert np.allclose(after, poisson.pmf(n, eta * alpha ** 2), atol=1e-13)


def test_loss_channel_validation():
    with pytest.raises(ValueError):
        LossChannel(1.5)
    with pytest.raises(ValueError):
        apply_loss(np.ones((2, 2)), 3, LossChannel(0.5))


def test_build_input_amplitudes():
    psi = build_input(InputSpec.vac1photon(0.3), cutoff=2).amplitudes
    assert psi[0, 0] == pytest.approx(math.sqrt(0.7))
    assert psi[0, 1] == pytest.approx(math.sqrt(0.15))
    assert psi[1, 0] == pytest.approx(math.sqrt(0.15))
    pair = build_input(InputSpec.photonpair(0.3), cutoff=2).amplitudes
    assert pair[1, 1] == pytest.approx(math.sqrt(0.3))
    assert pair[0, 1] == 0


@settings(max_examples=25, deadline=None)
@given(p=st.floats(0, 1), a1=alphas, a2=alphas, f1=phases, f2=phases, r1=reflect, r2=reflect,
       family=st.sampled_from(["vac1photon", "photonpair", "unbalanced"]))
def test_product_route_matches_dense_evolution(p, a1, a2, f1, f2, r1, r2, family):
    spec = InputSpec(family, p, 0.4)
    s1, s2 = Setting(a1, f1, r1), Setting(a2, f2, r2)
    fast = station_state(spec, s1, s2)
    dense = station_state_dense(spec, s1, s2)
    assert np.allclose(fast.amplitudes, dense.amplitudes, atol=1e-13)
    assert fast.norm2() == pytest.approx(1.0, abs=1e-11)


def test_refining_the_cutoff_does_not_move_probabilities():
    spec = InputSpec.vac1photon(0.6)
    s1, s2 = Setting(1.2, 0.3, 0.4), Setting(0.9, 2.0, 0.7)
    coarse = oracle_distribution(spec, s1, s2)
    fine = oracle_distribution(spec, s1, s2, policy=TruncationPolicy(tail_tol=1e-15, floor=30))
    k = coarse.shape[0]
    assert np.max(np.abs(fine[:k, :k, :k, :k] - coarse)) < 1e-12


def test_oracle_marginals_and_normalisation():
    spec = InputSpec.vac1photon(0.45)
    s1, s2 = Setting(0.8, 1.0, 0.3), Setting(0.5, 2.5, 0.6)
    P = oracle_distribution(spec, s1, s2, eta=0.8)
    assert P.sum() == pytest.approx(1.0, abs=1e-11)
    assert np.all(P >= -1e-15)
    # station 1 marginal does not depend on station 2's setting (no signalling)
    Q = oracle_distribution(spec, s1, Setting(1.4, 0.2, 0.9), eta=0.8)
    a, b = P.sum(axis=(2, 3)), Q.sum(axis=(2, 3))
    k = min(a.shape[0], b.shape[0])
    assert np.allclose(a[:k, :k], b[:k, :k], atol=1e-12)


def test_oracle_event_prob_marginalises():
    spec = InputSpec.vac1photon(0.5)
    s = Setting(0.6, 1.0, 0.4)
    joint = oracle_event_prob(spec, s, s, SINGLE_D, SINGLE_D)
    local = oracle_event_prob(spec, s, s, SINGLE_D, None)
    assert 0 < joint < local < 1
