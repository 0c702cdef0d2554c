import math

import numpy as np
import pytest

from oracles import dense_expectation
from otevs.measurement import (
    MeasurementBudget,
    Scheme,
    ShadowSnapshot,
    conventional_estimate,
    conventional_estimate_all,
    default_groups,
    median_of_means,
    sample_shadow,
    sample_shadows,
    shadow_estimate_all,
    shots_required,
    snapshot_estimate,
    snapshot_estimates,
    split_evenly,
)
from otevs.pauli import PauliString, enumerate_klocal, expectations
from otevs.quantum_sim import StateVector


def random_state(n, rng):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return StateVector(n, v / np.linalg.norm(v))


def test_shots_required_spot_values():
    assert shots_required("shadows", 0.5, 0.1, 1, 25, 1, 1.0) == 5072
    assert shots_required("conventional", 0.5, 0.1, 1, 25, 1, 1.0) == 1250


def test_shots_required_scaling():
    conv1 = shots_required("conventional", 0.2, 0.1, 4, 100, 1, 1.0)
    conv2 = shots_required("conventional", 0.2, 0.1, 4, 200, 1, 1.0)
    assert 1.9 < conv2 / conv1 < 2.3
    sh1 = shots_required("shadows", 0.2, 0.1, 4, 100, 1, 1.0)
    sh2 = shots_required("shadows", 0.2, 0.1, 4, 200, 1, 1.0)
    assert sh2 / sh1 < 1.15


def test_shots_required_rejects_bad_accuracy():
    with pytest.raises(ValueError):
        shots_required("shadows", 0.0, 0.1, 1, 25, 1, 1.0)
    with pytest.raises(ValueError):
        shots_required("conventional", 0.5, 1.5, 1, 25, 1, 1.0)
    with pytest.raises(ValueError):
        shots_required("exact", 0.5, 0.1, 1, 25, 1, 1.0)


def test_budget_validation():
    with pytest.raises(ValueError):
        MeasurementBudget("shadows", 0)
    assert MeasurementBudget("exact").is_exact
    assert MeasurementBudget("shadows", 10).resolved_groups(13) == 10


def test_median_of_means_examples():
    assert median_of_means([0, 0, 0, 100, 0, 0], 3) == 0
    assert median_of_means([1, 2, 3, 4], 1) == pytest.approx(2.5)
    assert median_of_means([7.0] * 9, 4) == 7.0
    with pytest.raises(ValueError):
        median_of_means([1, 2], 3)


def test_default_groups():
    assert default_groups(13) == math.ceil(2 * math.log(2 * 13 / 0.05))


def test_split_evenly():
    np.testing.assert_array_equal(split_evenly(10, 4), [3, 3, 2, 2])


def test_conventional_degenerate_cases():
    rng = np.random.default_rng(0)
    zero = StateVector.zero(2)
    assert conventional_estimate(zero, PauliString("ZI"), 5, rng) == 1.0
    assert conventional_estimate(zero, PauliString("II"), 5, rng) == 1.0
    plus = StateVector(1, np.array([1, 1]) / np.sqrt(2))
    hits = [abs(conventional_estimate(plus, PauliString("Z"), 10**5, rng)) <= 0.02 for _ in range(200)]
    assert np.mean(hits) >= 0.99


def test_snapshot_closed_form():
    snap = ShadowSnapshot([1, 3], [1, -1])
    assert snapshot_estimate(snap, PauliString("II")) == 1
    assert snapshot_estimate(snap, PauliString("XI")) == 3
    assert snapshot_estimate(snap, PauliString("XZ")) == -9
    assert snapshot_estimate(snap, PauliString("XY")) == 0


def test_eigenstate_snapshots():
    rng = np.random.default_rng(1)
    zero = StateVector.zero(3)
    for _ in range(50):
        snap = sample_shadow(zero, rng)
        assert all(o == 1 for b, o in zip(snap.bases, snap.outcomes) if b == 3)
    plus = StateVector(1, np.array([1, 1]) / np.sqrt(2))
    bases, outcomes = sample_shadows(plus, 3000, rng)
    assert np.all(outcomes[bases[:, 0] == 1] == 1)


def test_basis_marginals_uniform():
    rng = np.random.default_rng(2)
    bases, _ = sample_shadows(random_state(3, rng), 10**4, rng)
    for q in range(3):
        freq = np.bincount(bases[:, q], minlength=4)[1:] / 10**4
        assert np.all(np.abs(freq - 1 / 3) < 0.02)


def test_bulk_and_sequential_sampling_agree_in_law():
    rng = np.random.default_rng(3)
    state = random_state(2, rng)
    basis = enumerate_klocal(2, 2)
    count = 20000
    seq = [sample_shadow(state, rng) for _ in range(count)]
    seq_est = snapshot_estimates(np.stack([s.bases for s in seq]), np.stack([s.outcomes for s in seq]), basis)
    bulk_est = snapshot_estimates(*sample_shadows(state, count, rng), basis)
    se = np.sqrt(seq_est.var(axis=0) / count + bulk_est.var(axis=0) / count) + 1e-12
    assert np.all(np.abs(seq_est.mean(axis=0) - bulk_est.mean(axis=0)) <= 5 * se)


def test_shadow_estimates_unbiased():
    rng = np.random.default_rng(4)
    state = random_state(4, rng)
    basis = enumerate_klocal(4, 1)
    exact = np.array([dense_expectation(state.amplitudes, s.letters) for s in basis.strings])
    budget = MeasurementBudget(Scheme.SHADOWS, 500, groups=1)
    runs = np.stack([shadow_estimate_all(state, basis, budget, rng) for _ in range(200)])
    assert np.all(runs[:, 0] == 1.0)
    se = runs.std(axis=0, ddof=1) / np.sqrt(200) + 1e-12
    assert np.all(np.abs(runs.mean(axis=0) - exact) <= 4 * se)


def test_conventional_estimates_unbiased():
    rng = np.random.default_rng(5)
    state = random_state(4, rng)
    basis = enumerate_klocal(4, 1)
    exact = expectations(state.amplitudes[None, :], basis.strings)[0]
    budget = MeasurementBudget(Scheme.CONVENTIONAL, 13 * 50)
    runs = np.stack([conventional_estimate_all(state, basis, budget, rng) for _ in range(1000)])
    se = runs.std(axis=0, ddof=1) / np.sqrt(1000) + 1e-12
    assert np.all(np.abs(runs.mean(axis=0) - exact) <= 4 * se)


def test_snapshot_variance_within_shadow_norm():
    rng = np.random.default_rng(6)
    state = random_state(3, rng)
    basis = enumerate_klocal(3, 2)
    est = snapshot_estimates(*sample_shadows(state, 40000, rng), basis)
    var = est.var(axis=0)
    bound = 3.0 ** basis.weights
    # second moment of a weight-w snapshot estimate is exactly 3^w
    assert np.all(var <= bound * 1.05)
