import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_expectation, pauli_matrix
from otevs.pauli import (
    PauliString,
    enumerate_klocal,
    expectation,
    expectations,
    pair_expectation,
    pauli_count,
    pauli_product,
)
from otevs.quantum_sim import StateVector


def random_state(n, rng):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return v / np.linalg.norm(v)


def test_spot_counts():
    assert pauli_count(8, 1) == 25
    assert pauli_count(11, 2) == 529
    assert enumerate_klocal(8, 1).L == 25
    assert enumerate_klocal(11, 2).L == 529


def test_enumeration_is_distinct_and_bounded():
    basis = enumerate_klocal(5, 2)
    labels = basis.labels()
    assert len(set(labels)) == len(labels)
    assert labels[0] == "IIIII"
    assert max(s.weight for s in basis.strings) == 2
    weights = [s.weight for s in basis.strings]
    assert weights == sorted(weights)


def test_enumeration_matches_exhaustive_filter():
    n, k = 4, 2
    expected = {"".join(p) for p in itertools.product("IXYZ", repeat=n) if sum(c != "I" for c in p) <= k}
    assert set(enumerate_klocal(n, k).labels()) == expected


def test_apply_matches_dense_matrix():
    rng = np.random.default_rng(0)
    for letters in ["X", "YZ", "ZIY", "XYZI", "IIII"]:
        psi = random_state(len(letters), rng)
        np.testing.assert_allclose(PauliString(letters).apply(psi), pauli_matrix(letters) @ psi, atol=1e-14)


def test_expectations_batch_matches_single():
    rng = np.random.default_rng(1)
    basis = enumerate_klocal(3, 2)
    psi = np.stack([random_state(3, rng) for _ in range(4)])
    batch = expectations(psi, basis.strings)
    for b in range(4):
        for j, P in enumerate(basis.strings):
            assert batch[b, j] == pytest.approx(expectation(StateVector(3, psi[b]), P), abs=1e-14)


def test_product_table():
    assert pauli_product(PauliString("X"), PauliString("Y")) == (1j, PauliString("Z"))
    assert pauli_product(PauliString("Y"), PauliString("X")) == (-1j, PauliString("Z"))
    for a in "IXYZ":
        assert pauli_product(PauliString(a), PauliString(a)) == (1, PauliString("I"))


@settings(max_examples=60, deadline=None)
@given(st.text("IXYZ", min_size=1, max_size=3), st.data())
def test_product_matches_matrix_product(p, data):
    q = data.draw(st.text("IXYZ", min_size=len(p), max_size=len(p)))
    phase, R = pauli_product(PauliString(p), PauliString(q))
    np.testing.assert_allclose(pauli_matrix(p) @ pauli_matrix(q), phase * pauli_matrix(R.letters), atol=1e-14)


def test_pair_expectation():
    rng = np.random.default_rng(2)
    psi = StateVector(2, random_state(2, rng))
    val = pair_expectation(psi, PauliString("XI"), PauliString("IZ"))
    assert val == pytest.approx(dense_expectation(psi.amplitudes, "XZ"), abs=1e-14)
    with pytest.raises(ValueError):
        pair_expectation(psi, PauliString("XI"), PauliString("YI"))


def test_invalid_strings():
    with pytest.raises(ValueError):
        PauliString("XA")
    with pytest.raises(ValueError):
        enumerate_klocal(3, 4)
    with pytest.raises(ValueError):
        expectation(StateVector.zero(2), PauliString("XXX"))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_expectations_bounded(n, seed):
    rng = np.random.default_rng(seed)
    basis = enumerate_klocal(n, min(n, 2))
    vals = expectations(random_state(n, rng)[None, :], basis.strings)
    assert np.all(np.abs(vals) <= 1 + 1e-12)


def test_count_closed_form_small_grid():
    for n in range(1, 7):
        for k in range(0, min(n, 3) + 1):
            assert pauli_count(n, k) == sum(comb(n, j) * 3**j for j in range(k + 1))
