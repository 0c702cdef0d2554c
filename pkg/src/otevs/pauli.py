"""Pauli strings: enumeration of k-local strings, expectations and products."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from math import comb

import numpy as np

from otevs.quantum_sim import StateVector

LETTERS = "IXYZ"
_NON_IDENTITY = "XYZ"

# single-qubit products a*b = phase * c
_PRODUCT_TABLE: dict[tuple[str, str], tuple[complex, str]] = {}
for _a in LETTERS:
    _PRODUCT_TABLE[("I", _a)] = (1, _a)
    _PRODUCT_TABLE[(_a, "I")] = (1, _a)
    _PRODUCT_TABLE[(_a, _a)] = (1, "I")
for _a, _b, _c in (("X", "Y", "Z"), ("Y", "Z", "X"), ("Z", "X", "Y")):
    _PRODUCT_TABLE[(_a, _b)] = (1j, _c)
    _PRODUCT_TABLE[(_b, _a)] = (-1j, _c)


@dataclass(frozen=True)
class PauliString:
    """Tensor product of single-qubit Paulis, written as text such as ``"IXZI"``.

    Character ``q`` acts on qubit ``q``.
    """

    letters: str

    def __post_init__(self):
        if not self.letters or any(c not in LETTERS for c in self.letters):
            raise ValueError(f"invalid Pauli string {self.letters!r}")

    @classmethod
    def identity(cls, n: int) -> "PauliString":
        return cls("I" * n)

    @classmethod
    def from_support(cls, n: int, support: dict[int, str]) -> "PauliString":
        chars = ["I"] * n
        for q, c in support.items():
            chars[q] = c
        return cls("".join(chars))

    @property
    def n(self) -> int:
        return len(self.letters)

    @cached_property
    def support(self) -> tuple[int, ...]:
        return tuple(q for q, c in enumerate(self.letters) if c != "I")

    @property
    def weight(self) -> int:
        return len(self.support)

    @property
    def is_identity(self) -> bool:
        return self.weight == 0

    @cached_property
    def codes(self) -> np.ndarray:
        """Integer codes per qubit: I=0, X=1, Y=2, Z=3."""
        return np.array([LETTERS.index(c) for c in self.letters], dtype=np.int8)

    @cached_property
    def _action(self) -> tuple[np.ndarray, np.ndarray]:
        # (P psi)[x] = phase[x] * psi[perm[x]]
        n = self.n
        xmask = 0
        zmask = 0
        n_y = 0
        for q, c in enumerate(self.letters):
            bit = 1 << (n - 1 - q)
            if c in "XY":
                xmask |= bit
            if c in "YZ":
                zmask |= bit
            if c == "Y":
                n_y += 1
        idx = np.arange(2**n)
        perm = idx ^ xmask
        parity = np.array([bin(v).count("1") & 1 for v in (perm & zmask)], dtype=float)
        phase = (1j**n_y) * (1.0 - 2.0 * parity)
        return perm, phase

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """Apply the string to amplitudes of shape (..., 2**n)."""
        perm, phase = self._action
        return phase * psi[..., perm]

    def __str__(self) -> str:
        return self.letters


@dataclass(frozen=True)
class PauliBasis:
    n: int
    k: int
    strings: tuple[PauliString, ...]

    @property
    def L(self) -> int:
        return len(self.strings)

    @cached_property
    def index(self) -> dict[str, int]:
        return {s.letters: i for i, s in enumerate(self.strings)}

    @cached_property
    def codes(self) -> np.ndarray:
        return np.stack([s.codes for s in self.strings])

    @cached_property
    def weights(self) -> np.ndarray:
        return np.array([s.weight for s in self.strings])

    def labels(self) -> list[str]:
        return [s.letters for s in self.strings]


def pauli_count(n: int, k: int) -> int:
    """Number of Pauli strings on n qubits with weight at most k."""
    return sum(comb(n, j) * 3**j for j in range(k + 1))


def enumerate_klocal(n: int, k: int) -> PauliBasis:
    """All strings of weight <= k, identity first.

    Ordered by weight, then support (lexicographic), then letters, so column
    order of the weight matrix is reproducible.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not 0 <= k <= n:
        raise ValueError(f"locality k={k} must lie in [0, n={n}]")
    strings = []
    for w in range(k + 1):
        for support in itertools.combinations(range(n), w):
            for letters in itertools.product(_NON_IDENTITY, repeat=w):
                strings.append(PauliString.from_support(n, dict(zip(support, letters))))
    return PauliBasis(n, k, tuple(strings))


def _amplitudes(state) -> np.ndarray:
    return state.amplitudes if isinstance(state, StateVector) else np.asarray(state)


def expectation(state: StateVector, P: PauliString) -> float:
    psi = _amplitudes(state)
    if psi.shape[-1] != 2**P.n:
        raise ValueError(f"string on {P.n} qubits does not match state dimension {psi.shape[-1]}")
    if P.is_identity:
        return 1.0
    return float(np.real(np.vdot(psi, P.apply(psi))))


def expectations(psi: np.ndarray, strings) -> np.ndarray:
    """Expectations of many strings on a batch of states.

    ``psi`` has shape (batch, 2**n); returns shape (batch, len(strings)).
    """
    psi = np.atleast_2d(psi)
    out = np.empty((psi.shape[0], len(strings)))
    conj = psi.conj()
    for j, P in enumerate(strings):
        if P.n != 0 and psi.shape[1] != 2**P.n:
            raise ValueError("string and state dimensions differ")
        if P.is_identity:
            out[:, j] = 1.0
        else:
            out[:, j] = np.einsum("bi,bi->b", conj, P.apply(psi)).real
    return out


def pauli_product(P: PauliString, Q: PauliString) -> tuple[complex, PauliString]:
    if P.n != Q.n:
        raise ValueError("strings act on different numbers of qubits")
    phase: complex = 1
    chars = []
    for a, b in zip(P.letters, Q.letters):
        ph, c = _PRODUCT_TABLE[(a, b)]
        phase *= ph
        chars.append(c)
    return phase, PauliString("".join(chars))


def pair_expectation(state: StateVector, P: PauliString, Q: PauliString) -> float:
    """Real expectation of the product ``P Q``.

    Raises ValueError when the product carries a phase of +-i, in which case the
    expectation is imaginary.
    """
    phase, R = pauli_product(P, Q)
    if abs(np.imag(phase)) > 0:
        raise ValueError(f"product of {P} and {Q} has non-real phase {phase}")
    return float(np.real(phase)) * expectation(state, R)
