"""Finite-shot estimation of Pauli expectations.

Two schemes are simulated. The conventional scheme spends separate copies on
each string and averages +-1 outcomes. Classical shadows measure every copy in
a random product Pauli basis and reuse each snapshot for all strings.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from otevs.pauli import LETTERS, PauliBasis, PauliString, expectation, expectations
from otevs.quantum_sim import StateVector, apply_single_qubit

_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_SDG = np.array([[1, 0], [0, -1j]], dtype=complex)
# rotation taking the +1 eigenvector of X, Y, Z to |0>
_TO_Z = {1: _H, 2: _H @ _SDG, 3: np.eye(2, dtype=complex)}


class Scheme(str, enum.Enum):
    CONVENTIONAL = "conventional"
    SHADOWS = "shadows"
    EXACT = "exact"


@dataclass(frozen=True)
class MeasurementBudget:
    """Copies of the state spent on one generated sample.

    ``groups`` is the median-of-means group count for shadows; None picks the
    default from :func:`default_groups`.
    """

    scheme: Scheme
    shots: int | None = None
    groups: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.scheme is not Scheme.EXACT:
            if self.shots is None or self.shots < 1:
                raise ValueError("finite schemes need shots >= 1")
        if self.groups is not None and self.groups < 1:
            raise ValueError("groups must be >= 1")

    @property
    def is_exact(self) -> bool:
        return self.scheme is Scheme.EXACT

    def resolved_groups(self, L: int) -> int:
        g = self.groups if self.groups is not None else default_groups(L)
        return max(1, min(g, self.shots))


@dataclass
class ShadowSnapshot:
    bases: np.ndarray  # codes 1=X, 2=Y, 3=Z per qubit
    outcomes: np.ndarray  # +1 / -1 per qubit

    def __post_init__(self):
        self.bases = np.asarray(self.bases, dtype=np.int8)
        self.outcomes = np.asarray(self.outcomes, dtype=np.int8)
        if self.bases.shape != self.outcomes.shape:
            raise ValueError("bases and outcomes must have equal length")

    @property
    def n(self) -> int:
        return len(self.bases)

    def basis_text(self) -> str:
        return "".join(LETTERS[b] for b in self.bases)


def default_groups(L: int, delta: float = 0.05) -> int:
    return math.ceil(2 * math.log(2 * L / delta))


def split_evenly(total: int, parts: int) -> np.ndarray:
    """Integer split of ``total`` into ``parts``; remainder goes to the first parts."""
    base, rem = divmod(int(total), int(parts))
    out = np.full(parts, base, dtype=np.int64)
    out[:rem] += 1
    return out


def _amplitudes(state) -> np.ndarray:
    return state.amplitudes if isinstance(state, StateVector) else np.asarray(state, dtype=complex)


# -- conventional -----------------------------------------------------------


def conventional_estimate(state, P: PauliString, shots: int, rng: np.random.Generator) -> float:
    """Mean of ``shots`` +-1 outcomes of measuring ``P``."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if P.is_identity:
        return 1.0
    p = expectation(StateVector(P.n, _amplitudes(state)), P)
    prob_plus = min(max((1.0 + p) / 2.0, 0.0), 1.0)
    n_plus = rng.binomial(shots, prob_plus)
    return (2.0 * n_plus - shots) / shots


def conventional_shots(budget: MeasurementBudget, L: int) -> np.ndarray:
    """Per-string shot counts for one sample under the conventional scheme."""
    per = split_evenly(budget.shots, L)
    if per.min() < 1:
        raise ValueError(f"{budget.shots} copies cannot cover {L} strings")
    return per


def conventional_estimate_all(state, basis: PauliBasis, budget: MeasurementBudget, rng) -> np.ndarray:
    psi = _amplitudes(state)
    p = expectations(psi[None, :], basis.strings)[0]
    shots = conventional_shots(budget, basis.L)
    prob_plus = np.clip((1.0 + p) / 2.0, 0.0, 1.0)
    n_plus = rng.binomial(shots, prob_plus)
    est = (2.0 * n_plus - shots) / shots
    est[basis.weights == 0] = 1.0
    return est


# -- classical shadows ------------------------------------------------------


def _rotate_to_bases(psi: np.ndarray, n: int, bases) -> np.ndarray:
    out = psi[None, :]
    for q, b in enumerate(bases):
        if b != 3:
            out = apply_single_qubit(out, n, q, _TO_Z[int(b)])
    return out[0]


def sample_shadow(state, rng: np.random.Generator) -> ShadowSnapshot:
    """One snapshot: random Pauli basis per qubit, then qubit-by-qubit Born sampling."""
    psi = _amplitudes(state)
    n = int(round(math.log2(psi.size)))
    bases = rng.integers(1, 4, size=n)
    rotated = _rotate_to_bases(psi, n, bases).reshape((2,) * n)
    outcomes = np.empty(n, dtype=np.int8)
    for q in range(n):
        # rotated now holds qubits q..n-1 conditioned on earlier outcomes
        w0 = float(np.sum(np.abs(rotated[0]) ** 2))
        w1 = float(np.sum(np.abs(rotated[1]) ** 2))
        bit = int(rng.random() * (w0 + w1) >= w0)
        outcomes[q] = 1 - 2 * bit
        rotated = rotated[bit]
    return ShadowSnapshot(bases, outcomes)


def sample_shadows(state, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Bulk snapshot sampling.

    Returns ``(bases, outcomes)`` of shape (count, n). Snapshots sharing a basis
    are sampled together from that basis' outcome distribution, which has the
    same law as the sequential procedure of :func:`sample_shadow`.
    """
    psi = _amplitudes(state)
    n = int(round(math.log2(psi.size)))
    bases = rng.integers(1, 4, size=(count, n)).astype(np.int8)
    keys = (bases.astype(np.int64) - 1) @ (3 ** np.arange(n - 1, -1, -1))
    uniq, inverse = np.unique(keys, return_inverse=True)
    # rotate one copy of the state per distinct basis, a letter at a time
    letters = (uniq[:, None] // 3 ** np.arange(n - 1, -1, -1)) % 3 + 1
    rotated = np.repeat(psi[None, :], uniq.size, axis=0)
    for q in range(n):
        for b in (1, 2):
            rows = letters[:, q] == b
            if rows.any():
                rotated[rows] = apply_single_qubit(rotated[rows], n, q, _TO_Z[b])
    cdf = np.cumsum(np.abs(rotated) ** 2, axis=1)
    cdf /= cdf[:, -1:]
    order = np.argsort(inverse, kind="stable")
    starts = np.searchsorted(inverse[order], np.arange(uniq.size))
    ends = np.append(starts[1:], count)
    draws = np.empty(count, dtype=np.int64)
    u = rng.random(count)
    for i, (s, e) in enumerate(zip(starts, ends)):
        rows = order[s:e]
        draws[rows] = np.minimum(np.searchsorted(cdf[i], u[rows], side="right"), psi.size - 1)
    shifts = np.arange(n - 1, -1, -1)
    outcomes = (1 - 2 * ((draws[:, None] >> shifts) & 1)).astype(np.int8)
    return bases, outcomes


def snapshot_estimate(snapshot: ShadowSnapshot, P: PauliString) -> float:
    """tr(P rho_hat) for a single snapshot."""
    if P.is_identity:
        return 1.0
    val = 1.0
    for q in P.support:
        if snapshot.bases[q] != P.codes[q]:
            return 0.0
        val *= 3.0 * snapshot.outcomes[q]
    return val


def snapshot_estimates(bases: np.ndarray, outcomes: np.ndarray, basis: PauliBasis) -> np.ndarray:
    """Per-snapshot estimates for every string, shape (count, L)."""
    count = bases.shape[0]
    out = np.empty((count, basis.L))
    for j, P in enumerate(basis.strings):
        if P.is_identity:
            out[:, j] = 1.0
            continue
        supp = list(P.support)
        match = np.all(bases[:, supp] == P.codes[supp], axis=1)
        out[:, j] = np.where(match, 3.0**P.weight * np.prod(outcomes[:, supp], axis=1), 0.0)
    return out


def median_of_means(values, groups: int) -> np.ndarray | float:
    """Median of the means of ``groups`` contiguous equal chunks along axis 0.

    The trailing ``len(values) % groups`` entries are dropped.
    """
    values = np.asarray(values, dtype=float)
    count = values.shape[0]
    if count == 0:
        raise ValueError("no values to aggregate")
    if groups < 1 or groups > count:
        raise ValueError(f"groups={groups} must lie in [1, {count}]")
    size = count // groups
    chunks = values[: size * groups].reshape((groups, size) + values.shape[1:])
    result = np.median(chunks.mean(axis=1), axis=0)
    return float(result) if np.ndim(result) == 0 else result


def shadow_estimate_all(state, basis: PauliBasis, budget: MeasurementBudget, rng) -> np.ndarray:
    """Estimate every string from one shared set of ``budget.shots`` snapshots."""
    if budget.scheme is not Scheme.SHADOWS:
        raise ValueError("shadow_estimate_all needs a shadows budget")
    bases, outcomes = sample_shadows(state, budget.shots, rng)
    per_snapshot = snapshot_estimates(bases, outcomes, basis)
    return median_of_means(per_snapshot, budget.resolved_groups(basis.L))


def estimate_all(state, basis: PauliBasis, budget: MeasurementBudget, rng) -> np.ndarray:
    if budget.scheme is Scheme.SHADOWS:
        return shadow_estimate_all(state, basis, budget, rng)
    if budget.scheme is Scheme.CONVENTIONAL:
        return conventional_estimate_all(state, basis, budget, rng)
    return expectations(_amplitudes(state)[None, :], basis.strings)[0]


def estimate_batch(psi: np.ndarray, basis: PauliBasis, budget: MeasurementBudget, rng) -> np.ndarray:
    """Row-wise :func:`estimate_all` over a batch of states, shape (batch, L)."""
    return np.stack([estimate_all(row, basis, budget, rng) for row in np.atleast_2d(psi)])


# -- budgets ----------------------------------------------------------------


def shots_required(scheme, epsilon: float, delta: float, B: int, L: int, k: int, T: float) -> int:
    """Total copies over a batch of B samples that guarantee W1 <= epsilon w.p. 1 - delta."""
    scheme = Scheme(scheme)
    if not (0 < epsilon <= 1 and 0 < delta <= 1):
        raise ValueError("epsilon and delta must lie in (0, 1]")
    if T <= 0 or B < 1 or L < 1 or k < 0:
        raise ValueError("need T > 0, B >= 1, L >= 1, k >= 0")
    log_term = math.log(2 * B * L / delta)
    if scheme is Scheme.SHADOWS:
        return math.ceil(68 * T**2 * 3**k / epsilon**2 * log_term) * B
    if scheme is Scheme.CONVENTIONAL:
        return math.ceil(2 * T**2 / epsilon**2 * log_term) * B * L
    raise ValueError("no finite budget for the exact scheme")
