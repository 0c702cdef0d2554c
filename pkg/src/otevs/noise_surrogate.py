"""Differentiable Gaussian model of shot noise on Pauli expectations.

The estimation error on the vector of expectations ``p`` is modelled as
``eps = D^{-1/2} S xi`` with ``xi`` standard normal, ``S`` a Cholesky factor of
the single-shot covariance ``Sigma`` and ``D`` the diagonal of copies spent per
string. For shadows every string sees all ``N_s`` snapshots, so
``Cov(eps) = Sigma / N_s``; for the conventional scheme the copies are split
across strings and ``D`` carries the per-string counts.

Everything here works on stacked arrays: a leading batch axis is allowed on
``p``, ``Sigma`` and ``S``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from otevs.measurement import MeasurementBudget, Scheme, conventional_shots
from otevs.pauli import PauliBasis, expectations, pauli_product
from otevs.quantum_sim import StateVector

JITTER_SCALE = 1e-10
JITTER_RETRIES = 3
JITTER_GROWTH = 100.0


def f_factor(a: str, b: str) -> int:
    """Per-qubit weight of the shadow covariance between letters ``a`` and ``b``."""
    if a == "I" or b == "I":
        return 1
    return 3 if a == b else 0


class PairTable:
    """Precomputed shadow-covariance structure of a basis.

    ``weights[i, j]`` is the product of :func:`f_factor` over qubits and
    ``index[i, j]`` points into :attr:`strings`, the distinct products
    ``P_i P_j`` needed where the weight is nonzero (-1 elsewhere).
    """

    def __init__(self, basis: PauliBasis):
        self.basis = basis
        L = basis.L
        self.weights = np.zeros((L, L))
        self.index = np.full((L, L), -1, dtype=np.int64)
        lookup: dict[str, int] = {}
        strings = []
        for i, Pi in enumerate(basis.strings):
            for j, Pj in enumerate(basis.strings):
                w = 1
                for a, b in zip(Pi.letters, Pj.letters):
                    w *= f_factor(a, b)
                    if w == 0:
                        break
                if w == 0:
                    continue
                phase, R = pauli_product(Pi, Pj)
                # nonzero weight means letters agree wherever both act
                assert phase == 1
                if R.letters not in lookup:
                    lookup[R.letters] = len(strings)
                    strings.append(R)
                self.weights[i, j] = w
                self.index[i, j] = lookup[R.letters]
        self.strings = tuple(strings)

    @cached_property
    def mask(self) -> np.ndarray:
        return self.index >= 0

    def gather(self, pair_p: np.ndarray) -> np.ndarray:
        """Expand per-product values (..., U) to an (..., L, L) matrix, 0 where unused."""
        full = pair_p[..., np.where(self.mask, self.index, 0)]
        return np.where(self.mask, full, 0.0)


_TABLES: dict[tuple[int, int], PairTable] = {}


def pair_table(basis: PauliBasis) -> PairTable:
    key = (basis.n, basis.k)
    table = _TABLES.get(key)
    if table is None or table.basis != basis:
        table = PairTable(basis)
        _TABLES[key] = table
    return table


@dataclass
class NoiseCovariance:
    scheme: Scheme
    sigma: np.ndarray
    S: np.ndarray
    jitter_used: float | np.ndarray


def covariance_from_expectations(p, pair_p, table: PairTable | None, scheme) -> np.ndarray:
    """Single-copy covariance from exact expectations.

    ``p`` has shape (..., L); ``pair_p`` holds expectations of ``table.strings``
    and is ignored for the conventional scheme.
    """
    scheme = Scheme(scheme)
    p = np.asarray(p, dtype=float)
    if scheme is Scheme.CONVENTIONAL:
        var = 1.0 - p**2
        return var[..., :, None] * np.eye(p.shape[-1])
    if scheme is Scheme.SHADOWS:
        first = table.weights * table.gather(np.asarray(pair_p, dtype=float))
        return first - p[..., :, None] * p[..., None, :]
    raise ValueError("no shot noise in the exact scheme")


def covariance(state, basis: PauliBasis, scheme) -> NoiseCovariance:
    scheme = Scheme(scheme)
    psi = state.amplitudes if isinstance(state, StateVector) else np.asarray(state)
    p = expectations(psi[None, :], basis.strings)[0]
    if scheme is Scheme.SHADOWS:
        table = pair_table(basis)
        pair_p = expectations(psi[None, :], table.strings)[0]
    else:
        table, pair_p = None, None
    sigma = covariance_from_expectations(p, pair_p, table, scheme)
    S, jitter = factorize_with_jitter(sigma)
    return NoiseCovariance(scheme, sigma, S, jitter)


def covariance_gradient(p, dp, pair_dp, table: PairTable | None, scheme) -> np.ndarray:
    """Directional derivative of the single-copy covariance.

    ``dp`` and ``pair_dp`` are derivatives of ``p`` and of the product
    expectations along one parameter direction; extra leading axes broadcast.
    """
    scheme = Scheme(scheme)
    p = np.asarray(p, dtype=float)
    dp = np.asarray(dp, dtype=float)
    if scheme is Scheme.CONVENTIONAL:
        return (-2.0 * p * dp)[..., :, None] * np.eye(p.shape[-1])
    if scheme is Scheme.SHADOWS:
        first = table.weights * table.gather(np.asarray(pair_dp, dtype=float))
        return first - dp[..., :, None] * p[..., None, :] - p[..., :, None] * dp[..., None, :]
    raise ValueError("no shot noise in the exact scheme")


def _jitter_level(sigma: np.ndarray) -> np.ndarray:
    L = sigma.shape[-1]
    trace = np.trace(sigma, axis1=-2, axis2=-1)
    return JITTER_SCALE * np.maximum(1.0, trace / L)


def factorize_with_jitter(sigma: np.ndarray) -> tuple[np.ndarray, float | np.ndarray]:
    """Lower Cholesky factor of a (stack of) symmetric PSD matrices.

    Strictly positive-definite input goes straight to Cholesky. Otherwise
    negative eigenvalues are clipped to zero and a scaled multiple of the
    identity is added, growing up to ``JITTER_RETRIES`` times.
    """
    sigma = np.asarray(sigma, dtype=float)
    lam = _jitter_level(sigma)
    try:
        S = np.linalg.cholesky(sigma)
        # pivots at rounding level mean a singular input; the jitter path keeps
        # the factor continuous in sigma
        if np.all(np.diagonal(S, axis1=-2, axis2=-1) ** 2 > np.asarray(lam)[..., None]):
            return S, np.zeros(sigma.shape[:-2]) if sigma.ndim > 2 else 0.0
    except np.linalg.LinAlgError:
        pass
    sym = 0.5 * (sigma + np.swapaxes(sigma, -1, -2))
    evals, evecs = np.linalg.eigh(sym)
    clipped = (evecs * np.clip(evals, 0.0, None)[..., None, :]) @ np.swapaxes(evecs, -1, -2)
    eye = np.eye(sigma.shape[-1])
    for _ in range(JITTER_RETRIES + 1):
        try:
            S = np.linalg.cholesky(clipped + np.asarray(lam)[..., None, None] * eye)
            return S, lam if np.ndim(lam) else float(lam)
        except np.linalg.LinAlgError:
            lam = lam * JITTER_GROWTH
    raise np.linalg.LinAlgError("Cholesky failed after jitter escalation")


def factorize(sigma: np.ndarray) -> np.ndarray:
    return factorize_with_jitter(sigma)[0]


def _phi(X: np.ndarray) -> np.ndarray:
    out = np.tril(X)
    idx = np.arange(X.shape[-1])
    out[..., idx, idx] *= 0.5
    return out


def factorize_derivative(sigma, dsigma, S=None) -> np.ndarray:
    """Directional derivative of the Cholesky factor: ``S Phi(S^-1 dSigma S^-T)``.

    ``Phi`` keeps the lower triangle and halves the diagonal. Pass ``S`` to
    reuse an existing factor (including any jitter it carries).
    """
    if S is None:
        S = factorize(sigma)
    dsigma = np.asarray(dsigma, dtype=float)
    S = np.asarray(S, dtype=float)
    diag = np.diagonal(S, axis1=-2, axis2=-1)
    if np.any(diag <= 0):
        raise np.linalg.LinAlgError("singular Cholesky factor")
    S_inv = np.linalg.inv(S)
    Y = S_inv @ dsigma @ np.swapaxes(S_inv, -1, -2)
    return S @ _phi(Y)


def factorize_derivative_fd(sigma, dsigma, step: float = 1e-6) -> np.ndarray:
    """Central-difference fallback for :func:`factorize_derivative`."""
    sigma = np.asarray(sigma, dtype=float)
    dsigma = np.asarray(dsigma, dtype=float)
    return (factorize(sigma + step * dsigma) - factorize(sigma - step * dsigma)) / (2 * step)


def shot_counts(budget: MeasurementBudget, L: int) -> np.ndarray:
    """Copies informing each string's estimate, shape (L,)."""
    if budget.scheme is Scheme.SHADOWS:
        return np.full(L, float(budget.shots))
    if budget.scheme is Scheme.CONVENTIONAL:
        return conventional_shots(budget, L).astype(float)
    raise ValueError("no shot counts in the exact scheme")


def sample_noise(S: np.ndarray, shots, rng: np.random.Generator, xi=None) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``eps = D^{-1/2} S xi``; returns ``(eps, xi)`` with shape (..., L)."""
    S = np.asarray(S, dtype=float)
    shots = np.asarray(shots, dtype=float)
    if np.any(shots <= 0):
        raise ValueError("shot count must be positive")
    if xi is None:
        xi = rng.standard_normal(S.shape[:-1])
    eps = np.einsum("...ij,...j->...i", S, xi) / np.sqrt(shots)
    return eps, xi


def perturb(y, alpha, S, shots, rng: np.random.Generator, xi=None) -> np.ndarray:
    """Noisy outputs ``y + alpha eps`` with ``Cov(eps) = D^{-1/2} Sigma D^{-1/2}``."""
    eps, _ = sample_noise(S, shots, rng, xi)
    return np.asarray(y, dtype=float) + eps @ np.asarray(alpha, dtype=float).T
