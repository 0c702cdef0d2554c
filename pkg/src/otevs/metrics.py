"""Distances between empirical sample sets.

* :func:`wasserstein1_exact` solves the optimal matching between two equally
  sized batches under the l1 ground metric.
* :func:`kl_knn` is the k-nearest-neighbour divergence estimator
  ``(M/N) sum_i log(nu_k(i) / rho_k(i)) + log(N' / (N - 1))``.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from otevs.generator import GeneratorParams, NoiseMode, generate_noisy_batch, sample_latent
from otevs.measurement import MeasurementBudget, Scheme

W1_MAX_SAMPLES = 512
TIE_JITTER = 1e-12


def _as_batch(X, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty (N, M) array")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} has non-finite entries")
    return X


def wasserstein1_exact(A, B) -> float:
    """``min over permutations pi of (1/N) sum_i ||a_i - b_pi(i)||_1``."""
    A = _as_batch(A, "A")
    B = _as_batch(B, "B")
    if A.shape != B.shape:
        raise ValueError(f"batches differ in shape: {A.shape} vs {B.shape}")
    N = A.shape[0]
    if N > W1_MAX_SAMPLES:
        raise ValueError(f"N={N} exceeds the assignment guard of {W1_MAX_SAMPLES}")
    cost = cdist(A, B, metric="cityblock")
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / N)


def inf_to_one_norm(alpha, max_rows: int = 16) -> float:
    """Induced norm ``max ||alpha x||_1`` over ``||x||_inf <= 1``.

    Equals ``max_s ||alpha^T s||_1`` over sign vectors ``s`` of length M, so the
    cost is ``2^M``; the largest absolute row sum coincides with it when M = 1.
    """
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    M = alpha.shape[0]
    if M > max_rows:
        raise ValueError(f"exact enumeration over 2^{M} sign vectors refused; M <= {max_rows}")
    signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * M, indexing="ij")).reshape(M, -1).T
    return float(np.abs(signs @ alpha).sum(axis=1).max())


def _break_ties(X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    uniq = np.unique(X, axis=0)
    if uniq.shape[0] == 1:
        raise ValueError("all samples are identical; the estimator is undefined")
    if uniq.shape[0] < X.shape[0]:
        scale = TIE_JITTER * max(1.0, float(np.abs(X).max()))
        X = X + scale * rng.standard_normal(X.shape)
    return X


def kl_knn(P, Q, k: int = 5, rng: np.random.Generator | None = None) -> float:
    """Nearest-neighbour estimate of KL(P || Q) from samples, Euclidean metric.

    Duplicate points are separated by a jitter of relative size 1e-12;
    ``rng`` seeds that jitter (a fixed default keeps results deterministic).
    """
    P = _as_batch(P, "P")
    Q = _as_batch(Q, "Q")
    if P.shape[1] != Q.shape[1]:
        raise ValueError("P and Q must have the same dimension")
    N, M = P.shape
    N2 = Q.shape[0]
    if k < 1 or N <= k or N2 < k:
        raise ValueError(f"need more than k={k} samples in P and at least k in Q")
    rng = np.random.default_rng(0) if rng is None else rng
    P = _break_ties(P, rng)
    Q = _break_ties(Q, rng) if N2 > 1 else Q
    # k+1 within P because each point is its own nearest neighbour
    rho = cKDTree(P).query(P, k=k + 1)[0][:, k]
    nu = cKDTree(Q).query(P, k=k)[0]
    nu = nu[:, k - 1] if nu.ndim == 2 else nu
    if np.any(rho <= 0) or np.any(nu <= 0):
        raise ValueError("zero neighbour distance after tie breaking")
    return float(M / N * np.sum(np.log(nu / rho)) + np.log(N2 / (N - 1)))


def kl_to_ideal_sweep(params: GeneratorParams, spec, basis, budgets, rng: np.random.Generator,
                      scheme="conventional", n_samples: int = 2048, k: int = 5,
                      mode=NoiseMode.SURROGATE) -> list[dict]:
    """KL between shot-noise-perturbed and ideal output distributions for each budget.

    ``budgets`` lists shot counts per sample; ``None`` or ``inf`` means infinite
    measurements. The noisy and ideal sets come from independent latent draws,
    and the same draws are reused across budgets so the sweep varies only N_s.
    """
    Z_noisy = sample_latent(rng, spec.latent_dim, n_samples)
    Z_ideal = sample_latent(rng, spec.latent_dim, n_samples)
    ideal = generate_noisy_batch(params, spec, basis, Z_ideal, MeasurementBudget(Scheme.EXACT), rng).Y
    noise_seed = int(rng.integers(2**63))
    rows = []
    for shots in budgets:
        infinite = shots is None or not np.isfinite(shots)
        budget = MeasurementBudget(Scheme.EXACT) if infinite else MeasurementBudget(scheme, int(shots))
        batch = generate_noisy_batch(params, spec, basis, Z_noisy, budget,
                                     np.random.default_rng(noise_seed), mode)
        rows.append({
            "N_s": "inf" if infinite else int(shots),
            "scheme": "exact" if infinite else Scheme(scheme).value,
            "kl_vs_ideal": kl_knn(batch.Y_noisy, ideal, k=k),
        })
    return rows
