"""The observable-tunable expectation-value sampler.

A latent vector ``z`` drawn uniformly from ``[-pi, pi]^K`` sets rotation
angles of a parameterized circuit; the exact Pauli expectations ``p`` of the
prepared state are mixed linearly, ``y = alpha @ p``, into the output.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from otevs import noise_surrogate as ns
from otevs.ledger import ResourceLedger
from otevs.measurement import MeasurementBudget, Scheme, estimate_batch
from otevs.pauli import PauliBasis, enumerate_klocal, expectations
from otevs.quantum_sim import CircuitSpec, prepare_states

CHECKPOINT_FORMAT = "otevs-generator/1"


class NoiseMode(str, enum.Enum):
    SURROGATE = "surrogate"
    SIMULATE = "simulate"


@dataclass
class GeneratorParams:
    theta: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).copy()
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float)).copy()

    @property
    def M(self) -> int:
        return self.alpha.shape[0]

    @property
    def T(self) -> float:
        """Largest absolute row sum of alpha."""
        return float(np.abs(self.alpha).sum(axis=1).max())

    def copy(self) -> "GeneratorParams":
        return GeneratorParams(self.theta, self.alpha)

    def check(self, spec: CircuitSpec, basis: PauliBasis) -> None:
        if self.theta.shape != (spec.param_count,):
            raise ValueError(f"theta has shape {self.theta.shape}, circuit needs ({spec.param_count},)")
        if self.alpha.shape[1] != basis.L:
            raise ValueError(f"alpha has {self.alpha.shape[1]} columns, basis has {basis.L} strings")


@dataclass
class GeneratedBatch:
    """Outputs for one latent batch.

    ``eps`` is the noise on the expectation vector, so ``Y_noisy = (p + eps) @ alpha.T``.
    ``S`` and ``shots`` are kept for the surrogate so the noise can be redrawn
    or differentiated without touching the circuit again.
    """

    z: np.ndarray
    p: np.ndarray
    Y: np.ndarray
    Y_noisy: np.ndarray
    eps: np.ndarray
    xi: np.ndarray | None = None
    S: np.ndarray | None = None
    shots: np.ndarray | None = None
    pair_p: np.ndarray | None = None
    copies: int = 0

    @property
    def B(self) -> int:
        return self.z.shape[0]


def sample_latent(rng: np.random.Generator, K: int, size: int | None = None) -> np.ndarray:
    if K < 1:
        raise ValueError("latent dimension must be >= 1")
    shape = (K,) if size is None else (size, K)
    return rng.uniform(-np.pi, np.pi, size=shape)


def generate(params: GeneratorParams, spec: CircuitSpec, basis: PauliBasis, z) -> tuple[np.ndarray, np.ndarray]:
    """Ideal output ``y`` and expectation vector ``p`` for one latent vector."""
    Y, P = generate_batch(params, spec, basis, np.atleast_2d(z))
    return Y[0], P[0]


def generate_batch(params, spec, basis, Z) -> tuple[np.ndarray, np.ndarray]:
    params.check(spec, basis)
    P = expectations(prepare_states(spec, params.theta, Z), basis.strings)
    return P @ params.alpha.T, P


def _record(ledger, phase, budget: MeasurementBudget, count: int) -> int:
    if budget.is_exact:
        if ledger is not None:
            ledger.record_symbolic(phase, count)
        return 0
    copies = budget.shots * count
    if ledger is not None:
        ledger.record(phase, copies)
    return copies


def generate_noisy_batch(
    params: GeneratorParams,
    spec: CircuitSpec,
    basis: PauliBasis,
    Z: np.ndarray,
    budget: MeasurementBudget,
    rng: np.random.Generator,
    mode: NoiseMode | str = NoiseMode.SURROGATE,
    ledger: ResourceLedger | None = None,
    phase: str = "critic",
) -> GeneratedBatch:
    params.check(spec, basis)
    mode = NoiseMode(mode)
    Z = np.atleast_2d(Z)
    psi = prepare_states(spec, params.theta, Z)
    copies = _record(ledger, phase, budget, Z.shape[0])
    if budget.is_exact:
        P = expectations(psi, basis.strings)
        Y = P @ params.alpha.T
        return GeneratedBatch(Z, P, Y, Y, np.zeros_like(P), copies=copies)
    if mode is NoiseMode.SIMULATE:
        P = expectations(psi, basis.strings)
        eps = estimate_batch(psi, basis, budget, rng) - P
        Y = P @ params.alpha.T
        return GeneratedBatch(Z, P, Y, (P + eps) @ params.alpha.T, eps, copies=copies)

    table = ns.pair_table(basis) if budget.scheme is Scheme.SHADOWS else None
    P = expectations(psi, basis.strings)
    pair_p = expectations(psi, table.strings) if table is not None else None
    sigma = ns.covariance_from_expectations(P, pair_p, table, budget.scheme)
    S, _ = ns.factorize_with_jitter(sigma)
    shots = ns.shot_counts(budget, basis.L)
    eps, xi = ns.sample_noise(S, shots, rng)
    Y = P @ params.alpha.T
    return GeneratedBatch(Z, P, Y, (P + eps) @ params.alpha.T, eps, xi, S, shots, pair_p, copies)


def generate_noisy(params, spec, basis, z, budget, rng, mode=NoiseMode.SURROGATE) -> np.ndarray:
    """Noisy output for a single latent vector."""
    return generate_noisy_batch(params, spec, basis, np.atleast_2d(z), budget, rng, mode).Y_noisy[0]


def redraw_noise(batch: GeneratedBatch, alpha: np.ndarray, rng: np.random.Generator) -> GeneratedBatch:
    """Same states and expectations under weights ``alpha``, fresh surrogate noise.

    Costs no copies. Batches without a surrogate factor (exact or simulated
    measurements) keep their recorded noise.
    """
    if batch.S is None:
        eps, xi = batch.eps, batch.xi
    else:
        eps, xi = ns.sample_noise(batch.S, batch.shots, rng)
    return GeneratedBatch(batch.z, batch.p, batch.p @ alpha.T, (batch.p + eps) @ alpha.T, eps, xi,
                          batch.S, batch.shots, batch.pair_p, 0)


def expectation_jacobian(spec: CircuitSpec, theta: np.ndarray, Z: np.ndarray, strings) -> np.ndarray:
    """Parameter-shift derivatives of string expectations, shape (batch, len(strings), N_d)."""
    theta = np.asarray(theta, dtype=float)
    Z = np.atleast_2d(Z)
    jac = np.empty((Z.shape[0], len(strings), theta.size))
    shift = np.zeros_like(theta)
    for d in range(theta.size):
        shift[d] = np.pi / 2
        plus = expectations(prepare_states(spec, theta + shift, Z), strings)
        minus = expectations(prepare_states(spec, theta - shift, Z), strings)
        jac[:, :, d] = 0.5 * (plus - minus)
        shift[d] = 0.0
    return jac


def grad_theta(params, spec, basis, z, budget: MeasurementBudget | None = None,
               ledger: ResourceLedger | None = None) -> np.ndarray:
    """d p / d theta for one latent vector, shape (L, N_d)."""
    params.check(spec, basis)
    if ledger is not None and budget is not None:
        _record(ledger, "theta", budget, 2 * spec.param_count)
    return expectation_jacobian(spec, params.theta, np.atleast_2d(z), basis.strings)[0]


def grad_alpha(p, M: int) -> np.ndarray:
    """Jacobian of ``y = alpha @ p`` w.r.t. alpha: ``J[m, m2, l] = delta(m, m2) * p_l``."""
    p = np.asarray(p, dtype=float)
    return np.eye(M)[:, :, None] * p[None, None, :]


# -- persistence ------------------------------------------------------------


def save_checkpoint(path, params: GeneratorParams, spec: CircuitSpec, basis: PauliBasis) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "spec": spec.to_dict(),
        "basis": {"n": basis.n, "k": basis.k},
        "theta": params.theta.tolist(),
        "alpha_shape": list(params.alpha.shape),
        "alpha": params.alpha.ravel(order="C").tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path) -> tuple[GeneratorParams, CircuitSpec, PauliBasis]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    spec = CircuitSpec.from_dict(doc["spec"])
    basis = enumerate_klocal(doc["basis"]["n"], doc["basis"]["k"])
    alpha = np.asarray(doc["alpha"], dtype=float).reshape(doc["alpha_shape"])
    params = GeneratorParams(np.asarray(doc["theta"]), alpha)
    params.check(spec, basis)
    return params, spec, basis
