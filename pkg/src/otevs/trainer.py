"""Adversarial training of the sampler against a gradient-penalty critic.

Three schedules are supported:

* ``joint``: ``n_w`` critic updates, then one simultaneous (theta, alpha)
  update on a fresh batch.
* ``async``: ``n_w`` critic updates, one shared batch, ``n_alpha`` alpha
  updates on it (fresh surrogate noise each time, no new measurements), then
  one theta update on the same batch.
* ``decoupled``: ``n_alpha`` rounds of ``ceil(n_w / n_alpha)`` critic updates
  followed by one alpha update on that round's last generated batch, then one
  theta update on a fresh batch.

Every quantum-state copy spent goes through a :class:`ResourceLedger`.
"""
from __future__ import annotations

import csv
import enum
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from otevs import critic as cr
from otevs import noise_surrogate as ns
from otevs.generator import (
    GeneratedBatch,
    GeneratorParams,
    NoiseMode,
    expectation_jacobian,
    generate_noisy_batch,
    redraw_noise,
    sample_latent,
    save_checkpoint,
)
from otevs.ledger import ResourceLedger
from otevs.measurement import MeasurementBudget, Scheme
from otevs.metrics import kl_knn
from otevs.pauli import PauliBasis, expectations
from otevs.quantum_sim import CircuitSpec, prepare_states

ADAM_EPS = 1e-8
TRACE_COLUMNS = ("iteration", "L_G", "L_C", "kl_estimate", "ledger_total", "wall_ms")


class Variant(str, enum.Enum):
    JOINT = "joint"
    ASYNC = "async"
    DECOUPLED = "decoupled"

    @classmethod
    def _missing_(cls, value):
        aliases = {"asynchronous": cls.ASYNC, "decoup": cls.DECOUPLED}
        if isinstance(value, str):
            return aliases.get(value.lower()) or next((v for v in cls if v.value == value.lower()), None)
        return None


@dataclass(frozen=True)
class AdamHyper:
    lr: float
    beta1: float
    beta2: float

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass
class TrainConfig:
    variant: Variant = Variant.JOINT
    lam: float = 0.1
    n_w: int = 5
    n_alpha: int = 5
    batch_size: int = 256
    adam_theta: AdamHyper = AdamHyper(1e-3, 0.0, 0.9)
    adam_alpha: AdamHyper = AdamHyper(1e-4, 0.9, 0.9)
    adam_w: AdamHyper = AdamHyper(1e-4, 0.5, 0.9)
    iterations: int = 2000
    eval_every: int = 200
    eval_samples: int = 2048
    kl_k: int = 5
    critic_hidden: tuple = cr.DEFAULT_HIDDEN
    critic_dtype: str = "float64"
    noise_mode: NoiseMode = NoiseMode.SURROGATE

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.noise_mode = NoiseMode(self.noise_mode)
        for name in ("adam_theta", "adam_alpha", "adam_w"):
            val = getattr(self, name)
            if not isinstance(val, AdamHyper):
                setattr(self, name, AdamHyper(*val) if isinstance(val, (list, tuple)) else AdamHyper(**val))
        self.critic_hidden = tuple(int(h) for h in self.critic_hidden)
        if self.n_w < 1:
            raise ValueError("n_w must be >= 1")
        if self.variant is not Variant.JOINT and self.n_alpha < 1:
            raise ValueError("n_alpha must be >= 1")
        if self.batch_size < 1 or self.iterations < 0 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be >= 1, iterations >= 0")
        if self.lam < 0:
            raise ValueError("gradient-penalty weight must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["noise_mode"] = self.noise_mode.value
        d["critic_hidden"] = list(self.critic_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# -- Adam -------------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_update(state: AdamState, params: list, grads: list, hyper: AdamHyper) -> list:
    """One bias-corrected Adam step; updates ``state`` in place and returns new params."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and state groups differ in length")
    state.t += 1
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or state.m[i].shape != p.shape:
            raise ValueError(f"shape mismatch in group {i}: {p.shape} vs {g.shape}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        out.append(p - hyper.lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + ADAM_EPS))
    return out


# -- model construction -----------------------------------------------------


def make_target(spec: CircuitSpec, basis: PauliBasis, M: int, rng: np.random.Generator) -> GeneratorParams:
    """Random target: Gaussian angles around a shared uniform offset, sparse {1, 4, 9} weights."""
    theta = rng.normal(0.0, np.pi / 8, size=spec.param_count) + rng.uniform(-np.pi, np.pi)
    if basis.L < 3:
        raise ValueError("target weights need at least 3 strings")
    alpha = np.zeros((M, basis.L))
    for m in range(M):
        cols = rng.choice(basis.L, size=3, replace=False)
        alpha[m, cols] = (1.0, 4.0, 9.0)
    return GeneratorParams(theta, alpha)


def init_learner(spec: CircuitSpec, basis: PauliBasis, M: int, rng: np.random.Generator) -> GeneratorParams:
    theta = rng.uniform(-np.pi, np.pi, size=spec.param_count)
    alpha = rng.normal(0.0, np.sqrt(2.0 / basis.L), size=(M, basis.L))
    return GeneratorParams(theta, alpha)


def sample_dataset(params: GeneratorParams, spec, basis, size: int, rng: np.random.Generator) -> np.ndarray:
    Z = sample_latent(rng, spec.latent_dim, size)
    return expectations(prepare_states(spec, params.theta, Z), basis.strings) @ params.alpha.T


def ledger_per_iteration(variant, n_w: int, n_alpha: int, shots: int, B: int, n_d: int) -> int:
    """Copies consumed by one training iteration of ``variant``."""
    variant = Variant(variant)
    gen = shots * B
    theta = 2 * n_d * shots * B
    if variant in (Variant.JOINT, Variant.ASYNC):
        return (n_w + 1) * gen + theta
    return n_alpha * math.ceil(n_w / n_alpha) * gen + gen + theta


# -- gradients ----------------------------------------------------------------


def _critic_input_grad(critic: cr.CriticParams, Y: np.ndarray) -> np.ndarray:
    return np.asarray(cr.grad_input(critic, Y), dtype=float)


def generator_loss(critic: cr.CriticParams, Y_noisy: np.ndarray) -> float:
    return float(-np.mean(cr.forward(critic, Y_noisy)))


def _loss_and_output_grad(critic: cr.CriticParams, batch: GeneratedBatch) -> tuple[float, np.ndarray]:
    """``L_G`` and ``dL_G / dY`` for a batch, sharing one critic pass."""
    out, g = cr.value_and_grad_input(critic, batch.Y_noisy)
    return float(-np.mean(out)), -np.asarray(g, dtype=float) / batch.B


def grad_alpha_loss(critic: cr.CriticParams, batch: GeneratedBatch, G: np.ndarray | None = None) -> np.ndarray:
    """dL_G / d alpha with ``L_G = -mean D(alpha (p + eps))``.

    ``G`` is ``dL_G / dY`` when already computed.
    """
    if G is None:
        G = -_critic_input_grad(critic, batch.Y_noisy) / batch.B
    return G.T @ (batch.p + batch.eps)


def grad_theta_loss(critic: cr.CriticParams, params: GeneratorParams, spec: CircuitSpec,
                    basis: PauliBasis, batch: GeneratedBatch, scheme, G: np.ndarray | None = None) -> np.ndarray:
    """dL_G / d theta through both the ideal outputs and the surrogate noise.

    ``d y~ / d theta_d = alpha (dp/dtheta_d + D^{-1/2} dS_d xi)`` with ``xi`` held
    fixed. ``dS_d`` is the Cholesky derivative along ``dSigma_d``, which needs
    the parameter-shift derivatives of the pair products for shadows.
    """
    if G is None:
        G = -_critic_input_grad(critic, batch.Y_noisy) / batch.B  # (B, M)
    GA = G @ params.alpha  # (B, L)
    J = expectation_jacobian(spec, params.theta, batch.z, basis.strings)  # (B, L, N_d)
    grad = np.einsum("bl,bld->d", GA, J)
    if batch.S is None:
        return grad
    scheme = Scheme(scheme)
    dp = np.swapaxes(J, 1, 2)  # (B, N_d, L)
    if scheme is Scheme.SHADOWS:
        table = ns.pair_table(basis)
        pair_dp = np.swapaxes(expectation_jacobian(spec, params.theta, batch.z, table.strings), 1, 2)
    else:
        table, pair_dp = None, None
    dsigma = ns.covariance_gradient(batch.p[:, None, :], dp, pair_dp, table, scheme)
    S = batch.S[:, None, :, :]
    try:
        dS = ns.factorize_derivative(None, dsigma, S)
    except np.linalg.LinAlgError:
        sigma = ns.covariance_from_expectations(batch.p, batch.pair_p, table, scheme)
        dS = ns.factorize_derivative_fd(sigma[:, None], dsigma)
    deps = np.einsum("bdij,bj->bdi", dS, batch.xi) / np.sqrt(batch.shots)
    return grad + np.einsum("bl,bdl->d", GA, deps)


# -- training loop ------------------------------------------------------------


@dataclass
class TrainResult:
    params: GeneratorParams
    critic: cr.CriticParams
    ledger: ResourceLedger
    trace: list
    kl_history: list
    events: list = field(default_factory=list)
    initial_kl: float = float("nan")
    final_kl: float = float("nan")


class Trainer:
    """Holds the mutable training state and exposes the individual update steps."""

    def __init__(self, config: TrainConfig, spec: CircuitSpec, basis: PauliBasis,
                 params: GeneratorParams, critic: cr.CriticParams, data: np.ndarray,
                 budget: MeasurementBudget, rng: np.random.Generator,
                 alpha_mask: np.ndarray | None = None, ledger: ResourceLedger | None = None):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[0] == 0:
            raise ValueError("target dataset is empty")
        if data.shape[1] != params.M:
            raise ValueError(f"dataset has {data.shape[1]} columns, generator outputs {params.M}")
        params.check(spec, basis)
        self.config = config
        self.spec = spec
        self.basis = basis
        self.params = params.copy()
        self.critic = critic.copy()
        self.data = data
        self.budget = budget
        self.rng = rng
        self.eval_rng = np.random.default_rng(int(rng.integers(2**63)))
        self.alpha_mask = None if alpha_mask is None else np.asarray(alpha_mask, dtype=float)
        self.ledger = ledger if ledger is not None else ResourceLedger()
        self.events: list[str] = []
        self._adam_w = AdamState.zeros_like(self.critic.arrays())
        self._adam_alpha = AdamState.zeros_like([self.params.alpha])
        self._adam_theta = AdamState.zeros_like([self.params.theta])
        self.last_batch: GeneratedBatch | None = None
        idx = self.eval_rng.permutation(data.shape[0])[: config.eval_samples]
        self.eval_target = data[idx]

    @property
    def B(self) -> int:
        return self.config.batch_size

    def generate(self, phase: str) -> GeneratedBatch:
        Z = sample_latent(self.rng, self.spec.latent_dim, self.B)
        return generate_noisy_batch(self.params, self.spec, self.basis, Z, self.budget, self.rng,
                                    self.config.noise_mode, self.ledger, phase)

    def _redraw(self, batch: GeneratedBatch) -> GeneratedBatch:
        return redraw_noise(batch, self.params.alpha, self.rng)

    def critic_step(self) -> float:
        batch = self.generate("critic")
        x = self.data[self.rng.integers(0, self.data.shape[0], size=self.B)]
        u = self.rng.uniform(size=(self.B, 1))
        x_hat = u * x + (1.0 - u) * batch.Y_noisy
        loss, grads = cr.critic_loss_and_grad(self.critic, x, batch.Y_noisy, x_hat, self.config.lam)
        new = adam_update(self._adam_w, self.critic.arrays(), grads.arrays(), self.config.adam_w)
        self.critic = cr.CriticParams.from_arrays(new)
        self.last_batch = batch
        self.events.append("critic")
        return loss

    def _masked(self, g: np.ndarray) -> np.ndarray:
        return g if self.alpha_mask is None else g * self.alpha_mask

    def alpha_step(self, batch: GeneratedBatch, redraw: bool = True) -> float:
        """Update alpha on cached expectations; costs no copies."""
        if batch.p.shape != (batch.B, self.basis.L):
            raise ValueError(f"cached expectations have shape {batch.p.shape}, expected (B, {self.basis.L})")
        if redraw:
            batch = self._redraw(batch)
        loss, G = _loss_and_output_grad(self.critic, batch)
        g = self._masked(grad_alpha_loss(self.critic, batch, G))
        (self.params.alpha,) = adam_update(self._adam_alpha, [self.params.alpha], [g], self.config.adam_alpha)
        self.events.append("alpha")
        return loss

    def _record_shift(self) -> None:
        count = 2 * self.spec.param_count * self.B
        if self.budget.is_exact:
            self.ledger.record_symbolic("theta", count)
        else:
            self.ledger.record("theta", count * self.budget.shots)

    def theta_step(self, batch: GeneratedBatch, redraw: bool = False) -> float:
        if redraw:
            batch = self._redraw(batch)
        loss, G = _loss_and_output_grad(self.critic, batch)
        g = grad_theta_loss(self.critic, self.params, self.spec, self.basis, batch, self.budget.scheme, G)
        self._record_shift()
        (self.params.theta,) = adam_update(self._adam_theta, [self.params.theta], [g], self.config.adam_theta)
        self.events.append("theta")
        return loss

    def joint_step(self, batch: GeneratedBatch) -> float:
        """Simultaneous (theta, alpha) update from one batch."""
        loss, G = _loss_and_output_grad(self.critic, batch)
        g_alpha = self._masked(grad_alpha_loss(self.critic, batch, G))
        g_theta = grad_theta_loss(self.critic, self.params, self.spec, self.basis, batch, self.budget.scheme, G)
        self._record_shift()
        (self.params.alpha,) = adam_update(self._adam_alpha, [self.params.alpha], [g_alpha], self.config.adam_alpha)
        (self.params.theta,) = adam_update(self._adam_theta, [self.params.theta], [g_theta], self.config.adam_theta)
        self.events.append("theta+alpha")
        return loss

    def iteration(self) -> tuple[float, float]:
        """One outer iteration of the configured schedule; returns (L_G, L_C)."""
        cfg = self.config
        if cfg.variant is Variant.JOINT:
            for _ in range(cfg.n_w):
                l_c = self.critic_step()
            batch = self.generate("alpha")
            self.events.append("generate")
            l_g = self.joint_step(batch)
        elif cfg.variant is Variant.ASYNC:
            for _ in range(cfg.n_w):
                l_c = self.critic_step()
            batch = self.generate("alpha")
            self.events.append("generate")
            for _ in range(cfg.n_alpha):
                self.alpha_step(batch)
            l_g = self.theta_step(batch, redraw=True)
        else:
            inner = math.ceil(cfg.n_w / cfg.n_alpha)
            for _ in range(cfg.n_alpha):
                for _ in range(inner):
                    l_c = self.critic_step()
                self.alpha_step(self.last_batch)
            batch = self.generate("theta")
            self.events.append("generate")
            l_g = self.theta_step(batch)
        return l_g, l_c

    def evaluate(self) -> float:
        """KL of ideal generator outputs against held target samples."""
        n = self.eval_target.shape[0]
        Z = sample_latent(self.eval_rng, self.spec.latent_dim, n)
        Y = expectations(prepare_states(self.spec, self.params.theta, Z), self.basis.strings) @ self.params.alpha.T
        if not self.budget.is_exact:
            self.ledger.record("evaluation", n * self.budget.shots)
        return kl_knn(Y, self.eval_target, k=self.config.kl_k)

    def run(self, progress=None) -> TrainResult:
        cfg = self.config
        start = time.perf_counter()
        initial_kl = self.evaluate()
        kl_history = [(0, initial_kl)]
        trace = []
        kl = initial_kl
        for it in range(1, cfg.iterations + 1):
            l_g, l_c = self.iteration()
            kl_val = ""
            if it % cfg.eval_every == 0 or it == cfg.iterations:
                kl = self.evaluate()
                kl_history.append((it, kl))
                kl_val = kl
            trace.append({
                "iteration": it,
                "L_G": l_g,
                "L_C": l_c,
                "kl_estimate": kl_val,
                "ledger_total": self.ledger.total,
                "wall_ms": round(1000 * (time.perf_counter() - start), 1),
            })
            if progress is not None:
                progress(trace[-1])
        return TrainResult(self.params, self.critic, self.ledger, trace, kl_history,
                           self.events, initial_kl, kl)


def run(config: TrainConfig, spec: CircuitSpec, basis: PauliBasis, data: np.ndarray,
        budget: MeasurementBudget, rng: np.random.Generator, params: GeneratorParams | None = None,
        alpha_mask=None, progress=None) -> TrainResult:
    """Initialise a learner (unless ``params`` is given) and critic, then train."""
    M = data.shape[1]
    if params is None:
        params = init_learner(spec, basis, M, rng)
    critic = cr.init_kaiming(rng, M, config.critic_hidden, dtype=np.dtype(config.critic_dtype))
    trainer = Trainer(config, spec, basis, params, critic, data, budget, rng, alpha_mask)
    return trainer.run(progress)


# -- persistence ----------------------------------------------------------------


def write_trace(path, trace: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        writer.writerows(trace)


def write_run(out_dir, result: TrainResult, config: TrainConfig, spec: CircuitSpec, basis: PauliBasis,
              budget: MeasurementBudget, seed: int, extra_config: dict | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {"train": config.to_dict(), "circuit": spec.to_dict(), "basis": {"n": basis.n, "k": basis.k},
                "scheme": budget.scheme.value, "shots": budget.shots, "seed": seed}
    if extra_config:
        resolved.update(extra_config)
    (out / "config.json").write_text(json.dumps(resolved, indent=1))
    write_trace(out / "trace.csv", result.trace)
    save_checkpoint(out / "generator.json", result.params, spec, basis)
    result.critic.save(out / "critic.npz")
    summary = {
        "final_kl": result.final_kl,
        "initial_kl": result.initial_kl,
        "ledger_total": result.ledger.total,
        "iterations": config.iterations,
        "variant": config.variant.value,
        "scheme": budget.scheme.value,
        "shots": budget.shots,
        "seed": seed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary
