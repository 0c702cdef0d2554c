import csv
import json
import math

import numpy as np
import pytest

from otevs import critic as cr
from otevs import noise_surrogate as ns
from otevs.generator import GeneratorParams, generate_noisy_batch, sample_latent
from otevs.measurement import MeasurementBudget, Scheme
from otevs.pauli import enumerate_klocal, expectations
from otevs.quantum_sim import Ansatz, CircuitSpec, prepare_states
from otevs.trainer import (
    AdamHyper,
    AdamState,
    TrainConfig,
    Trainer,
    Variant,
    adam_update,
    grad_alpha_loss,
    grad_theta_loss,
    init_learner,
    ledger_per_iteration,
    make_target,
    run,
    sample_dataset,
    write_run,
)


def small_problem(seed=0, scheme=Scheme.SHADOWS, shots=50):
    rng = np.random.default_rng(seed)
    spec = CircuitSpec(2, Ansatz.SEQUENTIAL, 1)
    basis = enumerate_klocal(2, 1)
    target = make_target(spec, basis, 2, rng)
    data = sample_dataset(target, spec, basis, 256, rng)
    return spec, basis, data, MeasurementBudget(scheme, shots), rng


def small_trainer(variant="joint", seed=0, **overrides):
    spec, basis, data, budget, rng = small_problem(seed)
    kw = dict(variant=variant, n_w=5, n_alpha=2, batch_size=16, iterations=3, eval_every=2,
              eval_samples=64, critic_hidden=(16, 16))
    kw.update(overrides)
    cfg = TrainConfig(**kw)
    params = init_learner(spec, basis, 2, rng)
    critic = cr.init_kaiming(rng, 2, cfg.critic_hidden)
    return Trainer(cfg, spec, basis, params, critic, data, budget, rng)


def reference_adam(p, grads, lr, b1, b2, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return p


def test_adam_matches_scalar_reference():
    grads = [0.3, -1.2, 0.05, 2.0]
    hyper = AdamHyper(0.01, 0.5, 0.9)
    state = AdamState.zeros_like([np.zeros(1)])
    p = [np.array([1.0])]
    for g in grads:
        p = adam_update(state, p, [np.array([g])], hyper)
    assert p[0][0] == pytest.approx(reference_adam(1.0, grads, 0.01, 0.5, 0.9), abs=1e-15)
    assert state.t == 4


def test_adam_first_step_is_lr_times_sign():
    state = AdamState.zeros_like([np.zeros(3)])
    out = adam_update(state, [np.zeros(3)], [np.array([5.0, -0.1, 0.0])], AdamHyper(0.1, 0.0, 0.9))
    np.testing.assert_allclose(out[0], [-0.1, 0.1, 0.0], atol=1e-7)


def test_adam_validation():
    with pytest.raises(ValueError):
        AdamHyper(0.0, 0.5, 0.9)
    with pytest.raises(ValueError):
        AdamHyper(0.1, 1.0, 0.9)
    with pytest.raises(ValueError):
        adam_update(AdamState.zeros_like([np.zeros(2)]), [np.zeros(2)], [np.zeros(3)], AdamHyper(0.1, 0.5, 0.9))


def test_config_round_trip_and_aliases():
    cfg = TrainConfig(variant="asynchronous", adam_theta=(1e-2, 0.0, 0.9))
    assert cfg.variant is Variant.ASYNC
    again = TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    with pytest.raises(ValueError):
        TrainConfig(n_w=0)


def test_target_structure():
    rng = np.random.default_rng(1)
    spec = CircuitSpec(3, Ansatz.SEQUENTIAL, 2)
    basis = enumerate_klocal(3, 1)
    target = make_target(spec, basis, 4, rng)
    for row in target.alpha:
        assert sorted(row[row != 0]) == [1.0, 4.0, 9.0]
    assert target.T == 14.0
    # angles cluster around one shared offset
    assert np.std(target.theta) < 1.0


def test_ledger_formula_values():
    assert ledger_per_iteration("joint", 5, 5, 10, 4, 3) == 6 * 40 + 2 * 3 * 40
    assert ledger_per_iteration("async", 5, 5, 10, 4, 3) == 6 * 40 + 2 * 3 * 40
    assert ledger_per_iteration("decoupled", 5, 2, 10, 4, 3) == 2 * 3 * 40 + 40 + 2 * 3 * 40


@pytest.mark.parametrize("variant", list(Variant))
def test_ledger_audit(variant):
    tr = small_trainer(variant)
    for i in range(1, 4):
        tr.iteration()
        expected = ledger_per_iteration(variant, 5, 2, 50, 16, tr.spec.param_count)
        assert tr.ledger.total == i * expected
    assert tr.ledger.evaluation == 0


def test_event_schedules():
    tr = small_trainer("joint")
    tr.iteration()
    assert tr.events == ["critic"] * 5 + ["generate", "theta+alpha"]
    tr = small_trainer("async")
    tr.iteration()
    assert tr.events == ["critic"] * 5 + ["generate", "alpha", "alpha", "theta"]
    tr = small_trainer("decoupled")
    tr.iteration()
    assert tr.events == ["critic"] * 3 + ["alpha"] + ["critic"] * 3 + ["alpha", "generate", "theta"]


def snapshot(tr):
    return tr.params.theta.copy(), tr.params.alpha.copy(), [a.copy() for a in tr.critic.arrays()]


def unchanged(a, b):
    return np.array_equal(a, b) if not isinstance(a, list) else all(np.array_equal(x, y) for x, y in zip(a, b))


def test_each_step_only_touches_its_own_parameters():
    tr = small_trainer("async")
    th, al, w = snapshot(tr)
    tr.critic_step()
    th2, al2, w2 = snapshot(tr)
    assert unchanged(th, th2) and unchanged(al, al2) and not unchanged(w, w2)
    tr.alpha_step(tr.last_batch)
    th3, al3, w3 = snapshot(tr)
    assert unchanged(th2, th3) and not unchanged(al2, al3) and unchanged(w2, w3)
    tr.theta_step(tr.generate("theta"))
    th4, al4, w4 = snapshot(tr)
    assert not unchanged(th3, th4) and unchanged(al3, al4) and unchanged(w3, w4)


def test_alpha_step_costs_nothing():
    tr = small_trainer("async")
    tr.critic_step()
    before = tr.ledger.total
    tr.alpha_step(tr.last_batch)
    assert tr.ledger.total == before


def test_alpha_step_rejects_stale_cache():
    tr = small_trainer("async")
    tr.critic_step()
    batch = tr.last_batch
    batch.p = batch.p[:, :3]
    with pytest.raises(ValueError):
        tr.alpha_step(batch)


def test_alpha_mask_freezes_columns():
    spec, basis, data, budget, rng = small_problem(3)
    cfg = TrainConfig(variant="async", batch_size=8, n_w=1, n_alpha=2, critic_hidden=(8,), iterations=2,
                      eval_samples=32)
    params = init_learner(spec, basis, 2, rng)
    mask = np.zeros_like(params.alpha)
    mask[:, 1] = 1
    tr = Trainer(cfg, spec, basis, params, cr.init_kaiming(rng, 2, (8,)), data, budget, rng, mask)
    tr.iteration()
    np.testing.assert_array_equal(tr.params.alpha[:, mask[0] == 0], params.alpha[:, mask[0] == 0])
    assert not np.array_equal(tr.params.alpha[:, 1], params.alpha[:, 1])


def frozen_loss(critic, spec, basis, theta, alpha, Z, xi, shots, scheme):
    """Generator loss with the standard-normal draw held fixed, rebuilt from scratch."""
    psi = prepare_states(spec, theta, Z)
    P = expectations(psi, basis.strings)
    table = ns.pair_table(basis) if scheme is Scheme.SHADOWS else None
    pair = expectations(psi, table.strings) if table else None
    S = ns.factorize(ns.covariance_from_expectations(P, pair, table, scheme))
    eps = np.einsum("bij,bj->bi", S, xi) / np.sqrt(shots)
    return -np.mean(cr.forward(critic, (P + eps) @ alpha.T))


@pytest.mark.parametrize("scheme", [Scheme.CONVENTIONAL, Scheme.SHADOWS])
def test_theta_gradient_matches_fd_with_frozen_noise(scheme):
    rng = np.random.default_rng(4)
    spec = CircuitSpec(2, Ansatz.SEQUENTIAL, 1)
    basis = enumerate_klocal(2, 1)
    params = init_learner(spec, basis, 2, rng)
    params.alpha *= 3
    critic = cr.init_kaiming(rng, 2, (16, 16))
    budget = MeasurementBudget(scheme, 7 * 5 if scheme is Scheme.CONVENTIONAL else 5)
    Z = sample_latent(rng, spec.latent_dim, 8)
    batch = generate_noisy_batch(params, spec, basis, Z, budget, rng)
    g = grad_theta_loss(critic, params, spec, basis, batch, scheme)
    h = 1e-5
    fd = np.zeros_like(g)
    for d in range(g.size):
        e = np.zeros_like(params.theta)
        e[d] = h
        up = frozen_loss(critic, spec, basis, params.theta + e, params.alpha, Z, batch.xi, batch.shots, scheme)
        dn = frozen_loss(critic, spec, basis, params.theta - e, params.alpha, Z, batch.xi, batch.shots, scheme)
        fd[d] = (up - dn) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-4 * np.abs(fd).max())


def test_alpha_gradient_matches_fd():
    rng = np.random.default_rng(5)
    spec, basis, _, budget, _ = small_problem(5)
    params = init_learner(spec, basis, 2, rng)
    critic = cr.init_kaiming(rng, 2, (16, 16))
    batch = generate_noisy_batch(params, spec, basis, sample_latent(rng, spec.latent_dim, 8), budget, rng)
    g = grad_alpha_loss(critic, batch)
    f = lambda a: -np.mean(cr.forward(critic, (batch.p + batch.eps) @ a.T))
    fd = np.zeros_like(g)
    for idx in np.ndindex(g.shape):
        e = np.zeros_like(g)
        e[idx] = 1e-6
        fd[idx] = (f(params.alpha + e) - f(params.alpha - e)) / 2e-6
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-8)


def test_run_is_deterministic_under_seed():
    traces = []
    for _ in range(2):
        spec, basis, data, budget, rng = small_problem(6)
        cfg = TrainConfig(variant="decoupled", batch_size=8, n_w=2, n_alpha=2, iterations=3, eval_every=2,
                          eval_samples=64, critic_hidden=(8,))
        res = run(cfg, spec, basis, data, budget, rng)
        traces.append([{k: v for k, v in row.items() if k != "wall_ms"} for row in res.trace])
    assert traces[0] == traces[1]


def test_run_trace_and_artifacts(tmp_path):
    spec, basis, data, budget, rng = small_problem(7)
    cfg = TrainConfig(variant="joint", batch_size=8, n_w=1, iterations=3, eval_every=2, eval_samples=64,
                      critic_hidden=(8,))
    res = run(cfg, spec, basis, data, budget, rng)
    assert [r["iteration"] for r in res.trace] == [1, 2, 3]
    assert res.trace[0]["kl_estimate"] == "" and res.trace[1]["kl_estimate"] != ""
    totals = [r["ledger_total"] for r in res.trace]
    assert totals == sorted(totals)
    assert res.ledger.evaluation == 3 * 64 * budget.shots
    summary = write_run(tmp_path, res, cfg, spec, basis, budget, seed=7)
    for name in ("config.json", "trace.csv", "generator.json", "critic.npz", "summary.json"):
        assert (tmp_path / name).exists()
    with open(tmp_path / "trace.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["iteration", "L_G", "L_C", "kl_estimate", "ledger_total", "wall_ms"]
    assert summary["ledger_total"] == res.ledger.total


def test_trainer_rejects_bad_data():
    spec, basis, data, budget, rng = small_problem(8)
    params = init_learner(spec, basis, 2, rng)
    critic = cr.init_kaiming(rng, 2, (8,))
    with pytest.raises(ValueError):
        Trainer(TrainConfig(), spec, basis, params, critic, np.zeros((0, 2)), budget, rng)
    with pytest.raises(ValueError):
        Trainer(TrainConfig(), spec, basis, params, critic, data[:, :1], budget, rng)


def test_exact_scheme_trains_without_copies():
    spec, basis, data, _, rng = small_problem(9)
    cfg = TrainConfig(variant="async", batch_size=8, n_w=1, n_alpha=1, iterations=2, eval_samples=32,
                      critic_hidden=(8,))
    res = run(cfg, spec, basis, data, MeasurementBudget("exact"), rng)
    assert res.ledger.total == 0
    assert res.ledger.symbolic["theta"] > 0
