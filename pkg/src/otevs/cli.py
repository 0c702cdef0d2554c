"""Command-line front end.

Every command resolves a configuration from a named preset, an optional YAML
file (``--config``) and command-line flags, in that order of precedence, and
writes the resolved configuration next to its outputs.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from otevs import trainer as tr
from otevs.generator import NoiseMode, generate_noisy_batch, load_checkpoint, sample_latent, save_checkpoint
from otevs.measurement import MeasurementBudget, Scheme, shots_required
from otevs.metrics import kl_knn, kl_to_ideal_sweep, wasserstein1_exact
from otevs.pauli import enumerate_klocal
from otevs.quantum_sim import Ansatz, CircuitSpec

DATASET_SIZE = 4096

PRESETS: dict[str, dict] = {
    "illustrative": {
        "circuit": {"n": 2, "ansatz": "illustrative", "layers": 2},
        "k": 2, "M": 2,
        "scheme": "conventional", "shots": 10000, "mode": "surrogate",
        "trials": 5, "seed": 0,
        # rates raised from the long-run defaults so 2000 iterations suffice
        "train": {"variant": "decoupled", "iterations": 2000, "eval_every": 200, "critic_dtype": "float32",
                  "adam_theta": [1e-2, 0.0, 0.9], "adam_alpha": [1e-2, 0.9, 0.9], "adam_w": [1e-3, 0.5, 0.9]},
    },
    "small": {
        "circuit": {"n": 8, "ansatz": "sequential", "layers": 2},
        "k": 1, "M": 8,
        "scheme": "conventional", "shots": 1000, "mode": "surrogate",
        "trials": 5, "seed": 0,
        "train": {"variant": "joint", "iterations": 5000, "eval_every": 200, "critic_dtype": "float32",
                  "adam_theta": [1e-3, 0.0, 0.99], "adam_alpha": [1e-4, 0.0, 0.9], "adam_w": [1e-4, 0.9, 0.99]},
    },
    "deeper": {
        "circuit": {"n": 8, "ansatz": "sequential", "layers": 9},
        "k": 1, "M": 8,
        "scheme": "conventional", "shots": 1000, "mode": "surrogate",
        "trials": 5, "seed": 0,
        "train": {"variant": "joint", "iterations": 5000, "eval_every": 200, "critic_dtype": "float32",
                  "adam_theta": [1e-3, 0.0, 0.5], "adam_alpha": [1e-4, 0.0, 0.9], "adam_w": [1e-4, 0.5, 0.9]},
    },
    "wider": {
        "circuit": {"n": 11, "ansatz": "sequential", "layers": 2},
        "k": 2, "M": 64,
        "scheme": "conventional", "shots": 1000, "mode": "surrogate",
        "trials": 5, "seed": 0,
        "train": {"variant": "joint", "iterations": 5000, "eval_every": 200, "critic_dtype": "float32",
                  "adam_theta": [1e-2, 0.5, 0.5], "adam_alpha": [1e-4, 0.5, 0.9], "adam_w": [1e-4, 0.5, 0.9]},
    },
    "expressivity": {
        "circuit": {"n": 8, "ansatz": "sequential", "layers": 1},
        "k": 1, "M": 8,
        "scheme": "exact", "shots": None, "mode": "surrogate",
        "trials": 1, "seed": 0,
        "depths": [1, 3],
        "train": {"variant": "decoupled", "iterations": 500, "eval_every": 100, "critic_dtype": "float32",
                  "adam_theta": [1e-3, 0.0, 0.5], "adam_alpha": [1e-4, 0.0, 0.9], "adam_w": [1e-4, 0.5, 0.9]},
    },
}


@dataclass
class ExperimentPreset:
    name: str
    spec: CircuitSpec
    k: int
    M: int
    budget: MeasurementBudget
    mode: NoiseMode
    train: tr.TrainConfig
    trials: int
    seed: int
    raw: dict

    @property
    def basis(self):
        return enumerate_klocal(self.spec.n, self.k)

    @classmethod
    def from_dict(cls, name: str, d: dict) -> "ExperimentPreset":
        scheme = Scheme(d["scheme"])
        shots = None if scheme is Scheme.EXACT else int(d["shots"])
        train = dict(d.get("train", {}))
        train.setdefault("noise_mode", d.get("mode", "surrogate"))
        return cls(
            name=name,
            spec=CircuitSpec.from_dict(d["circuit"]),
            k=int(d["k"]),
            M=int(d["M"]),
            budget=MeasurementBudget(scheme, shots),
            mode=NoiseMode(d.get("mode", "surrogate")),
            train=tr.TrainConfig(**train),
            trials=int(d.get("trials", 1)),
            seed=int(d.get("seed", 0)),
            raw=d,
        )


def deep_update(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in (extra or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = deep_update(out[key], val)
        else:
            out[key] = val
    return out


def resolve_config(args) -> dict:
    name = getattr(args, "preset", None) or "illustrative"
    if name not in PRESETS:
        raise SystemExit(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = copy.deepcopy(PRESETS[name])
    if getattr(args, "config", None):
        cfg = deep_update(cfg, yaml.safe_load(Path(args.config).read_text()) or {})
    overrides: dict = {}
    if getattr(args, "variant", None):
        overrides.setdefault("train", {})["variant"] = args.variant
    if getattr(args, "iterations", None) is not None:
        overrides.setdefault("train", {})["iterations"] = args.iterations
    for key in ("scheme", "mode", "shots", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "ansatz", None):
        overrides["circuit"] = {"ansatz": args.ansatz}
    cfg = deep_update(cfg, overrides)
    if cfg["scheme"] != "exact" and cfg.get("shots") is None:
        raise SystemExit(f"scheme {cfg['scheme']!r} needs --shots")
    cfg["preset"] = name
    return cfg


def _write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


# -- experiments --------------------------------------------------------------


def build_target(preset: ExperimentPreset, rng: np.random.Generator, size: int = DATASET_SIZE):
    basis = preset.basis
    target = tr.make_target(preset.spec, basis, preset.M, rng)
    data = tr.sample_dataset(target, preset.spec, basis, size, rng)
    return target, data


def random_alpha(M: int, L: int, T: float, rng: np.random.Generator) -> np.ndarray:
    """Random weights whose largest absolute row sum is exactly ``T``."""
    alpha = rng.normal(size=(M, L))
    return T * alpha / np.abs(alpha).sum(axis=1, keepdims=True)


def bound_trials(scheme, n: int, k: int, B: int, epsilon: float, delta: float, T: float,
                 trials: int, rng: np.random.Generator, M: int = 2, layers: int = 2) -> dict:
    """Empirical check of the per-iteration measurement budget.

    Each trial draws a random circuit and weights with ``||alpha||_inf = T``,
    measures B samples with simulated finite shots at the prescribed budget and
    tests ``W1(ideal batch, measured batch) <= epsilon``.
    """
    scheme = Scheme(scheme)
    spec = CircuitSpec(n, Ansatz.SEQUENTIAL, layers)
    basis = enumerate_klocal(n, k)
    total = shots_required(scheme, epsilon, delta, B, basis.L, k, T)
    per_sample = total // B
    groups = math.ceil(2 * math.log(2 * B * basis.L / delta)) if scheme is Scheme.SHADOWS else None
    budget = MeasurementBudget(scheme, per_sample, groups)
    distances = []
    for _ in range(trials):
        params = tr.GeneratorParams(rng.uniform(-np.pi, np.pi, spec.param_count), random_alpha(M, basis.L, T, rng))
        Z = sample_latent(rng, spec.latent_dim, B)
        batch = generate_noisy_batch(params, spec, basis, Z, budget, rng, NoiseMode.SIMULATE)
        distances.append(wasserstein1_exact(batch.Y, batch.Y_noisy))
    distances = np.array(distances)
    return {
        "scheme": scheme.value, "n": n, "k": k, "L": basis.L, "B": B, "epsilon": epsilon, "delta": delta,
        "T": T, "N_s_formula": total, "shots_per_sample": per_sample, "trials": trials,
        "empirical_pass_rate": float(np.mean(distances <= epsilon)), "max_w1": float(distances.max()),
    }


def noise_study(preset: ExperimentPreset, budgets, seeds, n_samples: int = 2048, k: int = 5) -> list[dict]:
    """KL between noisy and ideal outputs of a random target model, per seed and budget."""
    rows = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        target = tr.make_target(preset.spec, preset.basis, preset.M, rng)
        scheme = preset.budget.scheme if not preset.budget.is_exact else Scheme.CONVENTIONAL
        for row in kl_to_ideal_sweep(target, preset.spec, preset.basis, budgets, rng, scheme,
                                     n_samples, k, preset.mode):
            rows.append({"seed": seed, **row})
    return rows


def smooth_by_median(rows: list[dict]) -> list[dict]:
    by_shots: dict = {}
    for r in rows:
        by_shots.setdefault(r["N_s"], []).append(r["kl_vs_ideal"])
    return [{"N_s": s, "kl_vs_ideal_median": float(np.median(v)), "seeds": len(v)} for s, v in by_shots.items()]


def _z_observable_init(basis, M: int, n: int):
    """Weights on single-qubit Z plus identity; only those entries train."""
    alpha = np.zeros((M, basis.L))
    mask = np.zeros((M, basis.L))
    ident = basis.index["I" * n]
    for m in range(M):
        q = m % n
        z = basis.index["I" * q + "Z" + "I" * (n - q - 1)]
        alpha[m, z] = 1.0
        mask[m, [ident, z]] = 1.0
    return alpha, mask


def expressivity_study(preset: ExperimentPreset, depths, seed: int, progress=None) -> list[dict]:
    """Final KL of three model families across circuit depths.

    ``H_F``: target observables, frozen. ``H_T``: tunable observables from a
    random start. ``Z_F``: single-qubit Z observables with a trainable
    per-output scale and shift.
    """
    rng = np.random.default_rng(seed)
    target, data = build_target(preset, rng)
    basis = preset.basis
    config = copy.deepcopy(preset.train)
    config.variant = tr.Variant.DECOUPLED
    rows = []
    for depth in depths:
        spec = CircuitSpec(preset.spec.n, preset.spec.ansatz, depth)
        theta0 = rng.uniform(-np.pi, np.pi, spec.param_count)
        alpha_t = tr.init_learner(spec, basis, preset.M, rng).alpha
        alpha_z, mask_z = _z_observable_init(basis, preset.M, spec.n)
        families = {
            "H_F": (target.alpha, np.zeros_like(target.alpha)),
            "H_T": (alpha_t, None),
            "Z_F": (alpha_z, mask_z),
        }
        for family, (alpha0, mask) in families.items():
            params = tr.GeneratorParams(theta0, alpha0)
            frng = np.random.default_rng([seed, depth, len(rows)])
            result = tr.run(config, spec, basis, data, preset.budget, frng, params=params, alpha_mask=mask)
            row = {"family": family, "depth": depth, "final_kl": result.final_kl,
                   "initial_kl": result.initial_kl, "trainable_alpha": int(alpha0.size if mask is None else mask.sum())}
            rows.append(row)
            if progress:
                progress(row)
    return rows


# -- commands -----------------------------------------------------------------


def cmd_gen_target(args) -> int:
    cfg = resolve_config(args)
    preset = ExperimentPreset.from_dict(cfg["preset"], cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(preset.seed)
    target, data = build_target(preset, rng)
    np.save(out / "dataset.npy", data)
    save_checkpoint(out / "target.json", target, preset.spec, preset.basis)
    (out / "config.json").write_text(json.dumps(cfg, indent=1))
    print(f"wrote {data.shape[0]} samples to {out / 'dataset.npy'}")
    return 0


def _load_dataset(args) -> np.ndarray:
    path = Path(args.data) if args.data else Path(args.out) / "dataset.npy"
    if not path.exists():
        raise SystemExit(f"dataset {path} not found; run gen-target first or pass --data")
    return np.load(path)


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    preset = ExperimentPreset.from_dict(cfg["preset"], cfg)
    data = _load_dataset(args)
    rng = np.random.default_rng(preset.seed)

    def report(row):
        if row["kl_estimate"] != "" and not args.quiet:
            print(f"iter {row['iteration']:6d}  L_G {row['L_G']:+.4f}  L_C {row['L_C']:+.4f}  "
                  f"KL {row['kl_estimate']:.4f}  copies {row['ledger_total']}", flush=True)

    result = tr.run(preset.train, preset.spec, preset.basis, data, preset.budget, rng, progress=report)
    summary = tr.write_run(args.out, result, preset.train, preset.spec, preset.basis, preset.budget,
                           preset.seed, {"preset": cfg["preset"]})
    print(json.dumps(summary))
    return 0


def cmd_evaluate(args) -> int:
    run_dir = Path(args.out)
    params, spec, basis = load_checkpoint(args.checkpoint or run_dir / "generator.json")
    data = _load_dataset(args)
    rng = np.random.default_rng(args.seed or 0)
    n = min(args.samples, data.shape[0])
    Z = sample_latent(rng, spec.latent_dim, n)
    Y = generate_noisy_batch(params, spec, basis, Z, MeasurementBudget(Scheme.EXACT), rng).Y
    ref = data[rng.permutation(data.shape[0])[:n]]
    m = min(n, 512)
    report = {"kl": kl_knn(Y, ref, k=args.k), "w1": wasserstein1_exact(Y[:m], ref[:m]), "samples": n}
    print(json.dumps(report))
    return 0


def cmd_expressivity(args) -> int:
    cfg = resolve_config(args)
    if args.depths:
        cfg["depths"] = [int(d) for d in args.depths.split(",")]
    preset = ExperimentPreset.from_dict(cfg["preset"], cfg)
    depths = cfg.get("depths", [preset.spec.layers])
    rows = expressivity_study(preset, depths, preset.seed, progress=lambda r: print(json.dumps(r), flush=True))
    out = Path(args.out)
    _write_csv(out / "expressivity.csv", rows)
    (out / "config.json").write_text(json.dumps(cfg, indent=1))
    return 0


def cmd_complexity(args) -> int:
    rng = np.random.default_rng(args.seed or 0)
    rows = []
    for n, k in [(int(a), int(b)) for a, b in (s.split(":") for s in args.nk.split(","))]:
        for eps in [float(e) for e in args.epsilons.split(",")]:
            for scheme in (Scheme.CONVENTIONAL, Scheme.SHADOWS):
                row = bound_trials(scheme, n, k, args.batch, eps, args.delta, args.T, args.trials, rng)
                print(json.dumps(row), flush=True)
                rows.append(row)
    _write_csv(Path(args.out) / "complexity.csv", rows)
    return 0


def cmd_noise_study(args) -> int:
    cfg = resolve_config(args)
    preset = ExperimentPreset.from_dict(cfg["preset"], cfg)
    budgets = [None if b in ("inf", "exact") else int(float(b)) for b in args.budgets.split(",")]
    seeds = range(preset.seed, preset.seed + args.seeds)
    rows = noise_study(preset, budgets, seeds)
    out = Path(args.out)
    _write_csv(out / "noise_study.csv", rows)
    smoothed = smooth_by_median(rows)
    _write_csv(out / "noise_study_median.csv", smoothed)
    for r in smoothed:
        print(json.dumps(r))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otevs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="runs/out"):
        p.add_argument("--preset", default="illustrative", choices=sorted(PRESETS))
        p.add_argument("--config", help="YAML file overriding preset values")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default=out_default)

    def noise(p):
        p.add_argument("--scheme", choices=[s.value for s in Scheme])
        p.add_argument("--mode", choices=[m.value for m in NoiseMode])
        p.add_argument("--shots", type=int)

    p = sub.add_parser("gen-target", help="sample a random target model and its dataset")
    common(p)
    p.set_defaults(func=cmd_gen_target)

    p = sub.add_parser("train", help="adversarially train a learner on a dataset")
    common(p)
    noise(p)
    p.add_argument("--variant", choices=[v.value for v in tr.Variant])
    p.add_argument("--iterations", type=int)
    p.add_argument("--data", help="dataset .npy (default: OUT/dataset.npy)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="KL and W1 of a trained generator against a dataset")
    p.add_argument("--out", default="runs/out", help="run directory")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--samples", type=int, default=2048)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("expressivity", help="compare fixed and tunable observables across depths")
    common(p)
    noise(p)
    p.set_defaults(preset="expressivity")
    p.add_argument("--ansatz", choices=[Ansatz.SEQUENTIAL.value, Ansatz.BRICKWORK.value])
    p.add_argument("--depths", help="comma-separated layer counts")
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_expressivity)

    p = sub.add_parser("complexity", help="validate measurement budgets empirically")
    p.add_argument("--nk", default="4:1", help="comma-separated n:k pairs")
    p.add_argument("--epsilons", default="0.2")
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs/complexity")
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("noise-study", help="KL between noisy and ideal outputs versus shots")
    common(p)
    noise(p)
    p.add_argument("--budgets", default="100,1000,10000,inf")
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_noise_study)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
