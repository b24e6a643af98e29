"""Batch front end for low-shot meta-learning with hallucinated examples.

Subcommands: generate, meta-train, evaluate, sweep-prior, ablate,
export-hallucinations.

Settings resolve as built-in defaults < ``--config`` file (``key = value``) <
explicit flags. Every output file records the resolved settings and the
dataset content hash.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import _accel
from . import episodes as E
from . import evalproto as ev
from . import synthdata
from .hallucination import AugmentationPolicy, augment, estimate_gaussian_stats, export_hallucinations
from .labeled import concat_sets
from .metalearners import LearnerConfig
from .nets import CheckpointError, load_checkpoint, save_checkpoint

log = logging.getLogger("halluc_meta")

THREADS_ENV = "HALLUC_META_THREADS"

# CLI policy name -> (augmentation used while meta-training, augmentation at meta-test)
POLICIES = {
    "none": ("none", "none"),
    "learned-g": ("learned-g", "learned-g"),
    "gaussian": ("none", "gaussian"),
    "gaussian-tr": ("gaussian", "gaussian"),
    "dropout": ("dropout", "dropout"),
    "weighted": ("weighted", "weighted"),
    "det-g": ("learned-g", "det-g"),
    "det-g-tr": ("det-g", "det-g"),
    "untrained-g": ("untrained-g", "untrained-g"),
}

DEFAULTS = {
    "learner": "pn",
    "hallucinate": "none",
    "m": 5,
    "n": 1,
    "q": 5,
    "n_aug": 20,
    "iterations": 30000,
    "lr": 0.003,
    "momentum": 0.9,
    "seed": 0,
    "variable_shot": False,
    "eval_every": 250,
    "patience": 2000,
    "val_episodes": 30,
    "embed_dim": None,
    "att_steps": 2,
    "dropout_rate": 0.5,
    "covariance": "shared",
    "shots": "1,2,5,10,20",
    "trials": 5,
    "prior": "cv",
    "base_cap": 100,
    "base_queries": 20,
    "topk": 5,
}
assert set(DEFAULTS) == set(E.CONFIG_KEYS)

_INT_KEYS = {"m", "n", "q", "n_aug", "iterations", "seed", "eval_every", "patience",
             "val_episodes", "att_steps", "trials", "base_cap", "base_queries", "topk"}
_FLOAT_KEYS = {"lr", "momentum", "dropout_rate"}


class CliError(Exception):
    pass


def _coerce(key, value):
    if value is None:
        return None
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key == "embed_dim":
            return None if str(value).lower() in ("", "none") else int(value)
        if key == "variable_shot":
            if isinstance(value, bool):
                return value
            low = str(value).lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(f"expected true/false, got {value!r}")
            return low in ("1", "true", "yes")
    except ValueError as exc:
        raise CliError(f"setting {key}: {exc}") from None
    return str(value)


def resolve_settings(args) -> dict:
    out = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            out.update(E.read_config(args.config))
        except (OSError, ValueError) as exc:
            raise CliError(str(exc)) from None
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return {k: _coerce(k, v) for k, v in out.items()}


def resolve_threads(flag) -> int:
    raw = flag if flag is not None else os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"thread count must be an integer, got {raw!r}") from None
    if n < 1:
        raise CliError(f"thread count must be >= 1, got {n}")
    return n


def parse_shots(text: str) -> list[int]:
    try:
        shots = [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise CliError(f"bad shot list {text!r}") from None
    if not shots or min(shots) < 1:
        raise CliError(f"shot counts must be positive integers, got {text!r}")
    return shots


def parse_grid(text) -> list[float]:
    if text is None:
        return list(ev.DEFAULT_GRID)
    try:
        grid = [float(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise CliError(f"bad mu grid {text!r}") from None
    if not grid or any(not 0.0 <= g <= 1.0 for g in grid):
        raise CliError(f"mu grid values must lie in [0, 1], got {text!r}")
    return grid


def parse_prior(text: str):
    """``none`` -> nan, ``fixed:<mu>`` -> float, ``cv`` -> the string."""
    if text == "cv":
        return "cv"
    if text == "none":
        return float("nan")
    if text.startswith("fixed:"):
        try:
            mu = float(text.split(":", 1)[1])
        except ValueError:
            mu = -1.0
        if 0.0 <= mu <= 1.0:
            return mu
    raise CliError(f"prior must be none, cv or fixed:<mu in [0,1]>, got {text!r}")


def make_policy(kind: str, s: dict) -> AugmentationPolicy:
    try:
        return AugmentationPolicy(kind, n_aug=s["n_aug"], covariance=s["covariance"],
                                  dropout_rate=s["dropout_rate"])
    except ValueError as exc:
        raise CliError(str(exc)) from None


def check_policy_name(name: str):
    if name not in POLICIES:
        raise CliError(f"unknown policy {name!r}; valid names: {', '.join(POLICIES)}")


def load_data(path):
    try:
        return synthdata.load(path)
    except OSError as exc:
        raise CliError(f"cannot read dataset {path}: {exc.strerror or exc}") from None


def _write_text(path, text: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def _settings_header(s: dict, data_hash: str, **extra) -> dict:
    return {"config": s, "dataset_sha256": data_hash, **extra}


# ---------------------------------------------------------------------------
# training / evaluation plumbing shared by several subcommands
# ---------------------------------------------------------------------------


def train_model(data, split, s: dict, train_kind: str, log_stream=None):
    base = data.subset_classes(split.base_classes)
    learner = LearnerConfig(s["learner"], data.dim, embed_dim=s["embed_dim"], att_steps=s["att_steps"])
    policy = make_policy(train_kind, s)
    cfg = E.episode_config_from(s)
    try:
        cfg.validate(len(base.classes))
    except ValueError as exc:
        raise CliError(str(exc)) from None
    params, train_log = E.meta_train(base, learner, policy, cfg, log_stream=log_stream)
    return learner, params, train_log


def checkpoint_meta(s, learner, train_kind, test_kind, data_hash, train_log=None) -> dict:
    meta = {
        "config": s,
        "learner": learner.to_dict(),
        "policy_name": s["hallucinate"],
        "train_policy": train_kind,
        "test_policy": test_kind,
        "dataset_sha256": data_hash,
    }
    if train_log is not None:
        meta["best_iteration"] = train_log.best_iteration
        meta["stopped_at"] = train_log.stopped_at
        meta["iterations_run"] = len(train_log.iteration)
    return meta


def scorer_from(params, learner, test_kind, s, data, split, threads):
    policy = make_policy(test_kind, s)
    if policy.uses_generator and not any(k.startswith("G.") for k in params.names()):
        raise CliError(f"policy {test_kind} needs a hallucinator, but the checkpoint has none")
    stats = None
    if policy.kind == "gaussian":
        stats = estimate_gaussian_stats(data.subset_classes(split.base_classes),
                                        shared=policy.covariance == "shared")
    settings = ev.EvalSettings(topk=s["topk"], base_queries=s["base_queries"],
                               base_cap=s["base_cap"], threads=threads)
    return ev.MetaLearnerScorer(learner, params, policy, stats, s["base_cap"]), settings


def _g_snapshot(params):
    return {k: v.value.copy() for k, v in params.items() if k.startswith("G.")}


def _check_g_unchanged(before, params):
    for k, v in before.items():
        if not np.array_equal(v, params[k].value):
            raise CliError(f"internal check failed: hallucinator parameter {k} changed during meta-testing")


def _load_model(path, data):
    try:
        params, meta = load_checkpoint(path)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from None
    if "learner" not in meta:
        raise CliError(f"{path}: checkpoint has no learner description")
    learner = LearnerConfig(**meta["learner"])
    if learner.feature_dim != data.dim:
        raise CliError(f"checkpoint feature dim {learner.feature_dim} does not match dataset dim {data.dim}")
    return params, meta, learner


def _eval_settings(args, meta: dict | None) -> dict:
    """Checkpoint settings, then config file, then flags."""
    s = dict(DEFAULTS)
    if meta:
        s.update(meta.get("config", {}))
    if getattr(args, "config", None):
        try:
            s.update(E.read_config(args.config))
        except (OSError, ValueError) as exc:
            raise CliError(str(exc)) from None
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            s[key] = val
    return {k: _coerce(k, v) for k, v in s.items()}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    if args.import_text:
        try:
            data, split = synthdata.import_text(args.import_text, seed=args.seed)
        except OSError as exc:
            raise CliError(f"cannot read {args.import_text}: {exc.strerror or exc}") from None
        provenance = {"import_text": str(args.import_text), "seed": args.seed}
    else:
        spec = synthdata.SynthSpec(
            num_classes=args.classes, feature_dim=args.dim, latent_dim=args.latent,
            num_shared_modes=args.modes, mode_strength=args.mode_strength,
            samples_per_class=args.samples, noise_scale=args.noise, seed=args.seed,
            center_offset=args.center_offset)
        try:
            data, split = synthdata.generate(spec)
        except ValueError as exc:
            raise CliError(str(exc)) from None
        provenance = {"synth_spec": synthdata.spec_dict(spec)}
    synthdata.save(args.out, data, split)
    digest = synthdata.dataset_hash(data, split)
    sidecar = {**provenance, "dataset_sha256": digest, "classes": len(data.classes),
               "examples": len(data), "dim": data.dim, "split": asdict(split)}
    _write_text(str(args.out) + ".json", json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.out}: {len(data.classes)} classes, {len(data)} examples, d={data.dim}, sha256 {digest}")
    return 0


def cmd_meta_train(args) -> int:
    s = resolve_settings(args)
    check_policy_name(s["hallucinate"])
    data, split = load_data(args.data)
    digest = synthdata.dataset_hash(data, split)
    train_kind, test_kind = POLICIES[s["hallucinate"]]
    log_path = args.log or str(args.out) + ".log.jsonl"
    Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w") as fh:
        fh.write(json.dumps({"config": s, "dataset_sha256": digest}, sort_keys=True) + "\n")
        learner, params, train_log = train_model(data, split, s, train_kind, log_stream=fh)
    save_checkpoint(args.out, params, checkpoint_meta(s, learner, train_kind, test_kind, digest, train_log))
    last = train_log.loss[-1] if train_log.loss else float("nan")
    print(f"wrote {args.out} ({len(train_log.iteration)} iterations, last loss {last:.4f}, "
          f"best iteration {train_log.best_iteration}); log {log_path}")
    return 0


def _evaluate_report(scorer, split, data, s, settings, grid, header, g_params=None):
    before = _g_snapshot(g_params) if g_params is not None else {}
    report = ev.evaluate(scorer, split, data, parse_shots(s["shots"]), s["trials"], s["seed"],
                         parse_prior(s["prior"]), grid, settings, header)
    if g_params is not None:
        _check_g_unchanged(before, g_params)
    return report


def cmd_evaluate(args) -> int:
    data, split = load_data(args.data)
    digest = synthdata.dataset_hash(data, split)
    threads = resolve_threads(args.threads)
    grid = parse_grid(args.grid)
    if args.baseline == "logreg":
        s = _eval_settings(args, None)
        settings = ev.EvalSettings(topk=s["topk"], base_queries=s["base_queries"],
                                   base_cap=s["base_cap"], threads=threads)
        scorer, label, g_params = ev.LogRegScorer(base_cap=s["base_cap"]), "LogReg", None
        header = _settings_header(s, digest, model="logreg", mu_grid=grid)
    else:
        if args.checkpoint is None:
            raise CliError("evaluate needs --checkpoint (or --baseline logreg)")
        params, meta, learner = _load_model(args.checkpoint, data)
        s = _eval_settings(args, meta)
        if args.hallucinate is not None:
            check_policy_name(args.hallucinate)
            test_kind = POLICIES[args.hallucinate][1]
        else:
            test_kind = meta.get("test_policy", "none")
        scorer, settings = scorer_from(params, learner, test_kind, s, data, split, threads)
        label = f"{learner.kind.upper()} w/ {test_kind}" if test_kind != "none" else learner.kind.upper()
        g_params = params
        header = _settings_header(s, digest, checkpoint_dataset_sha256=meta.get("dataset_sha256"),
                                  learner=learner.to_dict(), test_policy=test_kind, mu_grid=grid)
    report = _evaluate_report(scorer, split, data, s, settings, grid, header, g_params)
    table = report.to_table(label)
    prefix = args.out
    _write_text(prefix + ".csv", report.to_csv())
    _write_text(prefix + ".txt", "".join(f"# {k}: {json.dumps(v, sort_keys=True)}\n"
                                         for k, v in header.items()) + table)
    sys.stdout.write(table)
    print(f"wrote {prefix}.csv and {prefix}.txt")
    return 0


def cmd_sweep_prior(args) -> int:
    data, split = load_data(args.data)
    digest = synthdata.dataset_hash(data, split)
    params, meta, learner = _load_model(args.checkpoint, data)
    s = _eval_settings(args, meta)
    test_kind = POLICIES[args.hallucinate][1] if args.hallucinate else meta.get("test_policy", "none")
    if args.hallucinate:
        check_policy_name(args.hallucinate)
    scorer, settings = scorer_from(params, learner, test_kind, s, data, split, resolve_threads(args.threads))
    grid = parse_grid(args.grid)
    rows = ev.sweep_prior(scorer, split, data, args.shot, grid, s["seed"], s["trials"], args.classes, settings)
    header = _settings_header(s, digest, learner=learner.to_dict(), test_policy=test_kind,
                              shot=args.shot, classes=args.classes, mu_grid=grid)
    buf = io.StringIO()
    for k, v in header.items():
        buf.write(f"# {k}: {json.dumps(v, sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mu", "novel", "base", "overall"])
    for r in rows:
        w.writerow([f"{r['mu']:.4f}", f"{r['novel']:.10f}", f"{r['base']:.10f}", f"{r['overall']:.10f}"])
    _write_text(args.out, buf.getvalue())
    for r in rows:
        print(f"mu={r['mu']:.2f}  novel={100 * r['novel']:.1f}  base={100 * r['base']:.1f}  "
              f"overall={100 * r['overall']:.1f}")
    print(f"wrote {args.out}")
    return 0


def ablation_table(reports: dict, shots) -> str:
    width = 7
    cols = [("Novel (joint)", "novel_joint"), ("All with prior", "all_prior")]
    span = width * len(shots) + 4
    head1 = " " * 16 + "".join(f"{name:<{span}}" for name, _ in cols)
    head2 = f"{'Method':<16}" + "".join(
        "".join(f"{('n=' if i == 0 else '') + str(n):>{width}}" for i, n in enumerate(shots)) + "    "
        for _ in cols)
    lines = [head1.rstrip(), head2.rstrip()]
    for name, rep in reports.items():
        lines.append((f"{name:<16}" + "".join(
            "".join(f"{100 * rep.mean(n, key):>{width}.1f}" for n in shots) + "    "
            for _, key in cols)).rstrip())
    return "\n".join(lines) + "\n"


def run_ablation(data, split, s: dict, names, threads: int = 1, grid=None, progress=None):
    """Train and evaluate each named policy; trained models are shared where possible."""
    for name in names:
        check_policy_name(name)
    digest = synthdata.dataset_hash(data, split)
    grid = list(ev.DEFAULT_GRID) if grid is None else grid
    models, reports = {}, {}
    for name in names:
        train_kind, test_kind = POLICIES[name]
        if train_kind not in models:
            if progress:
                progress(f"meta-training with {train_kind}")
            models[train_kind] = train_model(data, split, s, train_kind)
        learner, params, _ = models[train_kind]
        scorer, settings = scorer_from(params, learner, test_kind, s, data, split, threads)
        header = _settings_header(s, digest, policy=name)
        reports[name] = _evaluate_report(scorer, split, data, s, settings, grid, header, params)
        if progress:
            progress(f"evaluated {name}")
    return reports, digest


def cmd_ablate(args) -> int:
    s = resolve_settings(args)
    names = [p.strip() for p in args.policies.split(",") if p.strip()]
    if not names:
        raise CliError("no policies given")
    for name in names:
        check_policy_name(name)
    data, split = load_data(args.data)
    reports, digest = run_ablation(data, split, s, names, resolve_threads(args.threads),
                                   parse_grid(args.grid), progress=lambda m: log.info("%s", m))
    shots = parse_shots(s["shots"])
    table = ablation_table(reports, shots)
    header = _settings_header(s, digest, policies=names)
    head = "".join(f"# {k}: {json.dumps(v, sort_keys=True)}\n" for k, v in header.items())
    buf = io.StringIO()
    buf.write(head)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "regime", "n", "trial", "accuracy", "mu"])
    for name, rep in reports.items():
        for n in shots:
            for regime in ev.REGIMES + ev.DIAGNOSTICS:
                for t, a in enumerate(rep.trials[(n, regime)]):
                    w.writerow([name, regime, n, t, f"{a:.10f}", f"{rep.mu[n]:.2f}"])
    _write_text(args.out + ".csv", buf.getvalue())
    _write_text(args.out + ".txt", head + table)
    sys.stdout.write(table)
    print(f"wrote {args.out}.csv and {args.out}.txt")
    return 0


def cmd_export_hallucinations(args) -> int:
    data, split = load_data(args.data)
    digest = synthdata.dataset_hash(data, split)
    params, meta, learner = _load_model(args.checkpoint, data)
    s = _eval_settings(args, meta)
    test_kind = meta.get("test_policy", "none")
    if args.hallucinate:
        check_policy_name(args.hallucinate)
        test_kind = POLICIES[args.hallucinate][1]
    policy = make_policy(test_kind, s)
    classes = getattr(split, f"{args.classes}_classes")
    if not classes:
        raise CliError(f"the dataset has no {args.classes} classes")
    rng = np.random.default_rng([s["seed"], args.shot])
    parts = []
    for k in classes:
        rows = data.class_rows(k)
        if rows.size < args.shot:
            raise CliError(f"class {k} has {rows.size} examples, fewer than --shot {args.shot}")
        parts.append(data.subset(np.sort(rng.choice(rows, size=args.shot, replace=False))))
    seeds = concat_sets(parts)
    stats = None
    if policy.kind == "gaussian":
        stats = estimate_gaussian_stats(data.subset_classes(split.base_classes),
                                        shared=policy.covariance == "shared")
    hp = E.make_hallucinator(learner, policy)
    if hp is not None and not any(k.startswith("G.") for k in params.names()):
        raise CliError(f"policy {test_kind} needs a hallucinator, but the checkpoint has none")
    aug = augment(policy, seeds, rng, hp=hp, params=params, stats=stats)
    header = _settings_header(s, digest, policy=test_kind, shot=args.shot, classes=args.classes)
    export_hallucinations(args.out, aug, header)
    print(f"wrote {args.out}: {int(aug.synthetic.sum())} generated and {int((~aug.synthetic).sum())} real rows")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_training_flags(p):
    p.add_argument("--learner", choices=("pn", "mn", "pmn"))
    p.add_argument("--hallucinate", metavar="POLICY", help=f"one of: {', '.join(POLICIES)}")
    p.add_argument("--m", type=int, help="classes per training episode")
    p.add_argument("--n", type=int, help="real examples per class in a training episode")
    p.add_argument("--q", type=int, help="test examples per class in a training episode")
    p.add_argument("--n-aug", dest="n_aug", type=int, help="examples per class after augmentation")
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--variable-shot", dest="variable_shot", action="store_const", const=True)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--patience", type=int, help="0 disables early stopping")
    p.add_argument("--val-episodes", dest="val_episodes", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--att-steps", dest="att_steps", type=int)
    p.add_argument("--dropout-rate", dest="dropout_rate", type=float)
    p.add_argument("--covariance", choices=("shared", "per-class"))


def _add_eval_flags(p):
    p.add_argument("--shots", help="comma-separated shot counts, e.g. 1,2,5,10,20")
    p.add_argument("--trials", type=int)
    p.add_argument("--prior", help="none, cv or fixed:<mu>")
    p.add_argument("--grid", help="comma-separated mu grid (default 0,0.1,...,1)")
    p.add_argument("--topk", type=int)
    p.add_argument("--base-cap", dest="base_cap", type=int)
    p.add_argument("--base-queries", dest="base_queries", type=int)


def _add_common(p):
    p.add_argument("--config", help="file of 'key = value' lines; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help=f"worker cap (default ${THREADS_ENV} or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="halluc-meta", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic (or imported) dataset file")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=synthdata.SynthSpec.num_classes)
    p.add_argument("--dim", type=int, default=synthdata.SynthSpec.feature_dim)
    p.add_argument("--latent", type=int, default=synthdata.SynthSpec.latent_dim)
    p.add_argument("--modes", type=int, default=synthdata.SynthSpec.num_shared_modes)
    p.add_argument("--mode-strength", dest="mode_strength", type=float,
                   default=synthdata.SynthSpec.mode_strength)
    p.add_argument("--samples", type=int, default=synthdata.SynthSpec.samples_per_class)
    p.add_argument("--noise", type=float, default=synthdata.SynthSpec.noise_scale)
    p.add_argument("--center-offset", dest="center_offset", type=float,
                   default=synthdata.SynthSpec.center_offset)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--import-text", dest="import_text",
                   help="read 'label, f1, f2, ...' lines instead of generating")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("meta-train", help="episodic meta-training on the base classes")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSONL training log (default <out>.log.jsonl)")
    _add_common(p)
    _add_training_flags(p)
    p.set_defaults(func=cmd_meta_train)

    p = sub.add_parser("evaluate", help="four-regime top-k evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=("logreg",), help="evaluate a baseline instead of a checkpoint")
    p.add_argument("--hallucinate", metavar="POLICY", help="override the checkpoint's test-time policy")
    p.add_argument("--n-aug", dest="n_aug", type=int)
    p.add_argument("--out", required=True, help="output prefix for .csv and .txt")
    _add_common(p)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-prior", help="accuracies across the novel-class prior grid")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--hallucinate", metavar="POLICY")
    p.add_argument("--shot", type=int, default=1, help="novel training examples per class")
    p.add_argument("--classes", choices=("novel_test", "novel_val"), default="novel_test")
    p.add_argument("--out", required=True)
    _add_common(p)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_sweep_prior)

    p = sub.add_parser("ablate", help="train and compare augmentation policies")
    p.add_argument("--data", required=True)
    p.add_argument("--policies", default=",".join(POLICIES),
                   help=f"comma-separated subset of: {', '.join(POLICIES)}")
    p.add_argument("--out", required=True, help="output prefix for .csv and .txt")
    _add_common(p)
    _add_training_flags(p)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-hallucinations", help="write seeds and generated examples as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--hallucinate", metavar="POLICY")
    p.add_argument("--n-aug", dest="n_aug", type=int)
    p.add_argument("--shot", type=int, default=1, help="seed examples per class")
    p.add_argument("--classes", choices=("novel_test", "novel_val", "base"), default="novel_test")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_export_hallucinations)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("kernel backend: %s", _accel.BACKEND)
    if getattr(args, "hallucinate", None) is not None and args.hallucinate not in POLICIES:
        parser.error(f"unknown policy {args.hallucinate!r}; valid names: {', '.join(POLICIES)}")
    if args.command == "ablate":
        bad = [p for p in args.policies.split(",") if p.strip() and p.strip() not in POLICIES]
        if bad:
            parser.error(f"unknown policy {bad[0]!r}; valid names: {', '.join(POLICIES)}")
    try:
        return args.func(args)
    except (CliError, synthdata.DatasetFormatError, CheckpointError, E.MetaTrainError, ValueError) as exc:
        print(f"halluc-meta {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
