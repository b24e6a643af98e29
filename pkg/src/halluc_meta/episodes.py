"""Episodic meta-training and meta-test classification."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields, replace
from typing import IO

import numpy as np

from . import diffgraph as dg
from . import metalearners as ml
from .diffgraph import ParamStore
from .hallucination import AugmentationPolicy, GaussianStats, augment, estimate_gaussian_stats
from .labeled import LabeledSet, concat_sets
from .metalearners import LearnerConfig
from .nets import HallucinatorParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeConfig:
    m: int = 5
    n: int = 1
    q: int = 5
    iterations: int = 30000
    lr: float = 0.003
    momentum: float = 0.9
    seed: int = 0
    variable_shot: bool = False
    eval_every: int = 250
    patience: int = 2000
    val_episodes: int = 30

    def validate(self, n_classes: int | None = None):
        if self.m < 2:
            raise ValueError(f"m must be >= 2, got {self.m}")
        if self.n < 1 or self.q < 1:
            raise ValueError(f"n and q must be >= 1, got n={self.n}, q={self.q}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if n_classes is not None and self.m > n_classes:
            raise ValueError(f"m={self.m} exceeds the {n_classes} available classes")


@dataclass
class Episode:
    train: LabeledSet
    test: LabeledSet
    label_space: np.ndarray


@dataclass
class TrainLog:
    iteration: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    val: list = field(default_factory=list)  # (iteration, mean val loss)
    stopped_at: int | None = None
    best_iteration: int | None = None


class MetaTrainError(RuntimeError):
    pass


def _class_index(data: LabeledSet) -> dict[int, np.ndarray]:
    return {int(k): data.class_rows(k) for k in data.classes}


def sample_episode(meta_set: LabeledSet, cfg: EpisodeConfig, rng: np.random.Generator,
                   _index: dict | None = None) -> Episode:
    """m classes without replacement, then n train + q test rows per class."""
    index = _index if _index is not None else _class_index(meta_set)
    classes = np.array(sorted(index))
    if len(classes) < cfg.m:
        raise ValueError(f"episode needs {cfg.m} classes, meta set has {len(classes)}")
    n = int(rng.integers(1, cfg.n + 1)) if cfg.variable_shot else cfg.n
    short = {int(k): len(index[int(k)]) for k in classes if len(index[int(k)]) < n + cfg.q}
    if short:
        raise ValueError(f"classes with fewer than n+q={n + cfg.q} examples: {short}")
    chosen = np.sort(rng.choice(classes, size=cfg.m, replace=False))
    tr, te = [], []
    for k in chosen:
        rows = index[int(k)]
        pick = rows[rng.choice(rows.shape[0], size=n + cfg.q, replace=False)]
        tr.append(pick[:n])
        te.append(pick[n:])
    return Episode(meta_set.subset(np.concatenate(tr)), meta_set.subset(np.concatenate(te)), chosen)


def make_hallucinator(learner: LearnerConfig, policy: AugmentationPolicy) -> HallucinatorParams | None:
    if not policy.uses_generator:
        return None
    d = learner.feature_dim
    return HallucinatorParams(d, policy.noise_dim or d, d)


def init_model(learner: LearnerConfig, policy: AugmentationPolicy, seed: int):
    """Parameters for a learner plus, for G policies, its hallucinator."""
    hp = make_hallucinator(learner, policy)
    params = ml.init_params(learner, seed, hp, identity_G=policy.kind != "untrained-g")
    if policy.kind == "untrained-g":
        params.set_trainable("G.", False)
    return params, hp


def episode_loss(learner, params, policy, ep: Episode, rng, hp=None, stats=None):
    """Summed cross-entropy over the episode's test rows and the test accuracy."""
    aug = augment(policy, ep.train, rng, hp=hp, params=params, stats=stats)
    logp = ml.log_probs(learner, params, aug, ep.test.features, ep.label_space)
    cols = ml.truth_columns(ep.test.labels, ep.label_space)
    loss = ml.nll_from_log_probs(logp, cols)
    acc = float(np.mean(np.argmax(logp.value, axis=1) == cols))
    return loss, acc


def _param_norms(params: ParamStore) -> dict[str, float]:
    return {k: float(np.linalg.norm(v.value)) for k, v in params.items()}


def meta_train(
    meta_set: LabeledSet,
    learner: LearnerConfig,
    policy: AugmentationPolicy,
    cfg: EpisodeConfig,
    params: ParamStore | None = None,
    stats: GaussianStats | None = None,
    log_stream: IO[str] | None = None,
) -> tuple[ParamStore, TrainLog]:
    """Sample episode, augment, classify, back-propagate into h and G, step."""
    cfg.validate(len(meta_set.classes))
    hp = make_hallucinator(learner, policy)
    if params is None:
        params, hp = init_model(learner, policy, cfg.seed)
    if policy.kind == "gaussian" and stats is None:
        stats = estimate_gaussian_stats(meta_set, shared=policy.covariance == "shared")
    ss = np.random.SeedSequence(cfg.seed)
    ep_seq, aug_seq, val_seq = ss.spawn(3)
    ep_rng, aug_rng = np.random.default_rng(ep_seq), np.random.default_rng(aug_seq)
    index = _class_index(meta_set)
    train_log = TrainLog()

    use_val = cfg.patience > 0 and cfg.eval_every > 0 and cfg.val_episodes > 0
    if use_val and cfg.iterations > 0:
        vrng = np.random.default_rng(val_seq)
        val_eps = [sample_episode(meta_set, cfg, vrng, index) for _ in range(cfg.val_episodes)]
        val_seed = int(vrng.integers(2**31))
    best_loss, best_values, best_iter = np.inf, None, 0

    for it in range(cfg.iterations):
        ep = sample_episode(meta_set, cfg, ep_rng, index)
        loss, acc = episode_loss(learner, params, policy, ep, aug_rng, hp, stats)
        value = float(loss.value)
        if not np.isfinite(value):
            raise MetaTrainError(f"non-finite loss {value} at iteration {it}; "
                                 f"parameter norms {_param_norms(params)}")
        # the step follows the per-query mean so lr does not scale with m*q
        dg.backward(dg.scale(loss, 1.0 / len(ep.test)), params)
        norms = params.grad_norms()
        dg.sgd_step(params, cfg.lr, cfg.momentum)
        mean_loss = value / len(ep.test)
        train_log.iteration.append(it)
        train_log.loss.append(mean_loss)
        train_log.accuracy.append(acc)
        train_log.grad_norms.append(norms)
        if log_stream is not None:
            log_stream.write(json.dumps({"iteration": it, "loss": mean_loss, "accuracy": acc}) + "\n")

        if use_val and (it + 1) % cfg.eval_every == 0:
            vr = np.random.default_rng(val_seed)
            vl = np.mean([float(episode_loss(learner, params, policy, e, vr, hp, stats)[0].value)
                          / len(e.test) for e in val_eps])
            train_log.val.append((it + 1, float(vl)))
            if vl < best_loss:
                best_loss, best_values, best_iter = vl, params.values(), it + 1
            elif it + 1 - best_iter >= cfg.patience:
                train_log.stopped_at = it + 1
                log.info("early stop at %d (best %d, val loss %.4f)", it + 1, best_iter, best_loss)
                break

    if best_values is not None:
        last_val = train_log.val[-1][1] if train_log.val else np.inf
        if best_loss < last_val or train_log.stopped_at is not None:
            params.load_values(best_values)
            params.velocity.clear()
        train_log.best_iteration = best_iter
    return params, train_log


def meta_test_classify(
    params: ParamStore,
    learner: LearnerConfig,
    policy: AugmentationPolicy,
    novel_train: LabeledSet,
    base_train: LabeledSet,
    queries,
    label_space,
    rng: np.random.Generator,
    stats: GaussianStats | None = None,
    base_cap: int = 100,
) -> np.ndarray:
    """Log-probabilities (Q, K) over ``label_space`` with a frozen hallucinator."""
    label_space = np.asarray(label_space, dtype=np.int64)
    novel_classes = set(novel_train.classes.tolist())
    base_classes = set(base_train.classes.tolist())
    parts = []
    for k in label_space:
        k = int(k)
        if k in novel_classes:
            parts.append(novel_train.subset(novel_train.class_rows(k)))
        elif k in base_classes:
            parts.append(base_train.subset(base_train.class_rows(k)[:base_cap]))
        else:
            raise ValueError(f"class {k} in the label space has no training data")
    train = concat_sets(parts)
    hp = make_hallucinator(learner, policy)
    aug = augment(policy, train, rng, hp=hp, params=params, stats=stats)
    return ml.log_probs(learner, params, aug, np.asarray(queries, dtype=np.float64), label_space).value


# ---------------------------------------------------------------------------
# key = value config files
# ---------------------------------------------------------------------------

CONFIG_KEYS = {
    "learner": "meta-learner: pn, mn or pmn",
    "hallucinate": "augmentation policy name (see `ablate --help`)",
    "m": "classes per training episode",
    "n": "real training examples per class in an episode (max if variable_shot)",
    "q": "test examples per class in an episode",
    "n_aug": "examples per class after augmentation",
    "iterations": "maximum meta-training iterations",
    "lr": "SGD learning rate",
    "momentum": "SGD momentum in [0, 1)",
    "seed": "master random seed",
    "variable_shot": "draw n uniformly from 1..n per episode (true/false)",
    "eval_every": "iterations between held-out episode evaluations",
    "patience": "stop after this many iterations without held-out improvement (0 disables)",
    "val_episodes": "number of held-out episodes",
    "embed_dim": "embedding width (default: feature dim)",
    "att_steps": "attention LSTM steps",
    "dropout_rate": "dropout ablation rate",
    "covariance": "gaussian ablation covariance: shared or per-class",
    "shots": "comma-separated shot counts for evaluation",
    "trials": "evaluation trials per shot count",
    "prior": "none, fixed:<mu> or cv",
    "base_cap": "max training examples per base class at meta-test",
    "base_queries": "held-out base examples per class used as queries",
    "topk": "k of top-k accuracy",
}


def read_config(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value
    return out


def episode_config_from(values: dict, base: EpisodeConfig = EpisodeConfig()) -> EpisodeConfig:
    kw = {}
    for f in fields(EpisodeConfig):
        if f.name in values and values[f.name] is not None:
            raw = values[f.name]
            if f.type in ("bool", bool) or isinstance(getattr(base, f.name), bool):
                kw[f.name] = raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes")
            else:
                kw[f.name] = type(getattr(base, f.name))(raw)
    return replace(base, **kw)
