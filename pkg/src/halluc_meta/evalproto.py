"""Four-regime low-shot evaluation with a novel-class prior.

Regimes per trial: ``novel`` (novel queries, novel label space), ``base``
(base queries, base label space), ``all`` (balanced base+novel queries over
the joint label space, raw softmax) and ``all_prior`` (same, after mixing in
the cross-validated prior). Diagnostics ``novel_joint`` / ``base_joint``
split the ``all`` regime by query side.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .episodes import meta_test_classify
from .hallucination import AugmentationPolicy, GaussianStats
from .labeled import LabeledSet, SplitSpec
from .metalearners import LearnerConfig

REGIMES = ("novel", "base", "all", "all_prior")
DIAGNOSTICS = ("novel_joint", "base_joint")
DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(11))
DEFAULT_SHOTS = (1, 2, 5, 10, 20)


# ---------------------------------------------------------------------------
# prior mixing and top-k
# ---------------------------------------------------------------------------


def novel_mask(label_space, split: SplitSpec) -> np.ndarray:
    novel = set(split.novel_val_classes) | set(split.novel_test_classes)
    return np.array([int(k) in novel for k in label_space], dtype=bool)


def _side_softmax(scores, mask):
    s = np.where(mask, scores, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(s), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def apply_prior(scores, is_novel, mu: float) -> np.ndarray:
    """Within-side softmaxes weighted ``1 - mu`` (base) and ``mu`` (novel)."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"prior mu must lie in [0, 1], got {mu}")
    scores = np.asarray(scores, dtype=np.float64)
    is_novel = np.asarray(is_novel, dtype=bool)
    if is_novel.shape != scores.shape[-1:]:
        raise ValueError(f"mask of shape {is_novel.shape} for scores {scores.shape}")
    has_novel, has_base = is_novel.any(), (~is_novel).any()
    if mu > 0 and not has_novel:
        raise ValueError(f"mu={mu} puts mass on novel classes but none are in the label space")
    if mu < 1 and not has_base:
        raise ValueError(f"mu={mu} puts mass on base classes but none are in the label space")
    out = np.zeros_like(scores)
    if has_base:
        out = out + (1.0 - mu) * _side_softmax(scores, ~is_novel)
    if has_novel:
        out = out + mu * _side_softmax(scores, is_novel)
    return out


def topk_accuracy(preds, truths, label_space, k: int = 5) -> float:
    """Fraction of rows whose true class is among the k most probable.

    Ties rank the smaller class id first. A true class given probability
    exactly zero (the excluded side at mu = 0 or 1) is never a hit, even when
    fewer than k classes carry mass and id order would otherwise pull it in.
    """
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 2 or preds.shape[0] == 0:
        raise ValueError("topk_accuracy: empty prediction list")
    label_space = np.asarray(label_space, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if truths.shape[0] != preds.shape[0]:
        raise ValueError(f"{truths.shape[0]} truths for {preds.shape[0]} predictions")
    if not 1 <= k <= label_space.shape[0]:
        raise ValueError(f"k={k} outside 1..{label_space.shape[0]}")
    col = {int(c): i for i, c in enumerate(label_space)}
    truth_col = np.array([col[int(t)] for t in truths], dtype=np.int64)
    live = preds[np.arange(preds.shape[0]), truth_col] > 0
    hits = _accel.topk_hits(np.ascontiguousarray(preds[live]), truth_col[live], label_space, k)
    return hits / preds.shape[0]


# ---------------------------------------------------------------------------
# scorers: anything with log_probs(novel_train, base_train, queries, label_space, rng)
# ---------------------------------------------------------------------------


@dataclass
class MetaLearnerScorer:
    learner: LearnerConfig
    params: object
    policy: AugmentationPolicy
    stats: GaussianStats | None = None
    base_cap: int = 100

    def log_probs(self, novel_train, base_train, queries, label_space, rng):
        return meta_test_classify(self.params, self.learner, self.policy, novel_train, base_train,
                                  queries, label_space, rng, self.stats, self.base_cap)


class TrackedData:
    """Read-only view over a dataset that records every class it hands out."""

    def __init__(self, data: LabeledSet):
        self._data = data
        self.classes_read: set[int] = set()

    def class_rows(self, k):
        self.classes_read.add(int(k))
        return self._data.class_rows(k)

    def subset(self, rows):
        out = self._data.subset(rows)
        self.classes_read.update(int(k) for k in out.classes)
        return out


def _view(data):
    return data if isinstance(data, TrackedData) else TrackedData(data)


def _draw_base(view, split: SplitSpec, rng, base_queries: int, base_cap: int):
    tr, te = [], []
    for k in split.base_classes:
        rows = rng.permutation(view.class_rows(k))
        te.append(rows[:base_queries])
        tr.append(rows[base_queries:base_queries + base_cap])
    return view.subset(np.concatenate(tr)), view.subset(np.concatenate(te))


def _draw_novel(view, classes, n: int, rng):
    tr, te = [], []
    for k in classes:
        rows = rng.permutation(view.class_rows(k))
        if rows.shape[0] < n + 1:
            raise ValueError(f"class {k} has {rows.shape[0]} examples; need {n} train + >= 1 test")
        tr.append(rows[:n])
        te.append(rows[n:])
    return view.subset(np.concatenate(tr)), view.subset(np.concatenate(te))


def _balanced(novel_q: LabeledSet, base_q: LabeledSet, rng):
    m = min(len(novel_q), len(base_q))
    nq = novel_q.subset(np.sort(rng.choice(len(novel_q), m, replace=False)))
    bq = base_q.subset(np.sort(rng.choice(len(base_q), m, replace=False)))
    return nq, bq


def _joint_scores(scorer, novel_train, base_train, nq, bq, label_space, rng):
    queries = np.concatenate([nq.feature_values, bq.feature_values])
    truths = np.concatenate([nq.labels, bq.labels])
    return scorer.log_probs(novel_train, base_train, queries, label_space, rng), truths


@dataclass
class EvalSettings:
    topk: int = 5
    base_queries: int = 20
    base_cap: int = 100
    threads: int = 1


def _trial(scorer, split, view, n, seed, t, mu, s: EvalSettings) -> dict[str, float]:
    rng = np.random.default_rng([seed, n, t])
    base_train, base_q = _draw_base(view, split, rng, s.base_queries, s.base_cap)
    novel_train, novel_q = _draw_novel(view, split.novel_test_classes, n, rng)
    novel_space = np.array(split.novel_test_classes)
    base_space = np.array(split.base_classes)
    joint_space = np.array(sorted(split.base_classes + split.novel_test_classes))
    k = s.topk
    out = {}
    lp = scorer.log_probs(novel_train, base_train, novel_q.feature_values, novel_space, rng)
    out["novel"] = topk_accuracy(np.exp(lp), novel_q.labels, novel_space, min(k, len(novel_space)))
    lp = scorer.log_probs(novel_train, base_train, base_q.feature_values, base_space, rng)
    out["base"] = topk_accuracy(np.exp(lp), base_q.labels, base_space, min(k, len(base_space)))
    nq, bq = _balanced(novel_q, base_q, rng)
    lp, truths = _joint_scores(scorer, novel_train, base_train, nq, bq, joint_space, rng)
    kj = min(k, len(joint_space))
    probs = np.exp(lp)
    out["all"] = topk_accuracy(probs, truths, joint_space, kj)
    out["novel_joint"] = topk_accuracy(probs[: len(nq)], nq.labels, joint_space, kj)
    out["base_joint"] = topk_accuracy(probs[len(nq):], bq.labels, joint_space, kj)
    if np.isnan(mu):
        out["all_prior"] = out["all"]
    else:
        mixed = apply_prior(lp, novel_mask(joint_space, split), mu)
        out["all_prior"] = topk_accuracy(mixed, truths, joint_space, kj)
    return out


def sweep_prior(scorer, split: SplitSpec, data, n: int, grid=DEFAULT_GRID, seed: int = 0,
                trials: int = 5, classes: str = "novel_test", settings: EvalSettings = EvalSettings()):
    """Per-mu joint-space accuracies on novel queries, base queries and overall.

    Scores are computed once per trial; only the prior changes across the grid.
    """
    view = _view(data)
    novel_classes = getattr(split, f"{classes}_classes")
    joint_space = np.array(sorted(split.base_classes + novel_classes))
    kj = min(settings.topk, len(joint_space))
    mask = novel_mask(joint_space, split)
    grid = sorted(float(g) for g in grid)
    acc = {g: {"novel": [], "base": [], "overall": []} for g in grid}
    for t in range(trials):
        rng = np.random.default_rng([seed, n, t, 1])
        base_train, base_q = _draw_base(view, split, rng, settings.base_queries, settings.base_cap)
        novel_train, novel_q = _draw_novel(view, novel_classes, n, rng)
        nq, bq = _balanced(novel_q, base_q, rng)
        lp, truths = _joint_scores(scorer, novel_train, base_train, nq, bq, joint_space, rng)
        for g in grid:
            p = apply_prior(lp, mask, g)
            acc[g]["novel"].append(topk_accuracy(p[: len(nq)], nq.labels, joint_space, kj))
            acc[g]["base"].append(topk_accuracy(p[len(nq):], bq.labels, joint_space, kj))
            acc[g]["overall"].append(topk_accuracy(p, truths, joint_space, kj))
    return [{"mu": g, **{key: float(np.mean(v)) for key, v in acc[g].items()}} for g in grid]


def cross_validate_prior(scorer, split: SplitSpec, data, n: int, grid=DEFAULT_GRID, seed: int = 0,
                         trials: int = 5, settings: EvalSettings = EvalSettings()) -> float:
    """mu maximizing joint-space accuracy on the validation novel classes; ties -> smaller mu."""
    if len(grid) == 0:
        raise ValueError("empty mu grid")
    if not split.novel_val_classes:
        raise ValueError("cross-validation needs novel validation classes")
    if any(not 0.0 <= g <= 1.0 for g in grid):
        raise ValueError(f"grid values must lie in [0, 1]: {list(grid)}")
    rows = sweep_prior(scorer, split, data, n, grid, seed, trials, "novel_val", settings)
    overall = np.array([r["overall"] for r in rows])
    return rows[int(np.argmax(overall))]["mu"]


@dataclass
class EvalReport:
    trials: dict = field(default_factory=dict)  # (n, regime) -> list of accuracies
    mu: dict = field(default_factory=dict)  # n -> selected prior
    n_trials: int = 0
    header: dict = field(default_factory=dict)

    def mean(self, n, regime) -> float:
        return float(np.mean(self.trials[(n, regime)]))

    def std(self, n, regime) -> float:
        return float(np.std(self.trials[(n, regime)]))

    @property
    def shots(self) -> list[int]:
        return sorted({n for n, _ in self.trials})

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key, value in self.header.items():
            buf.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["regime", "n", "trial", "accuracy", "mu"])
        for n in self.shots:
            for regime in REGIMES + DIAGNOSTICS:
                for t, a in enumerate(self.trials[(n, regime)]):
                    w.writerow([regime, n, t, f"{a:.10f}", f"{self.mu[n]:.2f}"])
        return buf.getvalue()

    def to_table(self, label: str = "model") -> str:
        shots = self.shots
        cols = [("Novel", "novel"), ("All", "all"), ("All with prior", "all_prior")]
        width = 7
        head1 = " " * 16 + "".join(f"{name:<{width * len(shots) + 4}}" for name, _ in cols)
        head2 = f"{'Method':<16}" + "".join(
            "".join(f"{('n=' if i == 0 else '') + str(n):>{width}}" for i, n in enumerate(shots)) + "    "
            for _ in cols)
        row = f"{label:<16}" + "".join(
            "".join(f"{100 * self.mean(n, key):>{width}.1f}" for n in shots) + "    " for _, key in cols)
        base = "base-class top-k: " + ", ".join(f"n={n}: {100 * self.mean(n, 'base'):.1f}" for n in shots)
        joint = "novel queries in the joint space, no prior: " + ", ".join(
            f"n={n}: {100 * self.mean(n, 'novel_joint'):.1f}" for n in shots)
        mus = "selected mu: " + ", ".join(f"n={n}: {self.mu[n]:.1f}" for n in shots)
        return "\n".join([head1.rstrip(), head2.rstrip(), row.rstrip(), base, joint, mus]) + "\n"


def evaluate_regimes(
    scorer,
    split: SplitSpec,
    data,
    n: int,
    trials: int = 5,
    seed: int = 0,
    mu: float | None = None,
    grid=DEFAULT_GRID,
    settings: EvalSettings = EvalSettings(),
    report: EvalReport | None = None,
) -> EvalReport:
    """One shot count: all regimes over ``trials`` independent draws.

    ``mu=None`` cross-validates the prior on the validation classes; NaN
    disables it (``all_prior`` then repeats ``all``).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if mu is None:
        mu = cross_validate_prior(scorer, split, data, n, grid, seed, trials, settings)
    view = _view(data)

    def run(t):
        return _trial(scorer, split, view, n, seed, t, mu, settings)

    if settings.threads > 1:
        with ThreadPoolExecutor(settings.threads) as pool:
            results = list(pool.map(run, range(trials)))
    else:
        results = [run(t) for t in range(trials)]
    report = report or EvalReport()
    for regime in REGIMES + DIAGNOSTICS:
        report.trials[(n, regime)] = [r[regime] for r in results]
    report.mu[n] = float(mu)
    report.n_trials = trials
    return report


def evaluate(scorer, split, data, shots=DEFAULT_SHOTS, trials=5, seed=0, prior="cv",
             grid=DEFAULT_GRID, settings: EvalSettings = EvalSettings(), header=None) -> EvalReport:
    report = EvalReport(header=dict(header or {}))
    for n in shots:
        mu = None if prior == "cv" else (float("nan") if prior == "none" else float(prior))
        evaluate_regimes(scorer, split, data, n, trials, seed, mu, grid, settings, report)
    return report


# ---------------------------------------------------------------------------
# logistic-regression baseline
# ---------------------------------------------------------------------------


@dataclass
class LogRegConfig:
    l2: float = 1e-3
    iterations: int = 500
    standardize: bool = True


class LogisticRegression:
    """Multinomial logistic regression fit by Nesterov-accelerated gradient descent.

    Objective: mean cross-entropy + (l2 / 2) ||W||^2 (bias unpenalized), on
    features standardized with the training mean and std when enabled.
    """

    def __init__(self, cfg: LogRegConfig = LogRegConfig()):
        self.cfg = cfg

    def _prep(self, x):
        return (x - self.mu_) / self.sd_ if self.cfg.standardize else x

    def fit(self, x, y, label_space=None):
        x = np.asarray(x, dtype=np.float64)
        self.classes_ = np.unique(y) if label_space is None else np.asarray(label_space)
        col = {int(k): i for i, k in enumerate(self.classes_)}
        t = np.array([col[int(v)] for v in y])
        self.mu_ = x.mean(axis=0)
        sd = x.std(axis=0)
        self.sd_ = np.where(sd > 0, sd, 1.0)
        xs = self._prep(x)
        n, d = xs.shape
        k = len(self.classes_)
        onehot = np.zeros((n, k))
        onehot[np.arange(n), t] = 1.0
        xb = np.hstack([xs, np.ones((n, 1))])
        lip = 0.5 * np.linalg.norm(xb, 2) ** 2 / n + self.cfg.l2
        step = 1.0 / lip
        w = np.zeros((d + 1, k))
        v, prev = w.copy(), w.copy()
        reg = np.ones((d + 1, 1))
        reg[-1] = 0.0
        for it in range(self.cfg.iterations):
            z = xb @ v
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            grad = xb.T @ (p - onehot) / n + self.cfg.l2 * reg * v
            w = v - step * grad
            v = w + (it / (it + 3.0)) * (w - prev)
            prev = w
        if not np.all(np.isfinite(w)):
            raise FloatingPointError("logistic regression diverged (non-finite weights)")
        self.coef_ = w
        return self

    def scores(self, x) -> np.ndarray:
        xs = self._prep(np.asarray(x, dtype=np.float64))
        z = np.hstack([xs, np.ones((xs.shape[0], 1))]) @ self.coef_
        return z

    def log_probs(self, x) -> np.ndarray:
        z = self.scores(x)
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def predict(self, x) -> np.ndarray:
        return self.classes_[np.argmax(self.scores(x), axis=1)]


@dataclass
class LogRegScorer:
    """Refits on the label-space-restricted training set for every call."""

    cfg: LogRegConfig = field(default_factory=LogRegConfig)
    base_cap: int = 100

    def log_probs(self, novel_train, base_train, queries, label_space, rng):
        x, y = [], []
        novel = set(novel_train.classes.tolist())
        for k in label_space:
            src = novel_train if int(k) in novel else base_train
            rows = src.class_rows(k)
            if src is base_train:
                rows = rows[: self.base_cap]
            if rows.size == 0:
                raise ValueError(f"class {int(k)} in the label space has no training data")
            x.append(src.feature_values[rows])
            y.append(src.labels[rows])
        model = logreg_baseline(np.concatenate(x), np.concatenate(y), label_space, self.cfg)
        return model.log_probs(queries)


def logreg_baseline(x, y, label_space=None, cfg: LogRegConfig = LogRegConfig()) -> LogisticRegression:
    return LogisticRegression(cfg).fit(x, y, label_space)
