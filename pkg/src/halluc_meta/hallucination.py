"""Training-set augmentation with generated examples.

One entry point, :func:`augment`, covers the learned hallucinator and the
jittering baselines (Gaussian noise, dropout, weighted averages, a frozen
random G, G with fixed zero noise).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import diffgraph as dg
from .diffgraph import ParamStore
from .labeled import LabeledSet
from .nets import HallucinatorParams, hallucinate

KINDS = ("learned-g", "gaussian", "dropout", "weighted", "det-g", "untrained-g", "none")
G_KINDS = ("learned-g", "det-g", "untrained-g")


@dataclass(frozen=True)
class AugmentationPolicy:
    kind: str = "none"
    n_aug: int = 20
    noise_dim: int | None = None
    covariance: str = "shared"  # or "per-class"
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation {self.kind!r}; expected one of {KINDS}")
        if self.n_aug < 1:
            raise ValueError(f"n_aug must be >= 1, got {self.n_aug}")
        if self.covariance not in ("shared", "per-class"):
            raise ValueError(f"covariance must be 'shared' or 'per-class', got {self.covariance!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def uses_generator(self) -> bool:
        return self.kind in G_KINDS


@dataclass
class GaussianStats:
    mean: np.ndarray
    var: np.ndarray
    per_class: dict = field(default_factory=dict)  # class -> (mean, var)

    def variance_for(self, k: int, shared: bool) -> np.ndarray:
        if shared or k not in self.per_class:
            return self.var
        return self.per_class[k][1]


def estimate_gaussian_stats(base: LabeledSet, shared: bool = True) -> GaussianStats:
    """Per-dimension mean and unbiased variance of base features."""
    x = base.feature_values
    if x.shape[0] < 2:
        raise ValueError(f"need at least 2 base examples for a variance, got {x.shape[0]}")
    stats = GaussianStats(x.mean(axis=0), x.var(axis=0, ddof=1))
    if not shared:
        for k in base.classes:
            rows = x[base.labels == k]
            if rows.shape[0] < 2:
                raise ValueError(f"class {int(k)} has {rows.shape[0]} example(s); per-class variance needs 2")
            stats.per_class[int(k)] = (rows.mean(axis=0), rows.var(axis=0, ddof=1))
    return stats


# ---------------------------------------------------------------------------
# batched generators; each returns (n, d) rows
# ---------------------------------------------------------------------------


def _gaussian(seeds, var, rng):
    return np.maximum(seeds + rng.standard_normal(seeds.shape) * np.sqrt(var), 0.0)


def _dropout(seeds, rate, rng):
    keep = rng.random(seeds.shape) >= rate
    return np.where(keep, seeds / (1.0 - rate), 0.0)


def _weighted(x1, x2, rng):
    lam = rng.random((x1.shape[0], 1))
    return lam * x1 + (1.0 - lam) * x2


def ablation_generate(
    kind: str,
    seed_x,
    rng: np.random.Generator,
    *,
    stats: GaussianStats | None = None,
    dropout_rate: float = 0.5,
    other_x=None,
    hp: HallucinatorParams | None = None,
    params: ParamStore | None = None,
) -> np.ndarray:
    """Generate a single example from one seed with a non-learned-G strategy."""
    seed = np.asarray(seed_x, dtype=np.float64).reshape(1, -1)
    if kind == "gaussian":
        if stats is None:
            raise ValueError("gaussian generation needs GaussianStats")
        return _gaussian(seed, stats.var, rng)[0]
    if kind == "dropout":
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {dropout_rate}")
        return _dropout(seed, dropout_rate, rng)[0]
    if kind == "weighted":
        other = seed if other_x is None else np.asarray(other_x, dtype=np.float64).reshape(1, -1)
        return _weighted(seed, other, rng)[0]
    if kind in ("det-g", "untrained-g", "learned-g"):
        if hp is None or params is None:
            raise ValueError(f"{kind} generation needs hallucinator parameters")
        z = np.zeros((1, hp.noise_dim)) if kind == "det-g" else rng.standard_normal((1, hp.noise_dim))
        return hallucinate(hp, params, seed, z).value[0]
    raise ValueError(f"unknown ablation kind {kind!r}")


def augment(
    policy: AugmentationPolicy,
    train: LabeledSet,
    rng: np.random.Generator,
    *,
    hp: HallucinatorParams | None = None,
    params: ParamStore | None = None,
    stats: GaussianStats | None = None,
    classes=None,
) -> LabeledSet:
    """Top every class up to ``policy.n_aug`` examples.

    ``classes``, when given, lists the classes that must be present; one
    without any real row is an error since there is nothing to seed from.

    Classes already at ``n_aug`` or more are left alone; if nothing needs
    generating the input is returned as is. Otherwise output rows are grouped
    by ascending class, real rows first (unchanged), then generated ones. Under a G policy the
    generated rows are graph nodes depending on ``params``.
    """
    counts = train.counts()
    wanted = counts if classes is None else [int(k) for k in classes]
    empty = [k for k in wanted if counts.get(k, 0) == 0]
    if empty:
        raise ValueError(f"classes {empty} have no real examples")
    if policy.kind == "none" or all(c >= policy.n_aug for c in counts.values()):
        return train

    feats = train.feature_values
    seed_rows, other_rows, gen_labels = [], [], []
    for k in sorted(counts):
        rows = train.class_rows(k)
        n_gen = policy.n_aug - rows.shape[0]
        if n_gen <= 0:
            continue
        pick = rng.integers(0, rows.shape[0], size=n_gen)
        seed_rows.append(rows[pick])
        if policy.kind == "weighted":
            if rows.shape[0] == 1:
                other_rows.append(rows[pick])
            else:
                shift = rng.integers(1, rows.shape[0], size=n_gen)
                other_rows.append(rows[(pick + shift) % rows.shape[0]])
        gen_labels.append(np.full(n_gen, k, dtype=np.int64))
    seed_rows = np.concatenate(seed_rows)
    gen_labels = np.concatenate(gen_labels)
    seeds = feats[seed_rows]

    if policy.uses_generator:
        if hp is None or params is None:
            raise ValueError(f"{policy.kind} augmentation needs hallucinator parameters")
        if policy.kind == "det-g":
            z = np.zeros((seeds.shape[0], hp.noise_dim))
        else:
            z = rng.standard_normal((seeds.shape[0], hp.noise_dim))
        gen = hallucinate(hp, params, dg.select_rows(dg.as_node(train.features), seed_rows), z)
    elif policy.kind == "gaussian":
        if stats is None:
            raise ValueError("gaussian augmentation needs GaussianStats")
        shared = policy.covariance == "shared"
        var = np.stack([stats.variance_for(int(k), shared) for k in gen_labels])
        gen = _gaussian(seeds, var, rng)
    elif policy.kind == "dropout":
        gen = _dropout(seeds, policy.dropout_rate, rng)
    else:  # weighted
        gen = _weighted(seeds, feats[np.concatenate(other_rows)], rng)

    all_labels = np.concatenate([train.labels, gen_labels])
    order = np.argsort(all_labels, kind="stable")
    if isinstance(gen, dg.Node) or isinstance(train.features, dg.Node):
        stacked = dg.concat([dg.as_node(train.features), dg.as_node(gen)], axis=0)
        features = dg.select_rows(stacked, order)
    else:
        features = np.concatenate([feats, gen], axis=0)[order]
    ids = np.concatenate([train.ids, np.full(gen_labels.shape[0], -1, dtype=np.int64)])[order]
    synth = np.concatenate([train.synthetic, np.ones(gen_labels.shape[0], dtype=bool)])[order]
    return LabeledSet(features, all_labels[order], ids, synth)


def export_hallucinations(path, augmented: LabeledSet, header: dict | None = None):
    """Delimited text: class id, synthetic flag, feature components.

    ``header`` entries are written first as ``# key: json`` comment lines.
    """
    vals = augmented.feature_values
    with open(path, "w", newline="") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_id", "synthetic"] + [f"f{i}" for i in range(vals.shape[1])])
        for y, s, row in zip(augmented.labels, augmented.synthetic, vals):
            w.writerow([int(y), int(s)] + [repr(float(v)) for v in row])
