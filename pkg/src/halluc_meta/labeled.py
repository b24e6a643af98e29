"""Labeled feature sets shared by every module."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffgraph import Node


@dataclass
class LabeledSet:
    """Rows of non-negative features with integer class labels.

    ``features`` is normally an ndarray; inside a training step it may be a
    graph :class:`Node` so that generated rows stay differentiable.
    ``ids`` identify source examples (synthetic rows get -1) and
    ``synthetic`` flags generated rows.
    """

    features: np.ndarray | Node
    labels: np.ndarray
    ids: np.ndarray = field(default=None)
    synthetic: np.ndarray = field(default=None)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        n = self.labels.shape[0]
        if not isinstance(self.features, Node):
            self.features = np.asarray(self.features, dtype=np.float64).reshape(n, -1)
        if self.feature_values.shape[0] != n:
            raise ValueError(f"{self.feature_values.shape[0]} feature rows vs {n} labels")
        self.ids = np.arange(n, dtype=np.int64) if self.ids is None else np.asarray(self.ids, np.int64)
        if self.synthetic is None:
            self.synthetic = np.zeros(n, dtype=bool)
        else:
            self.synthetic = np.asarray(self.synthetic, dtype=bool)

    @property
    def feature_values(self) -> np.ndarray:
        return self.features.value if isinstance(self.features, Node) else self.features

    @property
    def dim(self) -> int:
        return self.feature_values.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def check_nonnegative(self):
        vals = self.feature_values
        if np.any(vals < 0):
            row = int(np.argwhere(vals < 0)[0, 0])
            raise ValueError(f"negative feature value in row {row}")

    def class_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    def counts(self) -> dict[int, int]:
        ks, cs = np.unique(self.labels, return_counts=True)
        return {int(k): int(c) for k, c in zip(ks, cs)}

    def subset(self, rows) -> "LabeledSet":
        rows = np.asarray(rows, dtype=np.int64)
        if isinstance(self.features, Node):
            from . import diffgraph as dg

            feats = dg.select_rows(self.features, rows)
        else:
            feats = self.features[rows]
        return LabeledSet(feats, self.labels[rows], self.ids[rows], self.synthetic[rows])

    def subset_classes(self, classes) -> "LabeledSet":
        keep = np.isin(self.labels, np.asarray(list(classes), dtype=np.int64))
        return self.subset(np.flatnonzero(keep))

    def canonical_order(self) -> np.ndarray:
        """Row order sorted by (class id, position); stable."""
        return np.argsort(self.labels, kind="stable")

    def real(self) -> "LabeledSet":
        return self.subset(np.flatnonzero(~self.synthetic))


def concat_sets(parts: list[LabeledSet]) -> LabeledSet:
    if any(isinstance(p.features, Node) for p in parts):
        from . import diffgraph as dg

        feats = dg.concat([dg.as_node(p.features) for p in parts], axis=0)
    else:
        feats = np.concatenate([p.features for p in parts], axis=0)
    return LabeledSet(
        feats,
        np.concatenate([p.labels for p in parts]),
        np.concatenate([p.ids for p in parts]),
        np.concatenate([p.synthetic for p in parts]),
    )


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint class sets for meta-training, prior cross-validation and testing."""

    base_classes: tuple
    novel_val_classes: tuple
    novel_test_classes: tuple

    def __post_init__(self):
        sets = [tuple(sorted(int(k) for k in s)) for s in
                (self.base_classes, self.novel_val_classes, self.novel_test_classes)]
        for name, s in zip(("base_classes", "novel_val_classes", "novel_test_classes"), sets):
            object.__setattr__(self, name, s)
        a, b, c = (set(s) for s in sets)
        if a & b or a & c or b & c:
            raise ValueError(f"split class sets overlap: {sorted((a & b) | (a & c) | (b & c))}")

    def role(self, k: int) -> str | None:
        for name in ("base", "novel_val", "novel_test"):
            if int(k) in getattr(self, f"{name}_classes"):
                return name
        return None

    @property
    def all_classes(self) -> tuple:
        return tuple(sorted(self.base_classes + self.novel_val_classes + self.novel_test_classes))
