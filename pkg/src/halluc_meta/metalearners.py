"""Prototypical, matching and prototype-matching classifiers.

Every classifier maps ``(params, train set, query rows, label space)`` to a
(Q, K) graph node of log-probabilities whose columns follow the explicit,
ordered label space. ``*_classify`` return probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffgraph as dg
from .diffgraph import Node, ParamStore
from .labeled import LabeledSet
from .nets import HallucinatorParams, LstmCellParams, MlpSpec, attlstm_embed, bilstm_embed, init_mlp, mlp_forward

LEARNERS = ("pn", "mn", "pmn")


@dataclass(frozen=True)
class LearnerConfig:
    kind: str
    feature_dim: int
    embed_dim: int | None = None
    phi: str = "mlp"  # "mlp" or "identity"
    phi_hidden: int | None = None
    att_steps: int = 2

    def __post_init__(self):
        if self.kind not in LEARNERS:
            raise ValueError(f"unknown learner {self.kind!r}; expected one of {LEARNERS}")
        if self.phi not in ("mlp", "identity"):
            raise ValueError(f"unknown embedder {self.phi!r}")
        if self.phi == "identity" and self.embed_dim not in (None, self.feature_dim):
            raise ValueError("identity embedder keeps the feature dimension")

    @property
    def out_dim(self) -> int:
        if self.phi == "identity":
            return self.feature_dim
        return self.embed_dim or self.feature_dim

    @property
    def phi_spec(self) -> MlpSpec:
        hidden = self.phi_hidden or self.out_dim
        return MlpSpec((self.feature_dim, hidden, self.out_dim), final_relu=False)

    @property
    def cells(self) -> tuple[LstmCellParams, LstmCellParams, LstmCellParams]:
        h = self.out_dim
        return (
            LstmCellParams("g_fwd", h, h, h),
            LstmCellParams("g_bwd", h, h, h),
            LstmCellParams("f_att", h, h, 2 * h),
        )

    def to_dict(self) -> dict:
        return dict(kind=self.kind, feature_dim=self.feature_dim, embed_dim=self.embed_dim,
                    phi=self.phi, phi_hidden=self.phi_hidden, att_steps=self.att_steps)


def init_params(
    cfg: LearnerConfig,
    seed: int = 0,
    hallucinator: HallucinatorParams | None = None,
    identity_G: bool = True,
) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore(seed)
    if cfg.phi == "mlp":
        init_mlp(store, "phi", cfg.phi_spec, rng)
    if cfg.kind in ("mn", "pmn"):
        for cell in cfg.cells:
            cell.init(store, rng)
    if hallucinator is not None:
        hallucinator.init(store, rng, identity=identity_G)
    return store


def embed(cfg: LearnerConfig, params: ParamStore, x) -> Node:
    x = dg.as_node(x)
    if cfg.phi == "identity":
        return x
    return mlp_forward(cfg.phi_spec, params, x, prefix="phi")


def _label_index(train: LabeledSet, label_space) -> tuple[np.ndarray, np.ndarray]:
    """Ordered label space and the column of every train row."""
    space = train.classes if label_space is None else np.asarray(label_space, dtype=np.int64)
    if space.size == 0:
        raise ValueError("empty label space")
    present = set(train.classes.tolist())
    missing = [int(k) for k in space if int(k) not in present]
    if missing:
        raise ValueError(f"classes {missing} have no training examples")
    col = {int(k): i for i, k in enumerate(space)}
    rows_ok = np.isin(train.labels, space)
    if not rows_ok.all():
        raise ValueError("train set has rows outside the label space")
    return space, np.array([col[int(y)] for y in train.labels], dtype=np.int64)


def class_mean_matrix(cols: np.ndarray, k: int) -> np.ndarray:
    """(K, N) matrix whose product with row embeddings gives class means."""
    a = np.zeros((k, cols.shape[0]))
    a[cols, np.arange(cols.shape[0])] = 1.0
    return a / a.sum(axis=1, keepdims=True)


def prototypes(cfg: LearnerConfig, params: ParamStore, train: LabeledSet, label_space=None) -> Node:
    space, cols = _label_index(train, label_space)
    emb = embed(cfg, params, train.features)
    return dg.matmul(dg.constant(class_mean_matrix(cols, len(space))), emb)


def pn_log_probs(cfg, params, train: LabeledSet, queries, label_space=None) -> Node:
    protos = prototypes(cfg, params, train, label_space)
    d = dg.pairwise_sqdist(embed(cfg, params, queries), protos)
    return dg.log_softmax(dg.scale(d, -1.0))


def _contextual_train(cfg, params, train: LabeledSet, label_space):
    space, _ = _label_index(train, label_space)
    order = train.canonical_order()
    ordered = train.subset(order)
    _, cols = _label_index(ordered, space)
    fwd, bwd, _ = cfg.cells
    g = bilstm_embed(fwd, bwd, params, embed(cfg, params, ordered.features))
    return space, cols, g


def mn_log_probs(cfg, params, train: LabeledSet, queries, label_space=None, attention_log=None) -> Node:
    space, cols, g = _contextual_train(cfg, params, train, label_space)
    f = attlstm_embed(cfg.cells[2], params, embed(cfg, params, queries), g,
                      cfg.att_steps, attention_log)
    w = dg.softmax(dg.scale(dg.pairwise_cosine_distance(f, g), -1.0))
    onehot = np.zeros((cols.shape[0], len(space)))
    onehot[np.arange(cols.shape[0]), cols] = 1.0
    return dg.log(dg.matmul(w, dg.constant(onehot)))


def pmn_log_probs(cfg, params, train: LabeledSet, queries, label_space=None, attention_log=None) -> Node:
    space, cols, g = _contextual_train(cfg, params, train, label_space)
    nu = dg.matmul(dg.constant(class_mean_matrix(cols, len(space))), g)
    f = attlstm_embed(cfg.cells[2], params, embed(cfg, params, queries), nu,
                      cfg.att_steps, attention_log)
    return dg.log_softmax(dg.scale(dg.pairwise_cosine_distance(f, nu), -1.0))


_LOG_PROBS = {"pn": pn_log_probs, "mn": mn_log_probs, "pmn": pmn_log_probs}


def log_probs(cfg: LearnerConfig, params, train, queries, label_space=None) -> Node:
    return _LOG_PROBS[cfg.kind](cfg, params, train, queries, label_space)


def pn_classify(cfg, params, train, queries, label_space=None) -> Node:
    return dg.exp(pn_log_probs(cfg, params, train, queries, label_space))


def mn_classify(cfg, params, train, queries, label_space=None) -> Node:
    return dg.exp(mn_log_probs(cfg, params, train, queries, label_space))


def pmn_classify(cfg, params, train, queries, label_space=None) -> Node:
    return dg.exp(pmn_log_probs(cfg, params, train, queries, label_space))


def classify(cfg, params, train, queries, label_space=None) -> Node:
    return dg.exp(log_probs(cfg, params, train, queries, label_space))


def truth_columns(truths, label_space) -> np.ndarray:
    col = {int(k): i for i, k in enumerate(label_space)}
    try:
        return np.array([col[int(t)] for t in np.atleast_1d(truths)], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"class {exc.args[0]} is outside the label space") from None


def cross_entropy_loss(pred, truth, label_space=None) -> Node:
    """Summed ``-log pred[truth]`` over rows of a (K,) or (Q, K) probability node."""
    pred = dg.as_node(pred)
    p2 = dg.reshape(pred, (1, -1)) if pred.value.ndim == 1 else pred
    k = p2.shape[1]
    space = np.arange(k) if label_space is None else np.asarray(label_space)
    if len(space) != k:
        raise ValueError(f"label space of size {len(space)} vs {k} columns")
    cols = truth_columns(truth, space)
    if cols.shape[0] != p2.shape[0]:
        raise ValueError(f"{cols.shape[0]} truths for {p2.shape[0]} predictions")
    return dg.scale(dg.sum(dg.log(dg.pick(p2, np.arange(p2.shape[0]), cols))), -1.0)


def nll_from_log_probs(logp: Node, truth_cols: np.ndarray) -> Node:
    rows = np.arange(logp.shape[0])
    return dg.scale(dg.sum(dg.pick(logp, rows, truth_cols)), -1.0)
