"""Parameterized function families: MLP embedder, LSTM set encoders, hallucinator."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffgraph as dg
from .diffgraph import Node, ParamStore, ShapeError

# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpSpec:
    """``layer_dims = [in, h1, ..., out]``; ReLU between layers."""

    layer_dims: tuple
    final_relu: bool = False

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"MLP needs at least one layer of positive widths, got {dims}")
        object.__setattr__(self, "layer_dims", dims)

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1


def uniform_init(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(in_dim)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


def init_mlp(store: ParamStore, prefix: str, spec: MlpSpec, rng: np.random.Generator):
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.layer_dims[i], spec.layer_dims[i + 1]
        store.add(f"{prefix}.W{i}", uniform_init(rng, fan_out, fan_in))
        store.add(f"{prefix}.b{i}", np.zeros(fan_out))


def mlp_forward(spec: MlpSpec, params: ParamStore, x: Node, prefix: str = "phi") -> Node:
    x = dg.as_node(x)
    if x.value.ndim != 2 or x.shape[1] != spec.layer_dims[0]:
        raise ShapeError(f"{prefix}: input width {x.shape} != {spec.layer_dims[0]}")
    h = x
    for i in range(spec.n_layers):
        h = dg.linear(h, params[f"{prefix}.W{i}"], params[f"{prefix}.b{i}"])
        if i < spec.n_layers - 1 or spec.final_relu:
            h = dg.relu(h)
    return h


# ---------------------------------------------------------------------------
# LSTM cells
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LstmCellParams:
    """Names one LSTM cell's entries in a ParamStore.

    ``prefix.Wx`` (4H, input_dim), ``prefix.Wh`` (4H, recurrent_dim) and
    ``prefix.b`` (4H,), gates ordered input, forget, output, candidate.
    """

    prefix: str
    input_dim: int
    hidden_dim: int
    recurrent_dim: int

    def init(self, store: ParamStore, rng: np.random.Generator):
        h4 = 4 * self.hidden_dim
        store.add(f"{self.prefix}.Wx", uniform_init(rng, h4, self.input_dim))
        store.add(f"{self.prefix}.Wh", uniform_init(rng, h4, self.recurrent_dim))
        b = np.zeros(h4)
        b[self.hidden_dim : 2 * self.hidden_dim] = 1.0
        store.add(f"{self.prefix}.b", b)

    def step(self, params: ParamStore, x_pre: Node, state: Node, c: Node):
        """One cell update; ``x_pre`` is the input projection incl. bias."""
        pre = dg.add(x_pre, dg.linear(state, params[f"{self.prefix}.Wh"]))
        hc = dg.lstm_cell(pre, c)
        hd = self.hidden_dim
        return dg.slice_cols(hc, 0, hd), dg.slice_cols(hc, hd, 2 * hd)


def bilstm_embed(fwd: LstmCellParams, bwd: LstmCellParams, params: ParamStore, inputs: Node) -> Node:
    """Contextual embedding of an ordered set of rows: h_fwd + h_bwd + input."""
    inputs = dg.as_node(inputs)
    if inputs.value.ndim != 2 or inputs.shape[0] == 0:
        raise ValueError("bilstm_embed: need a non-empty (N, dim) input")
    n, dim = inputs.shape
    if fwd.hidden_dim != dim or bwd.hidden_dim != dim:
        raise ShapeError(f"bilstm_embed: hidden dims must equal input dim {dim}")
    outs = []
    for cell, order in ((fwd, range(n)), (bwd, range(n - 1, -1, -1))):
        x_pre = dg.linear(inputs, params[f"{cell.prefix}.Wx"], params[f"{cell.prefix}.b"])
        h = dg.constant(np.zeros((1, dim)))
        c = dg.constant(np.zeros((1, dim)))
        hs = [None] * n
        for t in order:
            h, c = cell.step(params, dg.select_rows(x_pre, [t]), h, c)
            hs[t] = h
        outs.append(dg.concat(hs, axis=0))
    return dg.add(dg.add(outs[0], outs[1]), inputs)


def attlstm_embed(
    cell: LstmCellParams,
    params: ParamStore,
    query: Node,
    memory: Node,
    steps: int = 2,
    attention_log: list | None = None,
) -> Node:
    """Read-attention unrolling over ``memory`` rows for a batch of query rows.

    The cell's recurrent input is ``[h; r]``; after each step ``h`` gets the
    query added back, attends over the memory with dot-product scores and
    reads ``r``. Attention matrices are appended to ``attention_log`` if given.
    """
    query, memory = dg.as_node(query), dg.as_node(memory)
    if memory.value.ndim != 2 or memory.shape[0] == 0:
        raise ValueError("attlstm_embed: memory must be non-empty")
    if steps < 1:
        raise ValueError(f"attlstm_embed: steps must be >= 1, got {steps}")
    q, dim = query.shape
    if memory.shape[1] != dim or cell.hidden_dim != dim or cell.recurrent_dim != 2 * dim:
        raise ShapeError(f"attlstm_embed: query {query.shape}, memory {memory.shape}")
    x_pre = dg.linear(query, params[f"{cell.prefix}.Wx"], params[f"{cell.prefix}.b"])
    mem_t = dg.transpose(memory)
    h = dg.constant(np.zeros((q, dim)))
    r = dg.constant(np.zeros((q, dim)))
    c = dg.constant(np.zeros((q, dim)))
    for _ in range(steps):
        h_cell, c = cell.step(params, x_pre, dg.concat([h, r], axis=1), c)
        h = dg.add(h_cell, query)
        att = dg.softmax(dg.matmul(h, mem_t))
        if attention_log is not None:
            attention_log.append(att.value)
        r = dg.matmul(att, memory)
    return h


# ---------------------------------------------------------------------------
# hallucinator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HallucinatorParams:
    """Shape of G: three-layer ReLU MLP from [x; z] to a feature vector."""

    feature_dim: int
    noise_dim: int
    hidden_dim: int
    prefix: str = "G"

    @property
    def spec(self) -> MlpSpec:
        d, h = self.feature_dim, self.hidden_dim
        return MlpSpec((d + self.noise_dim, h, h, d), final_relu=True)

    def init(self, store: ParamStore, rng: np.random.Generator, identity: bool = True):
        spec = self.spec
        for i in range(spec.n_layers):
            fan_in, fan_out = spec.layer_dims[i], spec.layer_dims[i + 1]
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
            store.add(f"{self.prefix}.W{i}", w)
            store.add(f"{self.prefix}.b{i}", np.zeros(fan_out))
        if identity:
            init_identity_blocks(self, store)
        return store


def init_identity_blocks(hp: HallucinatorParams, store: ParamStore) -> ParamStore:
    """Overwrite G's weights so that G(x, z) = x for every x >= 0."""
    if hp.hidden_dim < hp.feature_dim:
        raise ValueError(
            f"identity blocks need hidden_dim >= feature_dim ({hp.hidden_dim} < {hp.feature_dim})"
        )
    spec = hp.spec
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.layer_dims[i], spec.layer_dims[i + 1]
        # layer 0 only passes the x block; the noise columns start at zero
        width = min(fan_out, hp.feature_dim if i == 0 else fan_in)
        w = np.zeros((fan_out, fan_in))
        w[np.arange(width), np.arange(width)] = 1.0
        store[f"{hp.prefix}.W{i}"].value = w
        store[f"{hp.prefix}.b{i}"].value = np.zeros(fan_out)
    return store


def hallucinate(hp: HallucinatorParams, params: ParamStore, seeds: Node, z) -> Node:
    """Batched G: rows of ``seeds`` (B, d) with noise rows ``z`` (B, d_z)."""
    seeds, z = dg.as_node(seeds), dg.as_node(z)
    if seeds.value.ndim != 2 or seeds.shape[1] != hp.feature_dim:
        raise ShapeError(f"hallucinate: seeds {seeds.shape}, feature dim {hp.feature_dim}")
    if z.shape != (seeds.shape[0], hp.noise_dim):
        raise ShapeError(f"hallucinate: noise {z.shape}, expected ({seeds.shape[0]}, {hp.noise_dim})")
    return mlp_forward(hp.spec, params, dg.concat([seeds, z], axis=1), prefix=hp.prefix)


def hallucinate_one(hp: HallucinatorParams, params: ParamStore, seed_x, z) -> np.ndarray:
    seed_x = np.asarray(seed_x, dtype=np.float64).reshape(1, -1)
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    return hallucinate(hp, params, seed_x, z).value[0]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"HMCK"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ParamStore, meta: dict | None = None):
    """Header (magic, version, JSON names/shapes/meta) then float64 LE data."""
    names = params.names()
    header = {
        "names": names,
        "shapes": [list(params[k].shape) for k in names],
        "trainable": [params.is_trainable(k) for k in names],
        "rng_seed": params.rng_seed,
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for k in names:
            fh.write(params[k].value.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header = json.loads(raw[12 : 12 + hlen].decode())
    store = ParamStore(header["rng_seed"])
    off = 12 + hlen
    for name, shape, tr in zip(header["names"], header["shapes"], header["trainable"]):
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if off + nbytes > len(raw):
            raise CheckpointError(
                f"{path}: truncated at {name!r}, missing {off + nbytes - len(raw)} bytes"
            )
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        store.add(name, arr.astype(np.float64), trainable=tr)
        off += nbytes
    return store, header["meta"]
