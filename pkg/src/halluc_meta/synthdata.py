"""Synthetic feature benchmark with transformation modes shared across classes.

Each example is ``relu(A (c_k + sum_j alpha_j t_j) + eps)``: a class center
``c_k`` in latent space, shared mode vectors ``t_j`` with per-example
coefficients, a fixed non-negative lift ``A`` and feature noise. Centers sit
around a positive offset so the lift rarely clips and within-class variation
stays close to the span of the lifted modes.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .labeled import LabeledSet, SplitSpec


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 20
    feature_dim: int = 32
    latent_dim: int = 8
    num_shared_modes: int = 3
    mode_strength: float = 2.0
    samples_per_class: int = 100
    noise_scale: float = 0.3
    seed: int = 0
    center_offset: float = 2.0
    split_fractions: tuple = (0.6, 0.2, 0.2)

    def validate(self):
        counts = (self.num_classes, self.feature_dim, self.latent_dim,
                  self.num_shared_modes, self.samples_per_class)
        if min(counts) < 1:
            raise ValueError(f"all counts must be >= 1: {counts}")
        if self.feature_dim < self.latent_dim:
            raise ValueError(f"feature_dim {self.feature_dim} < latent_dim {self.latent_dim}")
        if self.mode_strength < 0 or self.noise_scale < 0:
            raise ValueError("mode_strength and noise_scale must be non-negative")
        fr = tuple(float(f) for f in self.split_fractions)
        if len(fr) != 3 or min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {fr}")


def split_classes(classes, fractions, rng: np.random.Generator) -> SplitSpec:
    classes = np.asarray(sorted(int(k) for k in classes))
    perm = rng.permutation(classes)
    n = len(classes)
    n_base = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return SplitSpec(tuple(perm[:n_base]), tuple(perm[n_base:n_base + n_val]),
                     tuple(perm[n_base + n_val:]))


def generate(spec: SynthSpec = SynthSpec()) -> tuple[LabeledSet, SplitSpec]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d, lat, m = spec.feature_dim, spec.latent_dim, spec.num_shared_modes
    lift = np.abs(rng.standard_normal((d, lat))) / lat
    centers = spec.center_offset + rng.standard_normal((spec.num_classes, lat))
    modes = rng.standard_normal((m, lat))
    n = spec.samples_per_class
    feats = np.empty((spec.num_classes * n, d))
    for k in range(spec.num_classes):
        alpha = rng.normal(0.0, 1.0, size=(n, m)) * spec.mode_strength
        latent = centers[k] + alpha @ modes
        eps = rng.normal(0.0, 1.0, size=(n, d)) * spec.noise_scale
        feats[k * n:(k + 1) * n] = np.maximum(latent @ lift.T + eps, 0.0)
    labels = np.repeat(np.arange(spec.num_classes), n)
    split = split_classes(range(spec.num_classes), spec.split_fractions, rng)
    return LabeledSet(feats, labels), split


# ---------------------------------------------------------------------------
# binary dataset file
# ---------------------------------------------------------------------------

MAGIC = b"HMDS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")  # magic, version, d, classes, examples
_CLASS = struct.Struct("<IB")
_ROLE_CODE = {"base": 0, "novel_val": 1, "novel_test": 2, None: 255}
_CODE_ROLE = {v: k for k, v in _ROLE_CODE.items()}


class DatasetFormatError(ValueError):
    pass


def _record_dtype(d: int) -> np.dtype:
    return np.dtype([("label", "<u4"), ("x", "<f8", (d,))])


def to_bytes(data: LabeledSet, split: SplitSpec) -> bytes:
    data.check_nonnegative()
    classes = sorted(set(data.classes.tolist()) | set(split.all_classes))
    out = [_HEADER.pack(MAGIC, VERSION, data.dim, len(classes), len(data))]
    out += [_CLASS.pack(k, _ROLE_CODE[split.role(k)]) for k in classes]
    rec = np.empty(len(data), dtype=_record_dtype(data.dim))
    rec["label"] = data.labels
    rec["x"] = data.feature_values
    out.append(rec.tobytes())
    return b"".join(out)


def dataset_hash(data: LabeledSet, split: SplitSpec) -> str:
    return hashlib.sha256(to_bytes(data, split)).hexdigest()


def save(path, data: LabeledSet, split: SplitSpec):
    Path(path).write_bytes(to_bytes(data, split))


def from_bytes(raw: bytes, source: str = "<bytes>") -> tuple[LabeledSet, SplitSpec]:
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(
            f"{source}: truncated header, missing {_HEADER.size - len(raw)} bytes")
    magic, version, d, n_classes, n_examples = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"{source}: bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise DatasetFormatError(f"{source}: unsupported version {version} at offset 4")
    dtype = _record_dtype(d)
    off = _HEADER.size
    expected = off + n_classes * _CLASS.size + n_examples * dtype.itemsize
    if len(raw) < expected:
        raise DatasetFormatError(
            f"{source}: truncated, missing {expected - len(raw)} bytes "
            f"(have {len(raw)}, header promises {expected})")
    if len(raw) > expected:
        raise DatasetFormatError(f"{source}: {len(raw) - expected} trailing bytes after offset {expected}")
    roles: dict[str, list[int]] = {"base": [], "novel_val": [], "novel_test": []}
    for i in range(n_classes):
        k, code = _CLASS.unpack_from(raw, off + i * _CLASS.size)
        if code not in _CODE_ROLE:
            raise DatasetFormatError(f"{source}: bad split code {code} at offset {off + i * _CLASS.size}")
        role = _CODE_ROLE[code]
        if role is not None:
            roles[role].append(k)
    off += n_classes * _CLASS.size
    rec = np.frombuffer(raw, dtype=dtype, count=n_examples, offset=off)
    feats = np.array(rec["x"], dtype=np.float64).reshape(n_examples, d)
    bad = np.flatnonzero((feats < 0).any(axis=1))
    if bad.size:
        i = int(bad[0])
        raise DatasetFormatError(
            f"{source}: negative feature in record {i} (offset {off + i * dtype.itemsize})")
    split = SplitSpec(tuple(roles["base"]), tuple(roles["novel_val"]), tuple(roles["novel_test"]))
    return LabeledSet(feats, rec["label"].astype(np.int64)), split


def load(path) -> tuple[LabeledSet, SplitSpec]:
    return from_bytes(Path(path).read_bytes(), str(path))


def import_text(path, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> tuple[LabeledSet, SplitSpec]:
    """Read ``label, f1, f2, ...`` lines; classes are split at random by ``seed``."""
    labels, rows = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        try:
            labels.append(int(parts[0]))
            rows.append([float(p) for p in parts[1:]])
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
        if rows and len(rows[-1]) != len(rows[0]):
            raise DatasetFormatError(f"{path}:{lineno}: {len(rows[-1])} features, expected {len(rows[0])}")
    data = LabeledSet(np.array(rows), np.array(labels))
    try:
        data.check_nonnegative()
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
    split = split_classes(data.classes, fractions, np.random.default_rng(seed))
    return data, split


def spec_dict(spec: SynthSpec) -> dict:
    out = asdict(spec)
    out["split_fractions"] = list(spec.split_fractions)
    return out
