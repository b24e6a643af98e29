import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from halluc_meta import synthdata as sd
from halluc_meta.labeled import LabeledSet, SplitSpec
from halluc_meta.synthdata import DatasetFormatError, SynthSpec


def _within_class(data):
    parts = [data.feature_values[data.labels == k] for k in data.classes]
    return np.concatenate([p - p.mean(axis=0) for p in parts])


class TestGenerate:
    def test_defaults(self):
        data, split = sd.generate()
        assert len(data) == 2000 and data.dim == 32
        assert data.counts() == {k: 100 for k in range(20)}
        assert np.all(data.feature_values >= 0)
        assert (len(split.base_classes), len(split.novel_val_classes), len(split.novel_test_classes)) == (12, 4, 4)
        assert split.all_classes == tuple(range(20))

    def test_bit_identical_for_seed(self):
        a, sa = sd.generate(SynthSpec(seed=5))
        b, sb = sd.generate(SynthSpec(seed=5))
        assert a.feature_values.tobytes() == b.feature_values.tobytes()
        assert sa == sb
        c, _ = sd.generate(SynthSpec(seed=6))
        assert not np.array_equal(a.feature_values, c.feature_values)

    def test_pca_three_modes_dominate(self):
        data, _ = sd.generate()
        w = _within_class(data)
        # independent route: eigenvalues of the pooled within-class covariance
        ev = np.sort(np.linalg.eigvalsh(w.T @ w))[::-1]
        assert ev[:3].sum() / ev.sum() >= 0.90

    def test_rank_at_zero_noise(self):
        # a large offset keeps every coordinate above zero, so the ReLU is inactive
        spec = SynthSpec(noise_scale=0.0, center_offset=12.0, mode_strength=1.0)
        data, _ = sd.generate(spec)
        assert data.feature_values.min() > 0
        s = np.linalg.svd(_within_class(data), compute_uv=False)
        assert np.sum(s > 1e-8 * s[0]) == 3

    def test_degenerate_one_point_per_class(self):
        data, _ = sd.generate(SynthSpec(mode_strength=0.0, noise_scale=0.0, num_classes=6, samples_per_class=5))
        for k in data.classes:
            rows = data.feature_values[data.labels == k]
            np.testing.assert_array_equal(rows, np.repeat(rows[:1], len(rows), axis=0))
        # nearest prototype from one shot gets everything right
        protos = np.stack([data.feature_values[data.labels == k][0] for k in data.classes])
        d = ((data.feature_values[:, None, :] - protos[None]) ** 2).sum(-1)
        np.testing.assert_array_equal(data.classes[np.argmin(d, axis=1)], data.labels)

    @pytest.mark.parametrize("kw", [{"num_classes": 0}, {"feature_dim": 4, "latent_dim": 8},
                                    {"mode_strength": -1.0}, {"split_fractions": (0.5, 0.2, 0.2)},
                                    {"split_fractions": (0.5, 0.5)}, {"split_fractions": (1.2, -0.1, -0.1)}])
    def test_invalid_spec(self, kw):
        with pytest.raises(ValueError):
            sd.generate(SynthSpec(**kw))

    @given(st.integers(3, 30), st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_split_partitions_classes(self, k, seed):
        split = sd.split_classes(range(k), (0.6, 0.2, 0.2), np.random.default_rng(seed))
        parts = [set(split.base_classes), set(split.novel_val_classes), set(split.novel_test_classes)]
        assert set().union(*parts) == set(range(k))
        assert sum(map(len, parts)) == k


class TestFileFormat:
    def _random(self, seed=0):
        rng = np.random.default_rng(seed)
        data = LabeledSet(rng.uniform(0, 5, (30, 7)), rng.integers(0, 6, 30))
        return data, SplitSpec((0, 2, 5), (1,), (3, 4))

    def test_round_trip(self, tmp_path):
        data, split = self._random()
        path = tmp_path / "d.hmds"
        sd.save(path, data, split)
        back, bsplit = sd.load(path)
        assert back.feature_values.tobytes() == data.feature_values.tobytes()
        np.testing.assert_array_equal(back.labels, data.labels)
        assert bsplit == split

    def test_layout(self):
        data, split = self._random()
        raw = sd.to_bytes(data, split)
        magic, version, d, k, n = sd._HEADER.unpack_from(raw, 0)
        assert (magic, version, d, k, n) == (b"HMDS", 1, 7, 6, 30)
        assert len(raw) == 24 + 6 * 5 + 30 * (4 + 8 * 7)
        first = np.frombuffer(raw, "<f8", count=7, offset=24 + 30 + 4)
        np.testing.assert_array_equal(first, data.feature_values[0])

    def test_truncated(self):
        data, split = self._random()
        raw = sd.to_bytes(data, split)
        with pytest.raises(DatasetFormatError, match="missing 13 bytes"):
            sd.from_bytes(raw[:-13])
        with pytest.raises(DatasetFormatError, match="truncated header, missing 14 bytes"):
            sd.from_bytes(raw[:10])

    def test_trailing_bytes(self):
        data, split = self._random()
        with pytest.raises(DatasetFormatError, match="3 trailing bytes"):
            sd.from_bytes(sd.to_bytes(data, split) + b"\0\0\0")

    def test_bad_magic_and_version(self):
        data, split = self._random()
        raw = bytearray(sd.to_bytes(data, split))
        with pytest.raises(DatasetFormatError, match="bad magic"):
            sd.from_bytes(b"XXXX" + bytes(raw[4:]))
        raw[4] = 9
        with pytest.raises(DatasetFormatError, match="version 9 at offset 4"):
            sd.from_bytes(bytes(raw))

    def test_negative_feature_names_record(self):
        data, split = self._random()
        raw = bytearray(sd.to_bytes(data, split))
        off = 24 + 30 + 4 * 60 + 4 + 2 * 8  # record 4, component 2
        raw[off:off + 8] = np.float64(-1.0).tobytes()
        with pytest.raises(DatasetFormatError, match=f"record 4 \\(offset {24 + 30 + 4 * 60}\\)"):
            sd.from_bytes(bytes(raw))

    def test_save_rejects_negative(self):
        with pytest.raises(ValueError, match="negative"):
            sd.to_bytes(LabeledSet([[1.0, -0.5]], [0]), SplitSpec((0,), (), ()))

    def test_hash_tracks_content(self):
        data, split = self._random()
        h = sd.dataset_hash(data, split)
        assert h == sd.dataset_hash(data, split) and len(h) == 64
        other = SplitSpec((0, 2), (1, 5), (3, 4))
        assert sd.dataset_hash(data, other) != h


class TestTextImport:
    def test_import(self, tmp_path):
        path = tmp_path / "feats.txt"
        path.write_text("# label, features\n0, 1.0, 2.0\n1,0.5,0.0\n\n2, 3.5, 1.25\n3,0,0\n4,1,1\n")
        data, split = sd.import_text(path, seed=1)
        np.testing.assert_array_equal(data.labels, [0, 1, 2, 3, 4])
        np.testing.assert_array_equal(data.feature_values[2], [3.5, 1.25])
        assert split.all_classes == (0, 1, 2, 3, 4)

    def test_ragged(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("0,1,2\n1,1\n")
        with pytest.raises(DatasetFormatError, match="bad.txt:2: 1 features, expected 2"):
            sd.import_text(path)

    def test_not_a_number(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("0,1,x\n")
        with pytest.raises(DatasetFormatError, match="bad.txt:1"):
            sd.import_text(path)

    def test_negative(self, tmp_path):
        path = tmp_path / "neg.txt"
        path.write_text("0,1,2\n1,-1,2\n")
        with pytest.raises(DatasetFormatError, match="row 1"):
            sd.import_text(path)
