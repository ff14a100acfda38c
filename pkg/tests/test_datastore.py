"""Dataset format round trips and stratified splitting."""

import struct

import numpy as np
import pytest

from resmem import datastore
from resmem.datastore import EmbeddingDataset, SplitSpec
from resmem.errors import (
    BadMagic,
    EmptySplit,
    NonFiniteValue,
    ShapeMismatch,
    VersionUnsupported,
)


def _random_dataset(rng, with_logits=True, with_labels=True):
    n = int(rng.integers(1, 40))
    d = int(rng.integers(1, 12))
    c = int(rng.integers(2, 9))
    logits = rng.standard_normal((n, c)).astype(np.float32) if with_logits else None
    labels = rng.integers(0, c, size=n).astype(np.uint32) if with_labels else None
    return EmbeddingDataset(
        embeddings=rng.standard_normal((n, d)).astype(np.float32),
        c=c if (with_logits or with_labels) else 0,
        logits=logits,
        labels=labels,
    )


def _raw_file_bytes(emb, logits, labels, c):
    """Independent writer used as the round-trip oracle."""
    n, d = emb.shape
    flags = 1 | (2 if logits is not None else 0) | (4 if labels is not None else 0)
    blob = struct.pack("<4sIIQQQ", b"RMEM", 1, flags, n, d, c)
    blob += emb.astype("<f4").tobytes()
    if logits is not None:
        blob += logits.astype("<f4").tobytes()
    if labels is not None:
        blob += labels.astype("<u4").tobytes()
    return blob


class TestRoundTrip:
    def test_minimal_file(self, tmp_path):
        path = tmp_path / "one.rmem"
        blob = _raw_file_bytes(
            np.array([[0.0, 0.0]], dtype=np.float32),
            np.array([[0.0, 0.0]], dtype=np.float32),
            np.array([0], dtype=np.uint32),
            c=2,
        )
        path.write_bytes(blob)
        ds = datastore.load_dataset(path)
        assert ds.n == 1 and ds.d == 2 and ds.c == 2
        assert ds.logits is not None and ds.labels is not None
        assert int(ds.labels[0]) == 0

    def test_save_load_save_is_byte_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        for trial in range(30):
            with_logits = trial % 3 != 0
            with_labels = trial % 4 != 0
            ds = _random_dataset(rng, with_logits, with_labels)
            blob = _raw_file_bytes(ds.embeddings, ds.logits, ds.labels, ds.c)
            p1 = tmp_path / f"a{trial}.rmem"
            p2 = tmp_path / f"b{trial}.rmem"
            p1.write_bytes(blob)
            datastore.save_dataset(datastore.load_dataset(p1), p2)
            assert p2.read_bytes() == blob

    def test_hundred_random_datasets_round_trip_equal(self, tmp_path):
        rng = np.random.default_rng(5)
        path = tmp_path / "rt.rmem"
        for trial in range(100):
            ds = _random_dataset(rng, trial % 2 == 0, trial % 3 != 2)
            datastore.save_dataset(ds, path)
            back = datastore.load_dataset(path)
            assert back.c == ds.c
            np.testing.assert_array_equal(back.embeddings, ds.embeddings)
            if ds.logits is None:
                assert back.logits is None
            else:
                np.testing.assert_array_equal(back.logits, ds.logits)
            if ds.labels is None:
                assert back.labels is None
            else:
                np.testing.assert_array_equal(back.labels, ds.labels)

    def test_flags_encode_absent_logits(self, tmp_path):
        rng = np.random.default_rng(2)
        ds = _random_dataset(rng, with_logits=False, with_labels=True)
        path = tmp_path / "nolog.rmem"
        datastore.save_dataset(ds, path)
        flags = struct.unpack_from("<I", path.read_bytes(), 8)[0]
        assert flags & 2 == 0
        assert flags & 1 and flags & 4


class TestValidation:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.rmem"
        path.write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(BadMagic):
            datastore.load_dataset(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "v9.rmem"
        blob = struct.pack("<4sIIQQQ", b"RMEM", 9, 1, 1, 1, 0) + bytes(4)
        path.write_bytes(blob)
        with pytest.raises(VersionUnsupported):
            datastore.load_dataset(path)

    def test_truncated_matrix(self, tmp_path):
        rng = np.random.default_rng(3)
        ds = _random_dataset(rng)
        path = tmp_path / "trunc.rmem"
        datastore.save_dataset(ds, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-3])
        with pytest.raises(ShapeMismatch):
            datastore.load_dataset(path)

    def test_trailing_garbage(self, tmp_path):
        rng = np.random.default_rng(4)
        ds = _random_dataset(rng)
        path = tmp_path / "extra.rmem"
        datastore.save_dataset(ds, path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(ShapeMismatch):
            datastore.load_dataset(path)

    def test_unknown_flag_bits_rejected(self, tmp_path):
        emb = np.zeros((1, 1), dtype=np.float32)
        blob = struct.pack("<4sIIQQQ", b"RMEM", 1, 1 | 8, 1, 1, 0) + emb.tobytes()
        path = tmp_path / "flags.rmem"
        path.write_bytes(blob)
        with pytest.raises(ShapeMismatch):
            datastore.load_dataset(path)

    def test_nan_rejected(self, tmp_path):
        emb = np.array([[1.0, np.nan]], dtype=np.float32)
        blob = _raw_file_bytes(emb, None, None, c=0)
        path = tmp_path / "nan.rmem"
        path.write_bytes(blob)
        with pytest.raises(NonFiniteValue):
            datastore.load_dataset(path)

    def test_label_out_of_range(self):
        with pytest.raises(ShapeMismatch):
            EmbeddingDataset(
                embeddings=np.zeros((2, 2), dtype=np.float32),
                c=2,
                labels=np.array([0, 2], dtype=np.uint32),
            )


class TestSplit:
    def _ds(self, labels):
        labels = np.asarray(labels, dtype=np.uint32)
        rng = np.random.default_rng(0)
        return EmbeddingDataset(
            embeddings=rng.standard_normal((labels.shape[0], 3)).astype(np.float32),
            c=int(labels.max()) + 1 if labels.size else 2,
            labels=labels,
        )

    def test_all_train(self):
        ds = self._ds([0, 1, 0, 1, 1])
        tr, va, te = datastore.split(ds, SplitSpec((1.0, 0.0, 0.0), seed=1))
        assert va is None and te is None
        assert tr.n == ds.n
        np.testing.assert_array_equal(
            np.sort(tr.labels), np.sort(ds.labels)
        )

    def test_spec_sizes_8_1_1(self):
        ds = self._ds([0] * 5 + [1] * 5)
        tr, va, te = datastore.split(ds, SplitSpec((0.8, 0.1, 0.1), seed=3))
        assert (tr.n, va.n, te.n) == (8, 1, 1)

    def test_same_seed_same_indices(self):
        labels = np.random.default_rng(9).integers(0, 4, size=57)
        a = datastore.split_indices(labels, SplitSpec((0.7, 0.2, 0.1), seed=42))
        b = datastore.split_indices(labels, SplitSpec((0.7, 0.2, 0.1), seed=42))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_partition_property(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            n = int(rng.integers(10, 120))
            labels = rng.integers(0, int(rng.integers(2, 6)), size=n)
            f0 = float(rng.uniform(0.3, 0.8))
            f1 = float(rng.uniform(0.0, 1.0 - f0))
            spec = SplitSpec((f0, f1, 1.0 - f0 - f1), seed=int(rng.integers(1 << 30)))
            try:
                parts = datastore.split_indices(labels, spec)
            except EmptySplit:
                continue
            merged = np.sort(np.concatenate(parts))
            np.testing.assert_array_equal(merged, np.arange(n))

    def test_stratified_proportions(self):
        labels = np.repeat(np.arange(4), 100)
        tr, va, te = datastore.split_indices(labels, SplitSpec((0.8, 0.1, 0.1), seed=0))
        for cls in range(4):
            assert (labels[tr] == cls).sum() == 80
            assert (labels[va] == cls).sum() == 10
            assert (labels[te] == cls).sum() == 10

    def test_empty_split_raises(self):
        # 3 singleton classes: every row lands in train, val/test get nothing
        labels = np.array([0, 1, 2], dtype=np.uint32)
        with pytest.raises(EmptySplit):
            datastore.split_indices(labels, SplitSpec((0.8, 0.1, 0.1), seed=0))

    def test_requires_labels(self):
        ds = EmbeddingDataset(embeddings=np.zeros((3, 2), dtype=np.float32), c=0)
        with pytest.raises(ShapeMismatch):
            datastore.split(ds, SplitSpec((1.0, 0.0, 0.0), seed=0))
