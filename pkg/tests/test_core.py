import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partann import (DataError, Dataset, Distance, distance, load_fvecs,
                     load_ivecs, recall_at_k, save_fvecs, save_ivecs)
from partann.core import distances_to


class TestDistance:
    def test_345_triangle(self):
        assert distance([0, 0], [3, 4]) == 5.0

    def test_identity(self):
        x = np.random.default_rng(0).standard_normal(8)
        assert distance(x, x) == 0.0

    def test_cosine_orthogonal(self):
        assert distance([1, 0], [0, 1], Distance.COSINE) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            distance([1, 2], [1, 2, 3])

    def test_cosine_zero_norm(self):
        with pytest.raises(DataError):
            distance([0, 0], [1, 0], Distance.COSINE)

    @given(st.integers(0, 2**32))
    @settings(max_examples=30, deadline=None)
    def test_metric_axioms(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal(8)
        b = rng.standard_normal(8)
        assert distance(a, b) == distance(b, a)
        assert distance(a, b) >= 0.0
        assert distance(a, a) == 0.0

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((20, 6)).astype(np.float32)
        q = rng.standard_normal(6).astype(np.float32)
        batch = distances_to(q, X)
        for i in range(20):
            assert batch[i] == pytest.approx(distance(q, X[i]), abs=1e-12)


class TestRecall:
    def test_partial_overlap(self):
        ret = [(1, 0.1), (2, 0.2), (3, 0.3)]
        tr = [(1, 0.1), (2, 0.2), (4, 0.25)]
        assert recall_at_k(ret, tr, 3) == pytest.approx(2 / 3)

    def test_identity(self):
        lst = [(i, float(i)) for i in range(5)]
        assert recall_at_k(lst, lst, 5) == 1.0

    def test_empty_returned(self):
        tr = [(i, float(i)) for i in range(5)]
        assert recall_at_k([], tr, 3) == 0.0

    def test_truth_too_short(self):
        with pytest.raises(DataError):
            recall_at_k([(1, 0.0)], [(1, 0.0)], 2)

    @given(st.lists(st.integers(0, 1000), min_size=1, max_size=30,
                    unique=True))
    @settings(max_examples=30, deadline=None)
    def test_self_recall_is_one(self, ids):
        lst = [(i, float(j)) for j, i in enumerate(ids)]
        assert recall_at_k(lst, lst, len(ids)) == 1.0


class TestDataset:
    def test_duplicate_ids(self):
        with pytest.raises(DataError):
            Dataset(dim=2, doc_ids=np.array([1, 1], dtype=np.uint64),
                    vectors=np.zeros((2, 2), dtype=np.float32))

    def test_nan_rejected(self):
        v = np.zeros((1, 2), dtype=np.float32)
        v[0, 0] = np.nan
        with pytest.raises(DataError):
            Dataset.from_vectors(v)

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            Dataset(dim=3, doc_ids=np.array([0], dtype=np.uint64),
                    vectors=np.zeros((1, 2), dtype=np.float32))


class TestFvecs:
    def test_minimal_record(self, tmp_path):
        path = tmp_path / "one.fvecs"
        path.write_bytes(np.array([2], dtype="<i4").tobytes()
                         + np.array([1.0, 2.0], dtype="<f4").tobytes())
        ds = load_fvecs(path)
        assert ds.dim == 2
        assert ds.doc_ids.tolist() == [0]
        assert ds.vectors.tolist() == [[1.0, 2.0]]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.fvecs"
        path.write_bytes(b"")
        with pytest.raises(DataError):
            load_fvecs(path)

    def test_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(3)
        ds = Dataset.from_vectors(rng.standard_normal((100, 12)).astype(np.float32))
        p1 = tmp_path / "a.fvecs"
        p2 = tmp_path / "b.fvecs"
        save_fvecs(ds, p1)
        save_fvecs(load_fvecs(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_inconsistent_dim(self, tmp_path):
        path = tmp_path / "bad.fvecs"
        rec1 = np.array([2, 0, 0], dtype="<i4").tobytes()
        rec2 = np.array([3, 0, 0, 0], dtype="<i4").tobytes()
        path.write_bytes(rec1 + rec2)
        with pytest.raises(DataError):
            load_fvecs(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "trunc.fvecs"
        path.write_bytes(np.array([4, 0, 0], dtype="<i4").tobytes())
        with pytest.raises(DataError):
            load_fvecs(path)


class TestIvecs:
    def test_minimal_record(self, tmp_path):
        path = tmp_path / "one.ivecs"
        path.write_bytes(np.array([2, 7, 9], dtype="<i4").tobytes())
        assert load_ivecs(path).tolist() == [[7, 9]]

    def test_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(4)
        rows = rng.integers(0, 10000, size=(50, 10))
        p1 = tmp_path / "a.ivecs"
        p2 = tmp_path / "b.ivecs"
        save_ivecs(rows, p1)
        save_ivecs(load_ivecs(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_negative_width(self, tmp_path):
        path = tmp_path / "neg.ivecs"
        path.write_bytes(np.array([-2, 7, 9], dtype="<i4").tobytes())
        with pytest.raises(DataError):
            load_ivecs(path)
