import numpy as np
import pytest

from mqseq.dataset import Split
from mqseq.embedding import (
    EmbeddingMatrix,
    embed_corpus,
    l2_normalize,
    mean_pool,
    read_cache,
    write_cache,
)
from mqseq.encoder import EncoderOutput, build_whitespace_spec, reference_backend
from mqseq.errors import (
    BadMagic,
    EmbedBatchError,
    EmptyInput,
    EmptyRow,
    TruncatedFile,
    VersionUnsupported,
)

from _synth import make_records


def output(hidden, mask):
    hidden = np.asarray(hidden, dtype=np.float64)
    return EncoderOutput(hidden_states=hidden, attention_mask=np.asarray(mask),
                         dim=hidden.shape[-1])


class TestMeanPool:
    def test_two_token_average(self):
        pooled = mean_pool(output([[[1.0, 3.0], [3.0, 5.0]]], [[1, 1]]))
        assert pooled.tolist() == [[2.0, 4.0]]

    def test_single_token_identity(self):
        pooled = mean_pool(output([[[7.0, -2.0, 0.5]]], [[1]]))
        assert pooled.tolist() == [[7.0, -2.0, 0.5]]

    def test_masked_positions_excluded(self):
        pooled = mean_pool(output([[[1.0, 2.0], [999.0, -999.0]]], [[1, 0]]))
        assert pooled.tolist() == [[1.0, 2.0]]

    def test_empty_row_rejected(self):
        with pytest.raises(EmptyRow) as err:
            mean_pool(output([[[1.0]], [[2.0]]], [[1], [0]]))
        assert err.value.index == 1

    def test_matches_per_row_loop_exactly(self, rng):
        for _ in range(50):
            b, l, d = rng.integers(1, 9), rng.integers(1, 17), rng.integers(1, 33)
            hidden = rng.standard_normal((b, l, d))
            mask = (rng.random((b, l)) < 0.6).astype(np.int64)
            mask[np.arange(b), rng.integers(0, l, size=b)] = 1  # no empty rows
            pooled = mean_pool(output(hidden, mask))
            for i in range(b):
                acc = np.zeros(d)
                count = 0.0
                for t in range(l):
                    acc = acc + mask[i, t] * hidden[i, t]
                    count += mask[i, t]
                assert (pooled[i] == acc / count).all()


class TestL2Normalize:
    def test_three_four_five(self):
        assert l2_normalize(np.array([[3.0, 4.0]])).tolist() == [[0.6, 0.8]]

    def test_unit_vector_unchanged(self):
        assert l2_normalize(np.array([[1.0, 0.0]])).tolist() == [[1.0, 0.0]]

    def test_zero_vector_stays_zero(self):
        assert l2_normalize(np.array([[0.0, 0.0]])).tolist() == [[0.0, 0.0]]

    def test_rows_have_unit_norm(self, rng):
        data = rng.standard_normal((40, 7)) * 10
        norms = np.linalg.norm(l2_normalize(data), axis=1)
        assert np.abs(norms - 1.0).max() < 1e-12

    def test_epsilon_must_be_positive(self):
        with pytest.raises(ValueError):
            l2_normalize(np.ones((1, 2)), epsilon=0.0)


class CountingBackend:
    def __init__(self, inner):
        self.inner = inner
        self.dim = inner.dim
        self.calls = 0

    def evaluate(self, batch):
        self.calls += 1
        return self.inner.evaluate(batch)


class FailingBackend:
    dim = 4

    def __init__(self, fail_at):
        self.fail_at = fail_at
        self.calls = 0

    def evaluate(self, batch):
        if self.calls == self.fail_at:
            raise RuntimeError("backend exploded")
        self.calls += 1
        return reference_backend(self.dim, 0).evaluate(batch)


def corpus(n, seed=0):
    records = make_records(["Surgery"], {Split.TRAIN: n}, seed=seed)[Split.TRAIN]
    return records[:n]


class TestEmbedCorpus:
    def test_batch_count_1200_records(self):
        records = corpus(1200)
        spec = build_whitespace_spec([r.question_text for r in records])
        backend = CountingBackend(reference_backend(dim=8, seed=1))
        matrix = embed_corpus(records, backend, spec, batch_size=500)
        assert backend.calls == 3
        assert matrix.n == 1200

    def test_single_record(self):
        records = corpus(1)
        spec = build_whitespace_spec([r.question_text for r in records])
        matrix = embed_corpus(records, reference_backend(dim=16, seed=1), spec)
        assert matrix.data.shape == (1, 16)
        assert abs(np.linalg.norm(matrix.data[0]) - 1.0) < 1e-4
        assert matrix.normalized

    def test_duplicate_texts_identical_rows(self):
        from dataclasses import replace

        records = corpus(2)
        records = [records[0], replace(records[1], question_text=records[0].question_text)]
        spec = build_whitespace_spec([r.question_text for r in records])
        matrix = embed_corpus(records, reference_backend(dim=8, seed=2), spec, batch_size=2)
        assert np.array_equal(matrix.data[0], matrix.data[1])

    def test_batch_size_independence(self):
        records = corpus(130)
        spec = build_whitespace_spec([r.question_text for r in records])
        backend = reference_backend(dim=12, seed=3)
        one = embed_corpus(records, backend, spec, batch_size=1)
        many = embed_corpus(records, backend, spec, batch_size=500)
        assert np.abs(one.data - many.data).max() <= 1e-6

    def test_row_order_matches_input(self):
        records = corpus(5)
        spec = build_whitespace_spec([r.question_text for r in records])
        matrix = embed_corpus(records, reference_backend(dim=4, seed=1), spec, batch_size=2)
        assert matrix.ids == [r.id for r in records]

    def test_backend_error_annotated_with_batch_index(self):
        records = corpus(10)
        spec = build_whitespace_spec([r.question_text for r in records])
        with pytest.raises(EmbedBatchError) as err:
            embed_corpus(records, FailingBackend(fail_at=2), spec, batch_size=3)
        assert err.value.batch_index == 2

    def test_empty_corpus(self):
        spec = build_whitespace_spec(["a"])
        with pytest.raises(EmptyInput):
            embed_corpus([], reference_backend(4, 0), spec)

    def test_bad_batch_size(self):
        spec = build_whitespace_spec(["a"])
        with pytest.raises(ValueError):
            embed_corpus(corpus(1), reference_backend(4, 0), spec, batch_size=0)


def matrix_fixture(n=7, d=5, seed=0, normalized=True):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((n, d)).astype(np.float32)
    if normalized:
        data = l2_normalize(data).astype(np.float32)
    return EmbeddingMatrix(ids=[f"id-{i}" for i in range(n)], data=data, dim=d,
                           normalized=normalized)


class TestCache:
    def test_round_trip_bit_identical(self, tmp_path):
        matrix = matrix_fixture()
        path = tmp_path / "emb.mqsb"
        write_cache(matrix, path)
        loaded = read_cache(path)
        assert loaded.ids == matrix.ids
        assert loaded.dim == matrix.dim
        assert loaded.normalized == matrix.normalized
        assert loaded.data.tobytes() == matrix.data.tobytes()

    def test_round_trip_preserves_unnormalized_flag(self, tmp_path):
        matrix = matrix_fixture(normalized=False)
        path = tmp_path / "emb.mqsb"
        write_cache(matrix, path)
        assert read_cache(path).normalized is False

    def test_unicode_ids(self, tmp_path):
        matrix = matrix_fixture(n=2)
        matrix.ids = ["héllo-1", "質問-2"]
        path = tmp_path / "emb.mqsb"
        write_cache(matrix, path)
        assert read_cache(path).ids == ["héllo-1", "質問-2"]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "emb.mqsb"
        write_cache(matrix_fixture(), path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(BadMagic):
            read_cache(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "emb.mqsb"
        write_cache(matrix_fixture(), path)
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(VersionUnsupported):
            read_cache(path)

    def test_truncated_data_section(self, tmp_path):
        path = tmp_path / "emb.mqsb"
        write_cache(matrix_fixture(n=10, d=4), path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 4 * 4])  # drop one row of floats
        with pytest.raises(TruncatedFile):
            read_cache(path)

    def test_truncated_id_section(self, tmp_path):
        path = tmp_path / "emb.mqsb"
        write_cache(matrix_fixture(n=3, d=2), path)
        path.write_bytes(path.read_bytes()[:22])
        with pytest.raises(TruncatedFile):
            read_cache(path)

    def test_trailing_garbage_detected(self, tmp_path):
        path = tmp_path / "emb.mqsb"
        write_cache(matrix_fixture(), path)
        path.write_bytes(path.read_bytes() + b"\0\0")
        with pytest.raises(TruncatedFile):
            read_cache(path)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingMatrix(ids=["a", "a"], data=np.zeros((2, 2), dtype=np.float32),
                            dim=2, normalized=True)
