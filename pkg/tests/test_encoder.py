import numpy as np
import pytest
from hypothesis import given, strategies as st

from mqseq.encoder import (
    Casing,
    TokenizerSpec,
    build_whitespace_spec,
    load_backend,
    read_tokenizer_spec,
    reference_backend,
    tokenize_batch,
    write_tokenizer_spec,
)
from mqseq.errors import (
    DimMismatch,
    EmptyBatch,
    EmptyText,
    FormatMismatch,
    ModelNotFound,
)


def ws_spec(vocab=None, eos=0, max_len=512, casing=Casing.PRESERVE):
    vocab = vocab if vocab is not None else {"</s>": 0, "a": 5, "b": 7}
    return TokenizerSpec(vocabulary=vocab, eos_token_id=eos,
                         max_input_length=max_len, casing=casing)


class TestWhitespaceTokenizer:
    def test_pads_to_longest_with_eos(self):
        batch = tokenize_batch(["a", "a b"], ws_spec())
        assert batch.ids.tolist() == [[5, 0], [5, 7]]
        assert batch.attention_mask.tolist() == [[1, 0], [1, 1]]
        assert batch.lengths == (1, 2)

    def test_truncates_to_max_length(self):
        text = " ".join(["a"] * 600)
        batch = tokenize_batch([text], ws_spec())
        assert batch.lengths == (512,)
        assert batch.ids.shape == (1, 512)

    def test_empty_batch(self):
        with pytest.raises(EmptyBatch):
            tokenize_batch([], ws_spec())

    def test_empty_text_reports_index(self):
        with pytest.raises(EmptyText) as err:
            tokenize_batch(["a", "   "], ws_spec())
        assert err.value.index == 1

    def test_hash_fallback_is_stable_and_in_range(self):
        batch1 = tokenize_batch(["zzz unseen"], ws_spec())
        batch2 = tokenize_batch(["zzz unseen"], ws_spec())
        assert batch1.ids.tolist() == batch2.ids.tolist()
        assert (batch1.ids < 8).all() and (batch1.ids >= 0).all()

    def test_lowercasing(self):
        batch = tokenize_batch(["A B"], ws_spec(casing=Casing.LOWER))
        assert batch.ids.tolist() == [[5, 7]]

    def test_row_independence_under_permutation(self):
        texts = ["a", "b a", "a a a", "b"]
        base = tokenize_batch(texts, ws_spec())
        perm = [2, 0, 3, 1]
        shuffled = tokenize_batch([texts[i] for i in perm], ws_spec())
        for out_row, src_row in enumerate(perm):
            n = base.lengths[src_row]
            assert shuffled.lengths[out_row] == n
            assert shuffled.ids[out_row, :n].tolist() == base.ids[src_row, :n].tolist()

    def test_appending_longer_text_preserves_existing_prefixes(self):
        short = tokenize_batch(["a", "b a"], ws_spec())
        longer = tokenize_batch(["a", "b a", "a b a b a"], ws_spec())
        for i in range(2):
            n = short.lengths[i]
            assert longer.ids[i, :n].tolist() == short.ids[i, :n].tolist()
            assert longer.attention_mask[i, :n].tolist() == short.attention_mask[i, :n].tolist()
            assert (longer.attention_mask[i, n:] == 0).all()

    def test_eos_must_be_in_vocabulary(self):
        with pytest.raises(ValueError):
            TokenizerSpec(vocabulary={"a": 5}, eos_token_id=0)


WP_VOCAB = {"[PAD]": 0, "[UNK]": 1, "[CLS]": 2, "[SEP]": 3, "hello": 4,
            "med": 5, "##ical": 6, "world": 7, ".": 8, "qu": 9, "##iz": 10}


def wp_spec(max_len=16, casing=Casing.LOWER):
    return TokenizerSpec(vocabulary=WP_VOCAB, eos_token_id=3,
                         max_input_length=max_len, casing=casing)


class TestWordpieceTokenizer:
    def test_greedy_pieces_with_specials(self):
        batch = tokenize_batch(["Hello medical world."], wp_spec())
        assert batch.ids.tolist() == [[2, 4, 5, 6, 7, 8, 3]]
        assert batch.lengths == (7,)

    def test_unknown_word_maps_to_unk(self):
        batch = tokenize_batch(["hello xylophone"], wp_spec())
        assert batch.ids.tolist() == [[2, 4, 1, 3]]

    def test_punctuation_is_split_off(self):
        batch = tokenize_batch(["hello.world"], wp_spec())
        assert batch.ids.tolist() == [[2, 4, 8, 7, 3]]

    def test_truncation_keeps_wrapper_tokens(self):
        batch = tokenize_batch(["hello world hello world hello"], wp_spec(max_len=4))
        assert batch.lengths == (4,)
        row = batch.ids[0].tolist()
        assert row[0] == 2 and row[-1] == 3

    def test_accent_stripping_with_lowercasing(self):
        spec = wp_spec()
        accented = tokenize_batch(["Médical"], spec)
        plain = tokenize_batch(["medical"], spec)
        assert accented.ids.tolist() == plain.ids.tolist()

    def test_padding_uses_eos(self):
        batch = tokenize_batch(["hello", "hello world"], wp_spec())
        assert batch.ids[0].tolist() == [2, 4, 3, 3]  # last 3 is [SEP]-as-padding
        assert batch.attention_mask[0].tolist() == [1, 1, 1, 0]


class TestSpecFile:
    def test_round_trip(self, tmp_path):
        spec = ws_spec(casing=Casing.LOWER, max_len=77)
        path = tmp_path / "tok.spec"
        write_tokenizer_spec(spec, path)
        loaded = read_tokenizer_spec(path)
        assert loaded == spec

    def test_wordpiece_round_trip(self, tmp_path):
        path = tmp_path / "tok.spec"
        write_tokenizer_spec(wp_spec(), path)
        loaded = read_tokenizer_spec(path)
        assert loaded.is_wordpiece
        assert loaded.vocabulary == WP_VOCAB

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "tok.spec"
        path.write_text("a\t1\n</s>\t0\n")
        with pytest.raises(ValueError):
            read_tokenizer_spec(path)

    def test_build_whitespace_spec_is_deterministic(self):
        texts = ["b a", "c a"]
        spec1 = build_whitespace_spec(texts)
        spec2 = build_whitespace_spec(list(reversed(texts)))
        assert spec1 == spec2
        assert spec1.vocabulary["</s>"] == 0


class TestReferenceBackend:
    def test_bit_identical_across_instances(self):
        batch = tokenize_batch(["a b", "b"], ws_spec())
        out1 = reference_backend(dim=8, seed=3).evaluate(batch)
        out2 = reference_backend(dim=8, seed=3).evaluate(batch)
        assert np.array_equal(out1.hidden_states, out2.hidden_states)

    def test_seed_changes_output(self):
        batch = tokenize_batch(["a"], ws_spec())
        out1 = reference_backend(dim=8, seed=3).evaluate(batch)
        out2 = reference_backend(dim=8, seed=4).evaluate(batch)
        assert not np.array_equal(out1.hidden_states, out2.hidden_states)

    def test_shape_contract(self):
        batch = tokenize_batch(["a"], ws_spec())
        out = reference_backend(dim=3, seed=0).evaluate(batch)
        assert out.hidden_states.shape == (1, 1, 3)
        assert out.dim == 3

    def test_same_token_same_position_same_vector(self):
        backend = reference_backend(dim=4, seed=9)
        batch = tokenize_batch(["a a", "a b"], ws_spec())
        out = backend.evaluate(batch)
        assert np.array_equal(out.hidden_states[0, 0], out.hidden_states[1, 0])
        assert not np.array_equal(out.hidden_states[0, 0], out.hidden_states[0, 1])

    def test_unit_variance(self):
        backend = reference_backend(dim=4000, seed=1)
        batch = tokenize_batch(["a"], ws_spec())
        vec = backend.evaluate(batch).hidden_states[0, 0]
        assert abs(vec.var() - 1.0) < 0.1

    def test_rejects_bad_dim(self):
        with pytest.raises(ValueError):
            reference_backend(dim=0, seed=0)


class TestLoadBackend:
    def test_loads_valid_384_dim_artifact(self, torchscript_artifact):
        backend = load_backend(torchscript_artifact(dim=384))
        assert backend.dim == 384
        batch = tokenize_batch(["tok1 tok2"], ws_spec(vocab={"</s>": 0, "tok1": 1, "tok2": 2}))
        out = backend.evaluate(batch)
        assert out.hidden_states.shape == (1, 2, 384)

    def test_missing_path(self, tmp_path):
        with pytest.raises(ModelNotFound):
            load_backend(tmp_path / "nowhere")

    def test_corrupted_manifest(self, torchscript_artifact):
        artifact = torchscript_artifact(dim=8)
        (artifact / "manifest.json").write_text("{corrupt")
        with pytest.raises(FormatMismatch):
            load_backend(artifact)

    def test_wrong_format_value(self, torchscript_artifact):
        artifact = torchscript_artifact(dim=8)
        (artifact / "manifest.json").write_text('{"format": "pickle", "dim": 8}')
        with pytest.raises(FormatMismatch) as err:
            load_backend(artifact)
        assert err.value.found == "pickle"

    def test_declared_dim_mismatch(self, torchscript_artifact):
        artifact = torchscript_artifact(dim=8, declared_dim=16)
        with pytest.raises(DimMismatch) as err:
            load_backend(artifact)
        assert err.value.declared == 16
        assert err.value.actual == 8

    def test_missing_encoder_file(self, torchscript_artifact):
        artifact = torchscript_artifact(dim=8)
        (artifact / "encoder.pt").unlink()
        with pytest.raises(ModelNotFound):
            load_backend(artifact)


@given(st.lists(st.sampled_from(["a", "b", "a b", "b a b"]), min_size=1, max_size=6))
def test_tokenize_rows_depend_only_on_their_text(texts):
    spec = ws_spec()
    batch = tokenize_batch(texts, spec)
    for i, text in enumerate(texts):
        alone = tokenize_batch([text], spec)
        n = alone.lengths[0]
        assert batch.lengths[i] == n
        assert batch.ids[i, :n].tolist() == alone.ids[0].tolist()
