"""Tokenization into padded batches and pluggable encoder backends.

Two tokenizer behaviours are driven by the same TokenizerSpec:

* word-piece mode, selected when the vocabulary carries an "[UNK]" entry:
  BERT-style basic tokenization (punctuation splitting, optional lowercasing
  with accent stripping) followed by greedy longest-match word pieces with a
  "##" continuation prefix; sequences are wrapped in "[CLS]"/"[SEP]" when
  those entries exist.
* whitespace mode, used by the built-in test tokenizer: split on whitespace,
  unknown tokens fall back to a CRC32-derived id inside the vocabulary range.

Padding always uses the end-of-sentence token; batches are padded to the
longest sequence they contain, never to a fixed length.
"""

from __future__ import annotations

import abc
import json
import unicodedata
import zlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DimMismatch, EmptyBatch, EmptyText, FormatMismatch, ModelNotFound

DEFAULT_MAX_INPUT_LENGTH = 512

_UNK = "[UNK]"
_CLS = "[CLS]"
_SEP = "[SEP]"
_WORDPIECE_PREFIX = "##"
_MAX_CHARS_PER_WORD = 100


class Casing(str, Enum):
    PRESERVE = "preserve"
    LOWER = "lower"


@dataclass(frozen=True)
class TokenizerSpec:
    vocabulary: dict[str, int]
    eos_token_id: int
    max_input_length: int = DEFAULT_MAX_INPUT_LENGTH
    casing: Casing = Casing.PRESERVE

    def __post_init__(self):
        if self.max_input_length < 1:
            raise ValueError("max_input_length must be >= 1")
        if self.eos_token_id not in set(self.vocabulary.values()):
            raise ValueError(f"eos_token_id {self.eos_token_id} is not a vocabulary id")

    @property
    def is_wordpiece(self) -> bool:
        return _UNK in self.vocabulary


@dataclass(frozen=True)
class TokenBatch:
    ids: np.ndarray  # B x L int64
    attention_mask: np.ndarray  # B x L int64, 1 for real tokens
    lengths: tuple[int, ...]  # pre-padding lengths, <= max_input_length


@dataclass(frozen=True)
class EncoderOutput:
    hidden_states: np.ndarray  # B x L x D
    attention_mask: np.ndarray  # B x L, copied from the input batch
    dim: int


# --- tokenization -----------------------------------------------------------

def _is_punctuation(ch: str) -> bool:
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def _basic_tokens(text: str, lower: bool) -> list[str]:
    """Whitespace split, then split punctuation into standalone tokens."""
    words = []
    for word in text.split():
        if lower:
            word = word.lower()
            word = "".join(c for c in unicodedata.normalize("NFD", word)
                           if unicodedata.category(c) != "Mn")
        current = []
        for ch in word:
            if _is_punctuation(ch):
                if current:
                    words.append("".join(current))
                    current = []
                words.append(ch)
            else:
                current.append(ch)
        if current:
            words.append("".join(current))
    return words


def _wordpiece_ids(text: str, spec: TokenizerSpec) -> list[int]:
    vocab = spec.vocabulary
    unk = vocab[_UNK]
    pieces: list[int] = []
    for word in _basic_tokens(text, spec.casing is Casing.LOWER):
        if len(word) > _MAX_CHARS_PER_WORD:
            pieces.append(unk)
            continue
        start = 0
        word_ids: list[int] = []
        while start < len(word):
            end = len(word)
            match = None
            while start < end:
                piece = word[start:end]
                if start > 0:
                    piece = _WORDPIECE_PREFIX + piece
                if piece in vocab:
                    match = vocab[piece]
                    break
                end -= 1
            if match is None:
                word_ids = [unk]
                break
            word_ids.append(match)
            start = end
        pieces.extend(word_ids)

    if _CLS in vocab and _SEP in vocab:
        budget = spec.max_input_length - 2
        pieces = [vocab[_CLS]] + pieces[:budget] + [vocab[_SEP]]
    else:
        pieces = pieces[: spec.max_input_length]
    return pieces


def _whitespace_ids(text: str, spec: TokenizerSpec) -> list[int]:
    if spec.casing is Casing.LOWER:
        text = text.lower()
    vocab = spec.vocabulary
    id_range = max(vocab.values()) + 1
    ids = [
        vocab.get(tok, zlib.crc32(tok.encode("utf-8")) % id_range)
        for tok in text.split()
    ]
    return ids[: spec.max_input_length]


def tokenize_batch(texts: list[str], spec: TokenizerSpec) -> TokenBatch:
    """Tokenize texts into one batch padded to its longest sequence.

    Over-long sequences are truncated to exactly max_input_length; padded
    positions hold the end-of-sentence id and are masked out.
    """
    if not texts:
        raise EmptyBatch("tokenize_batch requires at least one text")
    rows: list[list[int]] = []
    encode = _wordpiece_ids if spec.is_wordpiece else _whitespace_ids
    for i, text in enumerate(texts):
        if not text.strip():
            raise EmptyText(i)
        rows.append(encode(text, spec))

    lengths = tuple(len(r) for r in rows)
    longest = max(lengths)
    ids = np.full((len(rows), longest), spec.eos_token_id, dtype=np.int64)
    mask = np.zeros((len(rows), longest), dtype=np.int64)
    for i, row in enumerate(rows):
        ids[i, : len(row)] = row
        mask[i, : len(row)] = 1
    return TokenBatch(ids=ids, attention_mask=mask, lengths=lengths)


def build_whitespace_spec(texts: list[str], max_input_length: int = DEFAULT_MAX_INPUT_LENGTH,
                          casing: Casing = Casing.PRESERVE) -> TokenizerSpec:
    """Test-double tokenizer: vocabulary from the given corpus, eos id 0."""
    tokens = set()
    for text in texts:
        if casing is Casing.LOWER:
            text = text.lower()
        tokens.update(text.split())
    vocab = {"</s>": 0}
    for i, tok in enumerate(sorted(tokens), start=1):
        vocab.setdefault(tok, i)
    return TokenizerSpec(vocabulary=vocab, eos_token_id=0,
                         max_input_length=max_input_length, casing=casing)


# --- tokenizer spec file ----------------------------------------------------

def write_tokenizer_spec(spec: TokenizerSpec, path: str | Path) -> None:
    """Write the tokenizer spec as header lines followed by token<TAB>id entries."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"eos_id={spec.eos_token_id}\n")
        f.write(f"max_len={spec.max_input_length}\n")
        f.write(f"casing={spec.casing.value}\n")
        for token, token_id in sorted(spec.vocabulary.items(), key=lambda kv: (kv[1], kv[0])):
            f.write(f"{token}\t{token_id}\n")


def read_tokenizer_spec(path: str | Path) -> TokenizerSpec:
    headers: dict[str, str] = {}
    vocab: dict[str, int] = {}
    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.rstrip("\n")
            if not line:
                continue
            if "\t" in line:
                token, _, token_id = line.rpartition("\t")
                vocab[token] = int(token_id)
            elif "=" in line:
                key, _, value = line.partition("=")
                headers[key] = value
            else:
                raise ValueError(f"unrecognised tokenizer spec line: {line!r}")
    try:
        return TokenizerSpec(
            vocabulary=vocab,
            eos_token_id=int(headers["eos_id"]),
            max_input_length=int(headers["max_len"]),
            casing=Casing(headers.get("casing", "preserve")),
        )
    except KeyError as e:
        raise ValueError(f"tokenizer spec missing header {e}") from e


# --- backends ----------------------------------------------------------------

class EncoderBackend(abc.ABC):
    """Produces per-token hidden states for a token batch."""

    name: str
    dim: int
    thread_safe: bool = False

    @abc.abstractmethod
    def evaluate(self, batch: TokenBatch) -> EncoderOutput:
        raise NotImplementedError


class ReferenceBackend(EncoderBackend):
    """Deterministic pseudorandom encoder used as a model-free test double.

    The hidden state for token id v at position t is a fixed unit-variance
    Gaussian vector keyed by (seed, v, t), so identical inputs are
    bit-identical across runs regardless of batching.
    """

    thread_safe = True

    def __init__(self, dim: int, seed: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.name = f"reference(dim={dim}, seed={seed})"
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def _vector(self, token_id: int, position: int) -> np.ndarray:
        key = (token_id, position)
        vec = self._cache.get(key)
        if vec is None:
            ss = np.random.SeedSequence([self.seed, int(token_id), int(position)])
            vec = np.random.Generator(np.random.Philox(ss)).standard_normal(self.dim)
            self._cache[key] = vec
        return vec

    def evaluate(self, batch: TokenBatch) -> EncoderOutput:
        b, l = batch.ids.shape
        hidden = np.empty((b, l, self.dim), dtype=np.float64)
        for i in range(b):
            for t in range(l):
                hidden[i, t] = self._vector(int(batch.ids[i, t]), t)
        return EncoderOutput(hidden_states=hidden, attention_mask=batch.attention_mask.copy(),
                             dim=self.dim)


def reference_backend(dim: int, seed: int) -> EncoderBackend:
    return ReferenceBackend(dim=dim, seed=seed)


ARTIFACT_FORMAT = "torchscript"
MANIFEST_FILE = "manifest.json"
ENCODER_FILE = "encoder.pt"
TOKENIZER_FILE = "tokenizer.spec"


class TorchScriptBackend(EncoderBackend):
    """Encoder loaded from a serialized TorchScript module.

    The module takes (ids, attention_mask) int64 tensors and returns
    B x L x D hidden states. Evaluation is serialized per instance.
    """

    def __init__(self, module, dim: int, name: str):
        self._module = module
        self.dim = dim
        self.name = name

    def evaluate(self, batch: TokenBatch) -> EncoderOutput:
        import torch

        with torch.no_grad():
            out = self._module(torch.from_numpy(batch.ids),
                               torch.from_numpy(batch.attention_mask))
        hidden = out.numpy()
        if hidden.ndim != 3 or hidden.shape[:2] != batch.ids.shape:
            raise DimMismatch(self.dim, -1)
        return EncoderOutput(hidden_states=hidden, attention_mask=batch.attention_mask.copy(),
                             dim=self.dim)


def load_backend(model_path: str | Path) -> EncoderBackend:
    """Load an exported encoder artifact directory.

    The directory must hold manifest.json (declaring format and width),
    encoder.pt, and tokenizer.spec. The declared width is probed against an
    actual forward pass.
    """
    model_path = Path(model_path)
    if not model_path.exists():
        raise ModelNotFound(f"model artifact not found at {model_path}")
    manifest_path = model_path / MANIFEST_FILE
    encoder_path = model_path / ENCODER_FILE
    for required in (manifest_path, encoder_path, model_path / TOKENIZER_FILE):
        if not required.exists():
            raise ModelNotFound(f"model artifact is missing {required.name}")

    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatMismatch(ARTIFACT_FORMAT, "unreadable manifest") from e
    fmt = manifest.get("format")
    if fmt != ARTIFACT_FORMAT:
        raise FormatMismatch(ARTIFACT_FORMAT, str(fmt))
    dim = int(manifest.get("dim", 0))
    if dim < 1:
        raise FormatMismatch(ARTIFACT_FORMAT, "manifest missing a positive 'dim'")

    import torch

    try:
        module = torch.jit.load(str(encoder_path), map_location="cpu")
    except Exception as e:
        raise FormatMismatch(ARTIFACT_FORMAT, f"unloadable encoder: {e}") from e
    module.eval()

    spec = read_tokenizer_spec(model_path / TOKENIZER_FILE)
    probe_ids = torch.full((1, 2), spec.eos_token_id, dtype=torch.int64)
    probe_mask = torch.ones((1, 2), dtype=torch.int64)
    with torch.no_grad():
        probe = module(probe_ids, probe_mask)
    if probe.ndim != 3 or probe.shape[-1] != dim:
        actual = probe.shape[-1] if probe.ndim == 3 else -1
        raise DimMismatch(dim, int(actual))

    return TorchScriptBackend(module, dim=dim, name=f"torchscript({model_path.name})")


def load_artifact_tokenizer(model_path: str | Path) -> TokenizerSpec:
    return read_tokenizer_spec(Path(model_path) / TOKENIZER_FILE)
