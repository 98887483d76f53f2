"""Reference reader for the exported tokenizer spec file.

This mirrors how the pipeline interprets a word-piece spec (BERT-style basic
tokenization, greedy longest-match pieces, [CLS]/[SEP] wrapping) and is used
to check that the exported file reproduces the source tokenizer exactly.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from pathlib import Path

UNK = "[UNK]"
CLS = "[CLS]"
SEP = "[SEP]"
CONTINUATION = "##"
MAX_CHARS_PER_WORD = 100


@dataclass(frozen=True)
class SpecTokenizer:
    vocab: dict[str, int]
    eos_id: int
    max_len: int
    lower: bool

    def encode(self, text: str) -> list[int]:
        pieces = []
        unk = self.vocab[UNK]
        for word in _basic_tokens(text, self.lower):
            if len(word) > MAX_CHARS_PER_WORD:
                pieces.append(unk)
                continue
            pieces.extend(_greedy_pieces(word, self.vocab, unk))
        if CLS in self.vocab and SEP in self.vocab:
            return [self.vocab[CLS]] + pieces[: self.max_len - 2] + [self.vocab[SEP]]
        return pieces[: self.max_len]


def read_spec(path: str | Path) -> SpecTokenizer:
    headers: dict[str, str] = {}
    vocab: dict[str, int] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if not raw:
            continue
        if "\t" in raw:
            token, _, token_id = raw.rpartition("\t")
            vocab[token] = int(token_id)
        else:
            key, _, value = raw.partition("=")
            headers[key] = value
    return SpecTokenizer(
        vocab=vocab,
        eos_id=int(headers["eos_id"]),
        max_len=int(headers["max_len"]),
        lower=headers.get("casing") == "lower",
    )


def _is_punctuation(ch: str) -> bool:
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def _basic_tokens(text: str, lower: bool) -> list[str]:
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


def _greedy_pieces(word: str, vocab: dict[str, int], unk: int) -> list[int]:
    ids: list[int] = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = CONTINUATION + piece
            if piece in vocab:
                match = vocab[piece]
                break
            end -= 1
        if match is None:
            return [unk]
        ids.append(match)
        start = end
    return ids
