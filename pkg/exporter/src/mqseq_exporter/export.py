"""One-off conversion of a pretrained sentence encoder into the pipeline artifact.

The artifact directory holds:
  encoder.pt      TorchScript module mapping (ids, attention_mask) int64
                  tensors to B x L x D hidden states
  tokenizer.spec  text file: eos_id/max_len/casing headers + token<TAB>id vocab
  manifest.json   declared format, width, padding id, and file digests
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import DimCheckFailed, SourceUnavailable

ARTIFACT_FORMAT = "torchscript"
ARTIFACT_VERSION = 1
ENCODER_FILE = "encoder.pt"
TOKENIZER_FILE = "tokenizer.spec"
MANIFEST_FILE = "manifest.json"
DEFAULT_MAX_LEN = 512

_UNREASONABLE_LENGTH = 10**6  # transformers uses a huge sentinel when unset


@dataclass(frozen=True)
class ExportManifest:
    source_model: str
    dim: int
    max_len: int
    eos_id: int
    digests: dict[str, str]

    def to_json(self) -> str:
        payload = {"format": ARTIFACT_FORMAT, "version": ARTIFACT_VERSION, **asdict(self)}
        return json.dumps(payload, indent=2, sort_keys=True)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _resolve_max_len(tokenizer, config) -> int:
    candidates = []
    declared = getattr(tokenizer, "model_max_length", None)
    if declared and declared < _UNREASONABLE_LENGTH:
        candidates.append(int(declared))
    positions = getattr(config, "max_position_embeddings", None)
    if positions:
        candidates.append(int(positions))
    candidates.append(DEFAULT_MAX_LEN)
    return min(candidates)


def _resolve_eos_id(tokenizer) -> int:
    # the pipeline pads with the end-of-sentence token; BERT-style models
    # use [SEP] in that role
    for attr in ("sep_token_id", "eos_token_id", "pad_token_id"):
        token_id = getattr(tokenizer, attr, None)
        if token_id is not None:
            return int(token_id)
    raise SourceUnavailable("tokenizer", ValueError("no sentence-end or pad token id"))


def write_tokenizer_spec(vocab: dict[str, int], eos_id: int, max_len: int,
                         lower: bool, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"eos_id={eos_id}\n")
        f.write(f"max_len={max_len}\n")
        f.write(f"casing={'lower' if lower else 'preserve'}\n")
        for token, token_id in sorted(vocab.items(), key=lambda kv: (kv[1], kv[0])):
            f.write(f"{token}\t{token_id}\n")


def export_model(model_id: str, out_dir: str | Path,
                 expect_dim: int | None = None) -> ExportManifest:
    """Serialize the encoder and its tokenizer; returns the written manifest.

    model_id is a local directory or a hub identifier. Raises
    SourceUnavailable when it cannot be loaded, DimCheckFailed when the
    model width differs from expect_dim.
    """
    import torch
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModel.from_pretrained(model_id)
    except Exception as e:
        raise SourceUnavailable(str(model_id), e) from e
    model.eval()

    dim = int(model.config.hidden_size)
    if expect_dim is not None and dim != expect_dim:
        raise DimCheckFailed(expect_dim, dim)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    class HiddenStates(torch.nn.Module):
        def __init__(self, inner):
            super().__init__()
            self.inner = inner

        def forward(self, ids, mask):
            return self.inner(input_ids=ids, attention_mask=mask).last_hidden_state

    eos_id = _resolve_eos_id(tokenizer)
    wrapper = HiddenStates(model).eval()
    # trace with a ragged batch so masked padding is part of the recorded graph
    example_ids = torch.full((2, 4), eos_id, dtype=torch.int64)
    example_mask = torch.tensor([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=torch.int64)
    with torch.no_grad():
        traced = torch.jit.trace(wrapper, (example_ids, example_mask))
        probe = traced(example_ids, example_mask)
    if probe.shape != (2, 4, dim):
        raise DimCheckFailed(dim, int(probe.shape[-1]))

    encoder_path = out_dir / ENCODER_FILE
    torch.jit.save(traced, str(encoder_path))

    tokenizer_path = out_dir / TOKENIZER_FILE
    write_tokenizer_spec(
        vocab=tokenizer.get_vocab(),
        eos_id=eos_id,
        max_len=_resolve_max_len(tokenizer, model.config),
        lower=bool(getattr(tokenizer, "do_lower_case", False)),
        path=tokenizer_path,
    )

    manifest = ExportManifest(
        source_model=str(model_id),
        dim=dim,
        max_len=_resolve_max_len(tokenizer, model.config),
        eos_id=eos_id,
        digests={
            ENCODER_FILE: _sha256(encoder_path),
            TOKENIZER_FILE: _sha256(tokenizer_path),
        },
    )
    (out_dir / MANIFEST_FILE).write_text(manifest.to_json(), encoding="utf-8")
    return manifest


def read_manifest(out_dir: str | Path) -> ExportManifest:
    payload = json.loads((Path(out_dir) / MANIFEST_FILE).read_text(encoding="utf-8"))
    return ExportManifest(
        source_model=payload["source_model"],
        dim=int(payload["dim"]),
        max_len=int(payload["max_len"]),
        eos_id=int(payload["eos_id"]),
        digests=dict(payload["digests"]),
    )


def verify_manifest(out_dir: str | Path) -> bool:
    """Re-hash the emitted files against the digests recorded at export time."""
    out_dir = Path(out_dir)
    manifest = read_manifest(out_dir)
    return all(_sha256(out_dir / name) == digest
               for name, digest in manifest.digests.items())
