"""Parity verification between the source model and the exported artifact.

The source side computes pooled, normalized embeddings directly in the source
framework. The artifact side goes through the consuming pipeline's public
command-line interface: sample questions are written in its record format,
embedded with the exported artifact, and read back from its binary cache
(little-endian: "MQSB" | version u32 | N u64 | D u32 | normalized u8 |
per-id u16 length + UTF-8 bytes | N*D float32 row-major).
"""

from __future__ import annotations

import json
import struct
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParityFailure, SourceUnavailable
from .export import TOKENIZER_FILE
from .wordpiece import read_spec

MAX_ABS_TOLERANCE = 1e-4
MIN_COSINE = 0.9999
CACHE_MAGIC = b"MQSB"


@dataclass
class ParityReport:
    n_texts: int
    max_abs_diff: float
    worst_text: int
    worst_dim: int
    source_value: float
    artifact_value: float
    cosines: list[float] = field(default_factory=list)
    token_mismatches: list[int] = field(default_factory=list)

    @property
    def min_cosine(self) -> float:
        return min(self.cosines)

    def summary(self) -> str:
        return (f"{self.n_texts} texts: max |diff| {self.max_abs_diff:.2e} at "
                f"text {self.worst_text} dim {self.worst_dim} "
                f"({self.source_value:.6f} vs {self.artifact_value:.6f}); "
                f"min cosine {self.min_cosine:.6f}; "
                f"token mismatches {self.token_mismatches or 'none'}")


def default_pipeline_command() -> list[str]:
    return [sys.executable, "-m", "mqseq"]


def source_embeddings(model_id: str, texts: list[str], max_len: int) -> np.ndarray:
    """Mean-pooled, L2-normalized embeddings computed in the source framework."""
    import torch
    import torch.nn.functional as F
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModel.from_pretrained(model_id).eval()
    except Exception as e:
        raise SourceUnavailable(str(model_id), e) from e

    encoded = tokenizer(texts, padding=True, truncation=True, max_length=max_len,
                        return_tensors="pt")
    with torch.no_grad():
        hidden = model(input_ids=encoded["input_ids"],
                       attention_mask=encoded["attention_mask"]).last_hidden_state
    mask = encoded["attention_mask"].unsqueeze(-1).to(hidden.dtype)
    pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1)
    return F.normalize(pooled, p=2, dim=1).numpy().astype(np.float32)


def source_token_ids(model_id: str, texts: list[str], max_len: int) -> list[list[int]]:
    from transformers import AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(model_id)
    return [tokenizer(t, truncation=True, max_length=max_len)["input_ids"] for t in texts]


def read_embedding_cache(path: str | Path) -> tuple[list[str], np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != CACHE_MAGIC:
        raise ParityFailure(f"{path} is not an embedding cache")
    _, n, dim, _ = struct.unpack_from("<IQIB", blob, 4)
    offset = 4 + struct.calcsize("<IQIB")
    ids = []
    for _ in range(n):
        (length,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        ids.append(blob[offset : offset + length].decode("utf-8"))
        offset += length
    data = np.frombuffer(blob, dtype="<f4", count=n * dim, offset=offset).reshape(n, dim)
    return ids, data.copy()


def _write_record_file(texts: list[str], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, text in enumerate(texts):
            f.write(json.dumps({"id": f"sample-{i:03d}", "question": text,
                                "subject_name": "Sample"}, ensure_ascii=False) + "\n")


def artifact_embeddings(artifact_dir: str | Path, texts: list[str],
                        workdir: str | Path,
                        pipeline_cmd: list[str] | None = None) -> np.ndarray:
    """Embeddings produced by the consuming pipeline from the exported artifact."""
    pipeline_cmd = pipeline_cmd or default_pipeline_command()
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    records = workdir / "samples.jsonl"
    _write_record_file(texts, records)
    out_dir = workdir / "out"

    def run(argv):
        result = subprocess.run([*pipeline_cmd, *argv], capture_output=True, text=True)
        if result.returncode != 0:
            raise ParityFailure(f"pipeline command {argv[0]} failed "
                                f"(exit {result.returncode}): {result.stderr.strip()}")

    run(["ingest", "--train", str(records), "--dev", str(records),
         "--test", str(records), "--out-dir", str(out_dir)])
    run(["embed", "--out-dir", str(out_dir), "--backend", "loaded",
         "--model", str(artifact_dir), "--split", "train"])

    ids, data = read_embedding_cache(out_dir / "cache" / "embeddings_train.mqsb")
    expected = [f"sample-{i:03d}" for i in range(len(texts))]
    if ids != expected:
        raise ParityFailure("cache rows are not aligned with the sample texts")
    return data


def verify_parity(texts: list[str], artifact_dir: str | Path, source_id: str,
                  workdir: str | Path | None = None,
                  pipeline_cmd: list[str] | None = None,
                  max_abs_tolerance: float = MAX_ABS_TOLERANCE,
                  min_cosine: float = MIN_COSINE) -> ParityReport:
    """Compare both embedding paths and the tokenizations; raises ParityFailure."""
    if not texts:
        raise ValueError("parity verification needs at least one sample text")

    artifact_dir = Path(artifact_dir)
    spec = read_spec(artifact_dir / TOKENIZER_FILE)

    source = source_embeddings(source_id, texts, spec.max_len)
    with tempfile.TemporaryDirectory() as scratch:
        via_artifact = artifact_embeddings(artifact_dir, texts,
                                           workdir if workdir is not None else scratch,
                                           pipeline_cmd)

    if source.shape != via_artifact.shape:
        raise ParityFailure(f"embedding shapes differ: source {source.shape} "
                            f"vs artifact {via_artifact.shape}")

    diff = np.abs(source.astype(np.float64) - via_artifact.astype(np.float64))
    worst_flat = int(diff.argmax())
    worst_text, worst_dim = np.unravel_index(worst_flat, diff.shape)
    cosines = [float(np.dot(source[i].astype(np.float64), via_artifact[i].astype(np.float64))
                     / (np.linalg.norm(source[i]) * np.linalg.norm(via_artifact[i])))
               for i in range(len(texts))]

    hf_ids = source_token_ids(source_id, texts, spec.max_len)
    token_mismatches = [i for i, text in enumerate(texts) if spec.encode(text) != hf_ids[i]]

    report = ParityReport(
        n_texts=len(texts),
        max_abs_diff=float(diff.max()),
        worst_text=int(worst_text),
        worst_dim=int(worst_dim),
        source_value=float(source[worst_text, worst_dim]),
        artifact_value=float(via_artifact[worst_text, worst_dim]),
        cosines=cosines,
        token_mismatches=token_mismatches,
    )
    if report.max_abs_diff > max_abs_tolerance or report.min_cosine < min_cosine \
            or token_mismatches:
        raise ParityFailure(f"export parity violated: {report.summary()}")
    return report
