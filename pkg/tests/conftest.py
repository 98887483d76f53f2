import json

import numpy as np
import pytest

from mqseq.encoder import Casing, TokenizerSpec, write_tokenizer_spec


@pytest.fixture
def torchscript_artifact(tmp_path):
    """Build a tiny TorchScript encoder artifact directory of a chosen width."""

    def build(dim: int = 384, declared_dim: int | None = None, vocab_size: int = 32):
        import torch

        class TinyEncoder(torch.nn.Module):
            def __init__(self):
                super().__init__()
                torch.manual_seed(7)
                self.emb = torch.nn.Embedding(vocab_size, dim)

            def forward(self, ids, mask):
                return self.emb(ids) * mask.unsqueeze(-1).to(self.emb.weight.dtype)

        module = TinyEncoder().eval()
        example = (torch.zeros((1, 2), dtype=torch.int64),
                   torch.ones((1, 2), dtype=torch.int64))
        with torch.no_grad():
            traced = torch.jit.trace(module, example)

        artifact = tmp_path / f"artifact_{dim}"
        artifact.mkdir()
        torch.jit.save(traced, str(artifact / "encoder.pt"))
        vocab = {"</s>": 0}
        vocab.update({f"tok{i}": i for i in range(1, vocab_size)})
        spec = TokenizerSpec(vocabulary=vocab, eos_token_id=0,
                             max_input_length=16, casing=Casing.PRESERVE)
        write_tokenizer_spec(spec, artifact / "tokenizer.spec")
        manifest = {"format": "torchscript", "version": 1,
                    "dim": declared_dim if declared_dim is not None else dim,
                    "max_len": 16, "eos_id": 0}
        (artifact / "manifest.json").write_text(json.dumps(manifest))
        return artifact

    return build


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
