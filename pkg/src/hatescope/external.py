"""Adapter for pretrained BERT-architecture masked language models from ``transformers``.

The attribution entry point is the word-embedding lookup: ``embed`` returns word
vectors only and ``encode`` feeds them through ``inputs_embeds``, so position and
segment embeddings are added inside the model and cancel out of input minus
baseline. Weights are cast to float64 like the built-in encoder.

``transformers`` is imported on first use; the rest of the package does not need it.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import torch
from torch import nn

from .encoder import FORMAT_VERSION, EmbeddingSequence, EncoderError, EncoderOutput, Fill, Selector
from .encoder import gradient_wrt_embeddings, mlm_predict, pad_batch
from .tokenizer import TokenizedText, WordPieceTokenizer


class ExternalEncoder(nn.Module):
    kind = "external"

    def __init__(self, model: nn.Module, tokenizer: WordPieceTokenizer):
        super().__init__()
        if not (hasattr(model, "bert") and hasattr(model, "cls")):
            raise EncoderError(f"{type(model).__name__} is not a BERT masked-language model")
        vocab_size = model.get_input_embeddings().num_embeddings
        if vocab_size != len(tokenizer):
            raise EncoderError(f"model vocabulary has {vocab_size} entries, tokenizer {len(tokenizer)}")
        limit = model.config.max_position_embeddings
        if tokenizer.max_length > limit:
            raise EncoderError(f"max_length {tokenizer.max_length} exceeds the model's {limit} positions")
        self.model = model.double()
        self.tokenizer = tokenizer
        self.eval()

    @classmethod
    def from_pretrained(cls, name_or_path: str | Path, max_length: int = 128) -> "ExternalEncoder":
        """Load a checkpoint directory (or hub name) holding a BERT masked-LM model and
        its WordPiece ``vocab.txt``."""
        from transformers import AutoTokenizer

        model = _load_model(name_or_path)
        local = Path(name_or_path) / "vocab.txt"
        try:
            if local.exists():
                tokenizer = WordPieceTokenizer.load(local, max_length)
            else:
                index = AutoTokenizer.from_pretrained(str(name_or_path)).get_vocab()
                tokenizer = WordPieceTokenizer(sorted(index, key=index.get), max_length)
        except ValueError as exc:
            raise EncoderError(str(exc)) from exc
        return cls(model, tokenizer)

    @property
    def embedding_dim(self) -> int:
        return self.model.config.hidden_size

    def tokenize(self, text: str) -> TokenizedText:
        return self.tokenizer.tokenize(text)

    def embed_ids(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= len(self.tokenizer)):
            raise EncoderError("token id outside the vocabulary")
        return self.model.get_input_embeddings()(ids)

    def embed(self, t: TokenizedText) -> EmbeddingSequence:
        return EmbeddingSequence(self.embed_ids(torch.tensor(t.ids, dtype=torch.long)))

    def forward(self, vectors: torch.Tensor, key_mask: torch.Tensor | None = None) -> torch.Tensor:
        if vectors.shape[-1] != self.embedding_dim:
            raise EncoderError(f"embedding dimension {vectors.shape[-1]} != {self.embedding_dim}")
        single = vectors.dim() == 2
        x = vectors[None] if single else vectors
        mask = None if key_mask is None else (key_mask[None] if single else key_mask).long()
        out = self.model.bert(inputs_embeds=x, attention_mask=mask).last_hidden_state
        return out[0] if single else out

    def encode(self, e: EmbeddingSequence, key_mask: torch.Tensor | None = None) -> EncoderOutput:
        return EncoderOutput(self(e.vectors, key_mask))

    def gradient_wrt_embeddings(self, e: EmbeddingSequence, target: Selector) -> torch.Tensor:
        return gradient_wrt_embeddings(self, e, target)

    def mlm_logits(self, contextual: torch.Tensor) -> torch.Tensor:
        return self.model.cls(contextual)

    def mlm_predict(self, t: TokenizedText, n: int) -> list[list[Fill]]:
        return mlm_predict(self, t, n)

    def batch(self, tokenized: Sequence[TokenizedText]) -> tuple[torch.Tensor, torch.Tensor]:
        return pad_batch(self.tokenizer, tokenized)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.model.save_pretrained(directory / "model")
        self.tokenizer.save(directory / "vocab.txt")
        manifest = {"format_version": FORMAT_VERSION, "kind": self.kind, "max_length": self.tokenizer.max_length}
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory: str | Path, manifest: dict) -> "ExternalEncoder":
        directory = Path(directory)
        tokenizer = WordPieceTokenizer.load(directory / "vocab.txt", manifest["max_length"])
        return cls(_load_model(directory / "model"), tokenizer)


def _load_model(name_or_path: str | Path) -> nn.Module:
    from transformers import AutoModelForMaskedLM

    # eager attention keeps gradients exact; float64 keeps a save/load round trip exact
    return AutoModelForMaskedLM.from_pretrained(str(name_or_path), attn_implementation="eager",
                                                dtype=torch.float64)
