"""Text encoders: the adapter contract and a small built-in self-attention encoder.

Every encoder exposes the same five operations used downstream:

``tokenize``  text -> :class:`TokenizedText` with subword/word alignment
``embed``     token + position lookup, the entry point for attribution
``encode``    contextual vectors; ``pooled`` is the start-marker position
``gradient_wrt_embeddings``  exact autograd gradient of a scalar selector
``mlm_predict``  ranked vocabulary fills for each mask position
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .tokenizer import SPECIAL, TokenizedText, WordPieceTokenizer, build_vocab

FORMAT_VERSION = 1


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    embedding_dim: int = 64
    layer_count: int = 2
    head_count: int = 2
    max_length: int = 64
    mask_token_id: int = 4
    pad_token_id: int = 0
    seed: int = 0
    ffn_dim: int | None = None
    dropout: float = 0.1

    def __post_init__(self):
        for name in ("vocab_size", "embedding_dim", "layer_count", "head_count", "max_length"):
            if getattr(self, name) <= 0:
                raise EncoderError(f"{name} must be positive")
        if self.embedding_dim % self.head_count:
            raise EncoderError("embedding_dim must be divisible by head_count")
        for name in ("mask_token_id", "pad_token_id"):
            if not 0 <= getattr(self, name) < self.vocab_size:
                raise EncoderError(f"{name} outside the vocabulary")


@dataclass
class EmbeddingSequence:
    vectors: torch.Tensor  # (n, d) or (batch, n, d)

    @property
    def length(self) -> int:
        return self.vectors.shape[-2]

    @property
    def dim(self) -> int:
        return self.vectors.shape[-1]


@dataclass
class EncoderOutput:
    contextual: torch.Tensor  # (..., n, d)

    @property
    def pooled(self) -> torch.Tensor:
        return self.contextual[..., 0, :]


@dataclass(frozen=True)
class Fill:
    id: int
    token: str
    prob: float


Selector = Callable[[EncoderOutput], torch.Tensor]


@runtime_checkable
class TextEncoder(Protocol):
    """Structural contract shared by the built-in encoder and external adapters."""

    embedding_dim: int

    def tokenize(self, text: str) -> TokenizedText: ...

    def embed(self, t: TokenizedText) -> EmbeddingSequence: ...

    def encode(self, e: EmbeddingSequence) -> EncoderOutput: ...

    def gradient_wrt_embeddings(self, e: EmbeddingSequence, target: Selector) -> torch.Tensor: ...

    def mlm_predict(self, t: TokenizedText, n: int) -> list[list[Fill]]: ...


class _Block(nn.Module):
    """Pre-norm transformer layer."""

    def __init__(self, d: int, heads: int, ffn: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.ln2 = nn.LayerNorm(d)
        self.ff_in = nn.Linear(d, ffn)
        self.ff_out = nn.Linear(ffn, d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor | None) -> torch.Tensor:
        *lead, n, d = x.shape
        h = self.ln1(x)
        q, k, v = self.qkv(h).chunk(3, dim=-1)

        def heads(z):
            return z.reshape(*lead, n, self.heads, d // self.heads).transpose(-2, -3)

        q, k, v = heads(q), heads(k), heads(v)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // self.heads)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[..., None, None, :], float("-inf"))
        att = self.drop(scores.softmax(dim=-1))
        ctx = (att @ v).transpose(-2, -3).reshape(*lead, n, d)
        x = x + self.drop(self.proj(ctx))
        return x + self.drop(self.ff_out(F.gelu(self.ff_in(self.ln2(x)))))


class BuiltinEncoder(nn.Module):
    """Small self-attention encoder with a tied masked-language-model head.

    Parameters are float64 so that gradients can be checked against finite
    differences at tight tolerances.
    """

    kind = "builtin"

    def __init__(self, tokenizer: WordPieceTokenizer, config: EncoderConfig):
        super().__init__()
        if config.vocab_size != len(tokenizer):
            raise EncoderError("config.vocab_size does not match the tokenizer")
        if config.max_length != tokenizer.max_length:
            raise EncoderError("config.max_length does not match the tokenizer")
        self.tokenizer = tokenizer
        self.config = config
        d = config.embedding_dim
        with torch.random.fork_rng():
            torch.manual_seed(config.seed)
            self.token_embedding = nn.Embedding(config.vocab_size, d)
            self.position_embedding = nn.Embedding(config.max_length, d)
            nn.init.normal_(self.token_embedding.weight, std=0.1)
            nn.init.normal_(self.position_embedding.weight, std=0.1)
            self.embed_norm = nn.LayerNorm(d)
            self.blocks = nn.ModuleList(
                _Block(d, config.head_count, config.ffn_dim or 4 * d, config.dropout)
                for _ in range(config.layer_count)
            )
            self.final_norm = nn.LayerNorm(d)
            self.mlm_transform = nn.Linear(d, d)
            self.mlm_norm = nn.LayerNorm(d)
            self.mlm_bias = nn.Parameter(torch.zeros(config.vocab_size))
        self.drop = nn.Dropout(config.dropout)
        self.double()
        self.eval()

    @property
    def embedding_dim(self) -> int:
        return self.config.embedding_dim

    @property
    def dtype(self) -> torch.dtype:
        return self.token_embedding.weight.dtype

    def tokenize(self, text: str) -> TokenizedText:
        return self.tokenizer.tokenize(text)

    def embed_ids(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.config.vocab_size):
            raise EncoderError("token id outside the vocabulary")
        n = ids.shape[-1]
        if n > self.config.max_length:
            raise EncoderError(f"sequence of {n} exceeds max_length {self.config.max_length}")
        pos = torch.arange(n)
        return self.token_embedding(ids) + self.position_embedding(pos)

    def embed(self, t: TokenizedText) -> EmbeddingSequence:
        return EmbeddingSequence(self.embed_ids(torch.tensor(t.ids, dtype=torch.long)))

    def forward(self, vectors: torch.Tensor, key_mask: torch.Tensor | None = None) -> torch.Tensor:
        if vectors.shape[-1] != self.config.embedding_dim:
            raise EncoderError(
                f"embedding dimension {vectors.shape[-1]} != {self.config.embedding_dim}"
            )
        x = self.drop(self.embed_norm(vectors))
        for block in self.blocks:
            x = block(x, key_mask)
        return self.final_norm(x)

    def encode(self, e: EmbeddingSequence, key_mask: torch.Tensor | None = None) -> EncoderOutput:
        return EncoderOutput(self(e.vectors, key_mask))

    def gradient_wrt_embeddings(self, e: EmbeddingSequence, target: Selector) -> torch.Tensor:
        return gradient_wrt_embeddings(self, e, target)

    def mlm_logits(self, contextual: torch.Tensor) -> torch.Tensor:
        h = self.mlm_norm(F.gelu(self.mlm_transform(contextual)))
        return h @ self.token_embedding.weight.T + self.mlm_bias

    def batch(self, tokenized: Sequence[TokenizedText]) -> tuple[torch.Tensor, torch.Tensor]:
        return pad_batch(self.tokenizer, tokenized)

    def mlm_predict(self, t: TokenizedText, n: int) -> list[list[Fill]]:
        return mlm_predict(self, t, n)


def pad_batch(tokenizer: WordPieceTokenizer, tokenized: Sequence[TokenizedText]) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad to a common length; returns ids and the valid-key mask."""
    n = max(len(t) for t in tokenized)
    ids = torch.full((len(tokenized), n), tokenizer.pad_id, dtype=torch.long)
    mask = torch.zeros((len(tokenized), n), dtype=torch.bool)
    for row, t in enumerate(tokenized):
        ids[row, : len(t)] = torch.tensor(t.ids)
        mask[row, : len(t)] = True
    return ids, mask


def gradient_wrt_embeddings(encoder, e: EmbeddingSequence, target: Selector) -> torch.Tensor:
    """Gradient of ``target(encode(e))`` with respect to the embedding vectors.

    A batched ``e`` is allowed; ``target`` may then return one scalar per row
    and the rows' gradients are returned side by side.
    """
    x = e.vectors.detach().clone().requires_grad_(True)
    value = target(encoder.encode(EmbeddingSequence(x)))
    if not value.requires_grad:
        return torch.zeros_like(x)
    (grad,) = torch.autograd.grad(value.sum(), x, allow_unused=True)
    return torch.zeros_like(x) if grad is None else grad


def _excluded_fill_ids(tokenizer: WordPieceTokenizer) -> frozenset[int]:
    # the markers plus reserved bracketed entries such as [unused0] in pretrained vocabularies
    reserved = {i for i, tok in enumerate(tokenizer.vocab) if len(tok) > 2 and tok[0] == "[" and tok[-1] == "]"}
    return tokenizer.special_ids | reserved


def mlm_predict(encoder, t: TokenizedText, n: int) -> list[list[Fill]]:
    """Top-``n`` fills per mask position, probability descending, ties to lower id."""
    tok = encoder.tokenizer
    positions = [i for i, tid in enumerate(t.ids) if tid == tok.mask_id]
    if not positions:
        raise EncoderError("no mask token in input")
    excluded = _excluded_fill_ids(tok)
    eligible = len(tok) - len(excluded)
    if n < 1 or n > eligible:
        raise EncoderError(f"n must be in [1, {eligible}]")
    with torch.no_grad():
        out = encoder.encode(encoder.embed(t))
        probs = encoder.mlm_logits(out.contextual[positions]).softmax(dim=-1).numpy()
    probs[:, sorted(excluded)] = -1.0
    ranked = []
    for row in probs:
        # lexsort: last key is primary
        order = np.lexsort((np.arange(len(row)), -row))[:n]
        ranked.append([Fill(int(i), tok.id_to_token(int(i)), float(row[i])) for i in order])
    return ranked


class HeadSelector:
    """Scalar selector reading one class score off a linear head over ``pooled``."""

    def __init__(self, head: nn.Linear, index: int, kind: str = "prob"):
        if not 0 <= index < head.out_features:
            raise EncoderError(f"class index {index} out of range for {head.out_features} classes")
        if kind not in ("prob", "logit"):
            raise EncoderError(f"unknown selector kind {kind!r}")
        self.head, self.index, self.kind = head, index, kind

    def __call__(self, out: EncoderOutput) -> torch.Tensor:
        scores = self.head(out.pooled)
        if self.kind == "prob":
            scores = scores.softmax(dim=-1)
        return scores[..., self.index]


class MeanPoolEncoder:
    """Attention-free adapter: contextual vectors are the embeddings themselves and
    the pooled vector is their mean. Useful as a transparent reference model."""

    kind = "meanpool"

    def __init__(self, tokenizer: WordPieceTokenizer, dim: int = 8, seed: int = 0):
        self.tokenizer = tokenizer
        self.embedding_dim = dim
        gen = torch.Generator().manual_seed(seed)
        self.table = torch.randn(len(tokenizer), dim, generator=gen, dtype=torch.float64)
        self.positions = torch.randn(tokenizer.max_length, dim, generator=gen, dtype=torch.float64)
        self.mlm_bias = torch.zeros(len(tokenizer), dtype=torch.float64)

    def tokenize(self, text: str) -> TokenizedText:
        return self.tokenizer.tokenize(text)

    def embed(self, t: TokenizedText) -> EmbeddingSequence:
        ids = torch.tensor(t.ids, dtype=torch.long)
        if int(ids.max()) >= len(self.tokenizer) or int(ids.min()) < 0:
            raise EncoderError("token id outside the vocabulary")
        return EmbeddingSequence(self.table[ids] + self.positions[: len(ids)])

    def encode(self, e: EmbeddingSequence) -> EncoderOutput:
        if e.dim != self.embedding_dim:
            raise EncoderError("dimension mismatch")
        v = e.vectors
        pooled = v.mean(dim=-2, keepdim=True)
        return EncoderOutput(torch.cat([pooled, v[..., 1:, :]], dim=-2))

    def gradient_wrt_embeddings(self, e: EmbeddingSequence, target: Selector) -> torch.Tensor:
        return gradient_wrt_embeddings(self, e, target)

    def mlm_logits(self, contextual: torch.Tensor) -> torch.Tensor:
        return contextual @ self.table.T + self.mlm_bias

    def mlm_predict(self, t: TokenizedText, n: int) -> list[list[Fill]]:
        return mlm_predict(self, t, n)


def build_encoder(
    texts: Sequence[str],
    vocab_size: int = 2000,
    min_word_count: int = 2,
    **config,
) -> BuiltinEncoder:
    """Fresh built-in encoder with a vocabulary learned from ``texts``."""
    max_length = config.pop("max_length", 64)
    tokenizer = WordPieceTokenizer(build_vocab(texts, vocab_size, min_word_count), max_length)
    cfg = EncoderConfig(
        vocab_size=len(tokenizer),
        max_length=max_length,
        mask_token_id=tokenizer.mask_id,
        pad_token_id=tokenizer.pad_id,
        **config,
    )
    return BuiltinEncoder(tokenizer, cfg)


def mask_for_mlm(
    ids: torch.Tensor,
    valid: torch.Tensor,
    tokenizer: WordPieceTokenizer,
    gen: torch.Generator,
    mask_prob: float = 0.15,
) -> tuple[torch.Tensor, torch.Tensor]:
    """BERT-style corruption: of the selected positions 80% become the mask
    marker, 10% a random token and 10% stay. Returns (inputs, labels) with
    label -100 where no prediction is scored."""
    content = valid & tokenizer.content_mask(ids)
    pick = (torch.rand(ids.shape, generator=gen) < mask_prob) & content
    # at least one scored position per row that has content
    rows_without = (~pick.any(dim=1)) & content.any(dim=1)
    for r in torch.nonzero(rows_without).flatten().tolist():
        cand = torch.nonzero(content[r]).flatten()
        pick[r, cand[torch.randint(len(cand), (1,), generator=gen)]] = True
    labels = torch.where(pick, ids, torch.full_like(ids, -100))
    roll = torch.rand(ids.shape, generator=gen)
    inputs = ids.clone()
    inputs[pick & (roll < 0.8)] = tokenizer.mask_id
    rand_pos = pick & (roll >= 0.8) & (roll < 0.9)
    ordinary = torch.nonzero(tokenizer.content_mask(torch.arange(len(tokenizer)))).flatten()
    inputs[rand_pos] = ordinary[torch.randint(len(ordinary), (int(rand_pos.sum()),), generator=gen)]
    return inputs, labels


def pretrain_mlm(
    encoder: BuiltinEncoder,
    texts: Sequence[str],
    epochs: int = 20,
    learning_rate: float = 2e-3,
    batch_size: int = 32,
    mask_prob: float = 0.15,
    seed: int = 0,
) -> list[float]:
    """Masked-language-model training on raw texts. Returns per-epoch mean loss."""
    tokenized = [encoder.tokenize(t) for t in texts if t]
    if not tokenized:
        raise EncoderError("no non-empty texts to pretrain on")
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.AdamW(encoder.parameters(), lr=learning_rate, weight_decay=0.01)
    total_steps = epochs * math.ceil(len(tokenized) / batch_size)
    # linear decay to zero
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda step: max(0.0, 1 - step / total_steps))
    encoder.train()
    with torch.random.fork_rng():
        torch.manual_seed(seed)  # dropout masks
        try:
            history = _mlm_epochs(encoder, tokenized, opt, sched, gen, epochs, batch_size, mask_prob)
        finally:
            encoder.eval()
    return history


def _mlm_epochs(encoder, tokenized, opt, sched, gen, epochs, batch_size, mask_prob) -> list[float]:
    history = []
    for _ in range(epochs):
        order = torch.randperm(len(tokenized), generator=gen).tolist()
        total, batches = 0.0, 0
        for start in range(0, len(order), batch_size):
            chunk = [tokenized[i] for i in order[start : start + batch_size]]
            ids, valid = encoder.batch(chunk)
            inputs, labels = mask_for_mlm(ids, valid, encoder.tokenizer, gen, mask_prob)
            ctx = encoder(encoder.embed_ids(inputs), valid)
            scored = labels != -100
            loss = F.cross_entropy(encoder.mlm_logits(ctx[scored]), labels[scored])
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            total += loss.item()
            batches += 1
        history.append(total / batches)
    return history


def clone_encoder(encoder):
    return copy.deepcopy(encoder)


def save_encoder(encoder, directory: str | Path) -> None:
    """Write ``manifest.json`` + ``weights.bin`` + ``vocab.txt`` into ``directory``.

    External adapters write their own checkpoint next to the manifest. The weight blob is the little-endian float64 concatenation of the state
    dict in manifest order, so identical parameters give identical bytes.
    """
    if encoder.kind != BuiltinEncoder.kind:
        encoder.save(directory)
        return
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors, offset = [], 0
    with (directory / "weights.bin").open("wb") as fh:
        for name, value in encoder.state_dict().items():
            raw = value.detach().cpu().numpy().astype("<f8").tobytes()
            fh.write(raw)
            tensors.append({"name": name, "shape": list(value.shape), "offset": offset, "nbytes": len(raw)})
            offset += len(raw)
    encoder.tokenizer.save(directory / "vocab.txt")
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": encoder.kind,
        "config": asdict(encoder.config),
        "dtype": "float64",
        "tensors": tensors,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_encoder(directory: str | Path):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise EncoderError(f"unsupported encoder format {manifest.get('format_version')!r}")
    if manifest.get("kind") == "external":
        from .external import ExternalEncoder

        return ExternalEncoder.load(directory, manifest)
    if manifest.get("kind") != BuiltinEncoder.kind:
        raise EncoderError(f"cannot load encoder kind {manifest.get('kind')!r}")
    config = EncoderConfig(**manifest["config"])
    tokenizer = WordPieceTokenizer.load(directory / "vocab.txt", config.max_length)
    encoder = BuiltinEncoder(tokenizer, config)
    blob = (directory / "weights.bin").read_bytes()
    state = {}
    for spec in manifest["tensors"]:
        arr = np.frombuffer(blob, dtype="<f8", count=spec["nbytes"] // 8, offset=spec["offset"])
        state[spec["name"]] = torch.from_numpy(arr.reshape(spec["shape"]).copy())
    encoder.load_state_dict(state)
    return encoder


def assert_alignment(t: TokenizedText) -> None:
    """Raise if ``t`` violates the marker/alignment invariants."""
    if not t.ids or t.word_index[0] != SPECIAL:
        raise EncoderError("first position must be the start marker")
    content = [w for w in t.word_index if w != SPECIAL]
    if content != sorted(content):
        raise EncoderError("word_index decreases over content positions")
    if content and (content[0] < 0 or content[-1] >= len(t.words)):
        raise EncoderError("word_index points outside the word sequence")
    if set(content) != set(range(len(t.words))):
        raise EncoderError("some words have no subwords")
