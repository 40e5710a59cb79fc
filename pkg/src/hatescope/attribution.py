"""Integrated Gradients over a detector's input embeddings."""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
import torch

from .encoder import EmbeddingSequence, gradient_wrt_embeddings
from .tokenizer import SPECIAL, TokenizedText

QUADRATURES = ("midpoint", "left-riemann")
REDUCTIONS = ("sum", "mean", "norm")
BASELINES = ("pad", "mask")


class AttributionError(ValueError):
    pass


@dataclass(frozen=True)
class IGConfig:
    steps: int = 50
    quadrature: str = "midpoint"
    k: int = 5
    reduction: str = "sum"
    baseline: str = "pad"
    batch_size: int = 64

    def __post_init__(self):
        if self.steps < 1:
            raise AttributionError("steps must be at least 1")
        if self.k < 1:
            raise AttributionError("k must be at least 1")
        if self.quadrature not in QUADRATURES:
            raise AttributionError(f"quadrature must be one of {QUADRATURES}")
        if self.reduction not in REDUCTIONS:
            raise AttributionError(f"reduction must be one of {REDUCTIONS}")
        if self.baseline not in BASELINES:
            raise AttributionError(f"baseline must be one of {BASELINES}")


class HateWord(NamedTuple):
    word: str
    position: int
    score: float


def path_alphas(steps: int, quadrature: str = "midpoint") -> np.ndarray:
    """Interpolation points on [0, 1]; each carries weight 1/steps."""
    if steps < 1:
        raise AttributionError("steps must be at least 1")
    i = np.arange(steps, dtype=np.float64)
    if quadrature == "midpoint":
        return (i + 0.5) / steps
    if quadrature == "left-riemann":
        return i / steps
    raise AttributionError(f"unknown quadrature {quadrature!r}")


def path_integrated_gradients(
    grad_fn: Callable[[torch.Tensor], torch.Tensor],
    inputs: torch.Tensor,
    baseline: torch.Tensor,
    steps: int = 50,
    quadrature: str = "midpoint",
    batch_size: int = 64,
) -> torch.Tensor:
    """(inputs - baseline) * mean of grad_fn along the straight baseline->input path.

    ``grad_fn`` maps a stack of points ``(m, *inputs.shape)`` to the gradient of
    the explained scalar at each point, same shape.
    """
    if baseline.shape != inputs.shape:
        raise AttributionError(
            f"baseline shape {tuple(baseline.shape)} != input shape {tuple(inputs.shape)}"
        )
    alphas = torch.as_tensor(path_alphas(steps, quadrature), dtype=inputs.dtype)
    diff = inputs - baseline
    total = torch.zeros_like(inputs)
    for start in range(0, steps, batch_size):
        a = alphas[start : start + batch_size].reshape(-1, *([1] * inputs.dim()))
        total += grad_fn(baseline + a * diff).sum(dim=0)
    return diff * (total / steps)


def baseline_tokens(t: TokenizedText, fill_id: int) -> TokenizedText:
    """Same length and marker positions as ``t``; every content subword replaced."""
    ids = tuple(tid if w == SPECIAL else fill_id for tid, w in zip(t.ids, t.word_index))
    return TokenizedText(ids, t.word_index, t.surface, t.words, t.truncated)


def _baseline_for(detector, t: TokenizedText, config: IGConfig) -> TokenizedText:
    tok = detector.encoder.tokenizer
    return baseline_tokens(t, tok.pad_id if config.baseline == "pad" else tok.mask_id)


def _target_value(detector, vectors: torch.Tensor, target_class: int) -> float:
    with torch.no_grad():
        out = detector.encoder.encode(EmbeddingSequence(vectors))
        return float(detector.selector(target_class)(out))


def integrated_gradients(detector, text: str, target_class: int, config: IGConfig = IGConfig()) -> np.ndarray:
    """Per-subword, per-dimension IG attribution of the target-class probability.

    Returns an array of shape ``(len(tokenize(text)), embedding_dim)``.
    """
    t = detector.encoder.tokenize(text)
    return _ig_for_tokens(detector, t, target_class, config)[0]


def _ig_for_tokens(detector, t: TokenizedText, target_class: int, config: IGConfig):
    if target_class not in (0, 1):
        raise AttributionError(f"target_class must be 0 or 1, got {target_class}")
    enc = detector.encoder
    selector = detector.selector(target_class)
    with torch.no_grad():
        x = enc.embed(t).vectors
        b = enc.embed(_baseline_for(detector, t, config)).vectors

    def grad_fn(points):
        return gradient_wrt_embeddings(enc, EmbeddingSequence(points), selector)

    attr = path_integrated_gradients(grad_fn, x, b, config.steps, config.quadrature, config.batch_size)
    return attr.numpy(), x, b


def completeness_residual(detector, text: str, attribution: np.ndarray, target_class: int,
                          config: IGConfig = IGConfig()) -> float:
    """|sum of attributions - (F(input) - F(baseline))|."""
    enc = detector.encoder
    t = enc.tokenize(text)
    with torch.no_grad():
        x = enc.embed(t).vectors
        b = enc.embed(_baseline_for(detector, t, config)).vectors
    delta = _target_value(detector, x, target_class) - _target_value(detector, b, target_class)
    return abs(float(np.sum(attribution)) - delta)


def token_scores(attribution: np.ndarray, reduction: str = "sum") -> np.ndarray:
    """Collapse the embedding dimension to one scalar per subword."""
    if reduction == "sum":
        return attribution.sum(axis=-1)
    if reduction == "mean":
        return attribution.mean(axis=-1)
    if reduction == "norm":
        return np.linalg.norm(attribution, axis=-1)
    raise AttributionError(f"unknown reduction {reduction!r}")


@dataclass(frozen=True)
class WordScores:
    subword: np.ndarray  # one scalar per subword, markers included
    word: np.ndarray  # one scalar per source word
    special: dict[int, float]  # marker position -> scalar


def aggregate_to_words(attribution: np.ndarray, alignment: TokenizedText, reduction: str = "sum") -> WordScores:
    if attribution.shape[0] != len(alignment):
        raise AttributionError(
            f"attribution covers {attribution.shape[0]} subwords, alignment has {len(alignment)}"
        )
    sub = token_scores(attribution, reduction) if attribution.ndim == 2 else np.asarray(attribution, float)
    words = np.zeros(len(alignment.words))
    special = {}
    for i, w in enumerate(alignment.word_index):
        if w == SPECIAL:
            special[i] = float(sub[i])
        else:
            words[w] += sub[i]
    return WordScores(sub, words, special)


def _punctuation_only(word: str) -> bool:
    return bool(word) and all(unicodedata.category(ch).startswith("P") for ch in word)


def top_k_hate_words(word_scores: Sequence[float], words: Sequence[str], k: int = 5,
                     predicted_label: int = 1) -> list[HateWord]:
    """Positively attributed words, highest first (earlier position wins ties), at most ``k``."""
    if predicted_label != 1:
        raise AttributionError("hate words are only selected for comments predicted as hate")
    if len(word_scores) != len(words):
        raise AttributionError("word_scores and words differ in length")
    ranked = sorted(
        (HateWord(words[i], i, float(s)) for i, s in enumerate(word_scores)
         if s > 0 and not _punctuation_only(words[i])),
        key=lambda h: (-h.score, h.position),
    )
    return ranked[:k]


@dataclass
class AttributionResult:
    tokens: TokenizedText
    subword_scores: np.ndarray
    word_scores: np.ndarray
    special_scores: dict[int, float]
    target_class: int
    probs: tuple[float, float]
    completeness_residual: float
    top_words: list[HateWord]
    config: IGConfig
    raw: np.ndarray | None = field(default=None, repr=False)

    @property
    def words(self) -> tuple[str, ...]:
        return self.tokens.words

    def to_record(self, comment_id: str | None = None) -> dict:
        rec = {
            "id": comment_id,
            "label": self.target_class,
            "probs": list(self.probs),
            "words": list(self.words),
            "word_scores": [float(s) for s in self.word_scores],
            "special_scores": {str(k): v for k, v in self.special_scores.items()},
            "top_words": [{"word": h.word, "position": h.position, "score": h.score} for h in self.top_words],
            "completeness_residual": self.completeness_residual,
            "ig_config": {
                "steps": self.config.steps,
                "quadrature": self.config.quadrature,
                "k": self.config.k,
                "reduction": self.config.reduction,
                "baseline": self.config.baseline,
            },
        }
        return rec


def explain(detector, text: str, config: IGConfig = IGConfig(), target_class: int | None = None,
            keep_raw: bool = False) -> AttributionResult:
    """Attribute the prediction for ``text`` to its words.

    The explained scalar is the probability of ``target_class`` (default: the
    predicted class). Hate words are selected only when that class is 1.
    """
    pred = detector.classify(text)
    target = pred.label if target_class is None else target_class
    t = detector.encoder.tokenize(text)
    raw, x, b = _ig_for_tokens(detector, t, target, config)
    scores = aggregate_to_words(raw, t, config.reduction)
    delta = _target_value(detector, x, target) - _target_value(detector, b, target)
    residual = abs(float(raw.sum()) - delta)
    top = top_k_hate_words(scores.word, t.words, config.k) if target == pred.label == 1 else []
    return AttributionResult(t, scores.subword, scores.word, scores.special, target, pred.probs,
                             residual, top, config, raw if keep_raw else None)
