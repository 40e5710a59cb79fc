"""Hate intensity reduction: mask the detected hate words, infill them with a
masked language model and keep the candidate closest to the source."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .attribution import HateWord
from .tokenizer import CONTINUATION, MASK, SPECIAL

LEADING_POSITION = "leading-position"
ADJACENT_HATE_WORDS = "adjacent-hate-words"


class ReductionError(ValueError):
    pass


@dataclass(frozen=True)
class ReducerConfig:
    mask_fraction: float = 0.5
    candidates: int = 10

    def __post_init__(self):
        if not 0 < self.mask_fraction <= 1:
            raise ReductionError("mask_fraction must be in (0, 1]")
        if self.candidates < 1:
            raise ReductionError("candidates must be at least 1")


@dataclass(frozen=True)
class MaskPlan:
    source: str
    masked_positions: tuple[int, ...]  # ascending word positions
    mask_counts: tuple[int, ...]  # markers per masked word, aligned with masked_positions
    masked_text: str
    hate_words: tuple[HateWord, ...]

    @property
    def words(self) -> list[str]:
        return self.source.split(" ")


@dataclass(frozen=True)
class BertScore:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class WordFill:
    position: int  # word position in the source
    text: str
    rank: int  # 1-based


@dataclass(frozen=True)
class CandidateRewrite:
    text: str
    fills: tuple[WordFill, ...]
    score: BertScore | None = None

    def scored(self, score: BertScore) -> "CandidateRewrite":
        return CandidateRewrite(self.text, self.fills, score)


@dataclass(frozen=True)
class RewriteSelection:
    chosen: CandidateRewrite
    index: int
    candidates: tuple[CandidateRewrite, ...]
    ties: tuple[int, ...] = ()

    @property
    def selection_reason(self) -> str:
        if len(self.ties) > 1:
            return f"max-f1, tie among {list(self.ties)}, lowest index {self.index}"
        return f"max-f1 at index {self.index}"


@dataclass(frozen=True)
class ResidualCheck:
    label: int
    probs: tuple[float, float]
    still_hate: bool
    tags: tuple[str, ...] = ()


def plan_masks(text: str, hate_words: Sequence[HateWord], fraction: float = 0.5, tokenizer=None) -> MaskPlan:
    """Mask the ``ceil(fraction * len(hate_words))`` highest-scored hate words.

    With a tokenizer, a word that splits into ``s`` subwords becomes ``s``
    adjacent mask markers; without one every masked word is a single marker.
    """
    if not hate_words:
        raise ReductionError("no hate words to mask")
    if not 0 < fraction <= 1:
        raise ReductionError("fraction must be in (0, 1]")
    words = text.split(" ")
    for h in hate_words:
        if not 0 <= h.position < len(words) or words[h.position] != h.word:
            raise ReductionError(f"hate word {h.word!r} is not at position {h.position}")
    if len({h.position for h in hate_words}) != len(hate_words):
        raise ReductionError("duplicate hate-word positions")
    count = math.ceil(fraction * len(hate_words) - 1e-9)
    ranked = sorted(hate_words, key=lambda h: (-h.score, h.position))[:count]
    positions = tuple(sorted(h.position for h in ranked))
    counts = []
    out = list(words)
    for p in positions:
        s = len(tokenizer.split_word(words[p])) if tokenizer is not None else 1
        counts.append(s)
        out[p] = MASK * s
    return MaskPlan(text, positions, tuple(counts), " ".join(out), tuple(hate_words))


def _strip_continuation(piece: str) -> str:
    return piece[len(CONTINUATION):] if piece.startswith(CONTINUATION) else piece


def generate_candidates(plan: MaskPlan, n: int, mlm_encoder, exclude_source: bool = True) -> list[CandidateRewrite]:
    """``n`` rewrites; candidate ``i`` puts the rank-``i`` fill into every mask.

    With ``exclude_source`` a mask never receives the subword it replaced, so a
    candidate cannot simply restore the masked word.
    """
    if n < 1:
        raise ReductionError("n must be at least 1")
    t = mlm_encoder.tokenize(plan.masked_text)
    mask_slots = [i for i, tid in enumerate(t.ids) if tid == mlm_encoder.tokenizer.mask_id]
    expected = sum(plan.mask_counts)
    if len(mask_slots) != expected:
        raise ReductionError(
            f"masked text tokenizes to {len(mask_slots)} mask markers, plan has {expected}"
        )
    # group mask slots by the source word they replace
    by_word: dict[int, list[int]] = {}
    for row, pos in enumerate(mask_slots):
        by_word.setdefault(t.word_index[pos], []).append(row)
    original: list[int | None] = [None] * len(mask_slots)
    if exclude_source:
        for word_pos in plan.masked_positions:
            pieces = mlm_encoder.tokenizer.split_word(plan.words[word_pos])
            rows = by_word[word_pos]
            if len(pieces) == len(rows):
                for r, (pid, _) in zip(rows, pieces):
                    original[r] = pid
    try:
        extra = 1 if any(o is not None for o in original) else 0
        try:
            ranked = mlm_encoder.mlm_predict(t, n + extra)
        except ValueError:
            if not extra:
                raise
            ranked = mlm_encoder.mlm_predict(t, n)
    except ValueError as exc:
        raise ReductionError(str(exc)) from exc
    ranked = [[f for f in fills if f.id != original[r]] for r, fills in enumerate(ranked)]
    if any(len(fills) < n for fills in ranked):
        raise ReductionError(f"fewer than {n} fills available per mask")
    words = plan.words
    candidates = []
    for rank in range(n):
        out = list(words)
        fills = []
        for word_pos in plan.masked_positions:
            rows = by_word[word_pos]
            filled = "".join(_strip_continuation(ranked[r][rank].token) for r in rows)
            out[word_pos] = filled
            fills.append(WordFill(word_pos, filled, rank + 1))
        candidates.append(CandidateRewrite(" ".join(out), tuple(fills)))
    return candidates


def _content_vectors(scorer, text: str) -> torch.Tensor:
    t = scorer.tokenize(text)
    keep = [i for i, w in enumerate(t.word_index) if w != SPECIAL]
    if not keep:
        raise ReductionError(f"no tokens to score in {text!r}")
    with torch.no_grad():
        ctx = scorer.encode(scorer.embed(t)).contextual
    return ctx[keep]


def similarity_matrix(candidate: torch.Tensor, reference: torch.Tensor) -> np.ndarray:
    a = torch.nn.functional.normalize(candidate, dim=-1)
    b = torch.nn.functional.normalize(reference, dim=-1)
    return (a @ b.T).clamp(-1.0, 1.0).numpy()


def greedy_match(sim: np.ndarray) -> BertScore:
    """Precision over candidate rows, recall over reference columns."""
    p = float(sim.max(axis=1).mean())
    r = float(sim.max(axis=0).mean())
    # the harmonic mean leaves [-1, 1] when p and r differ in sign
    f1 = 2 * p * r / (p + r) if p * r > 0 else 0.0
    return BertScore(p, r, f1)


def bertscore(candidate: str, reference: str, scorer) -> BertScore:
    """Greedy-matched cosine similarity of final contextual vectors, markers excluded.
    No idf weighting and no rescaling."""
    return greedy_match(similarity_matrix(_content_vectors(scorer, candidate), _content_vectors(scorer, reference)))


def select_rewrite(candidates: Sequence[CandidateRewrite]) -> RewriteSelection:
    if not candidates:
        raise ReductionError("no candidates to select from")
    if any(c.score is None for c in candidates):
        raise ReductionError("every candidate must be scored")
    f1 = [c.score.f1 for c in candidates]
    best = max(f1)
    ties = tuple(i for i, v in enumerate(f1) if v == best)
    return RewriteSelection(candidates[ties[0]], ties[0], tuple(candidates), ties)


def failure_tags(hate_words: Sequence[HateWord]) -> tuple[str, ...]:
    positions = sorted(h.position for h in hate_words)
    tags = []
    if positions and positions[0] == 0:
        tags.append(LEADING_POSITION)
    if any(b - a == 1 for a, b in zip(positions, positions[1:])):
        tags.append(ADJACENT_HATE_WORDS)
    return tuple(tags)


def residual_hate_check(selection: RewriteSelection, detector, hate_words: Sequence[HateWord] = ()) -> ResidualCheck:
    """Re-classify the chosen rewrite; a rewrite still labeled hate is tagged with
    the known failure patterns of its source hate words."""
    pred = detector.classify(selection.chosen.text)
    still = pred.label == 1
    return ResidualCheck(pred.label, pred.probs, still, failure_tags(hate_words) if still else ())


@dataclass
class Reduction:
    plan: MaskPlan
    selection: RewriteSelection
    check: ResidualCheck | None = None
    extra: dict = field(default_factory=dict)

    @property
    def rewrite(self) -> str:
        return self.selection.chosen.text

    def to_record(self, comment_id: str | None = None) -> dict:
        def cand(c: CandidateRewrite) -> dict:
            return {
                "text": c.text,
                "fills": [{"position": f.position, "text": f.text, "rank": f.rank} for f in c.fills],
                "precision": c.score.precision,
                "recall": c.score.recall,
                "f1": c.score.f1,
            }

        return {
            "id": comment_id,
            "source": self.plan.source,
            "mask_plan": {
                "masked_positions": list(self.plan.masked_positions),
                "mask_counts": list(self.plan.mask_counts),
                "masked_text": self.plan.masked_text,
                "hate_words": [{"word": h.word, "position": h.position, "score": h.score}
                               for h in self.plan.hate_words],
            },
            "candidates": [cand(c) for c in self.selection.candidates],
            "chosen_index": self.selection.index,
            "chosen": self.rewrite,
            "selection_reason": self.selection.selection_reason,
            "residual_hate": None if self.check is None else self.check.still_hate,
            "residual_probs": None if self.check is None else list(self.check.probs),
            "taxonomy": [] if self.check is None else list(self.check.tags),
            **self.extra,
        }


def reduce_text(
    text: str,
    hate_words: Sequence[HateWord],
    mlm_encoder,
    config: ReducerConfig = ReducerConfig(),
    scorer=None,
    detector=None,
) -> Reduction:
    """Mask, infill, score against the source and select. ``scorer`` defaults to
    the detector's encoder, then to the MLM encoder."""
    if scorer is None:
        scorer = detector.encoder if detector is not None else mlm_encoder
    plan = plan_masks(text, hate_words, config.mask_fraction, mlm_encoder.tokenizer)
    scored = [c.scored(bertscore(c.text, text, scorer))
              for c in generate_candidates(plan, config.candidates, mlm_encoder)]
    selection = select_rewrite(scored)
    check = residual_hate_check(selection, detector, hate_words) if detector is not None else None
    return Reduction(plan, selection, check)
