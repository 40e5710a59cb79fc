"""Greedy longest-match subword tokenizer with word alignment."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import torch

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
CONTINUATION = "##"
SPECIAL = -1  # word_index value for marker positions


@dataclass(frozen=True)
class TokenizedText:
    """Subword ids with their source-word alignment.

    ``word_index[i]`` is the position in ``words`` that subword ``i`` came from,
    or ``SPECIAL`` for start/separator/pad markers.
    """

    ids: tuple[int, ...]
    word_index: tuple[int, ...]
    surface: tuple[str, ...]
    words: tuple[str, ...]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def content_positions(self) -> list[int]:
        return [i for i, w in enumerate(self.word_index) if w != SPECIAL]

    def subwords_of(self, word: int) -> list[int]:
        return [i for i, w in enumerate(self.word_index) if w == word]

    def detokenize(self) -> list[str]:
        """Rebuild the word sequence from subword surfaces."""
        out: dict[int, str] = {}
        for w, s in zip(self.word_index, self.surface):
            if w == SPECIAL:
                continue
            piece = s[len(CONTINUATION):] if s.startswith(CONTINUATION) else s
            out[w] = out.get(w, "") + piece
        return [out[w] for w in sorted(out)]


@dataclass
class WordPieceTokenizer:
    vocab: list[str]
    max_length: int = 64
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        # built vocabularies put the markers first; pretrained ones may not
        missing = [t for t in SPECIAL_TOKENS if t not in self.vocab]
        if missing:
            raise ValueError(f"vocabulary lacks the marker tokens {missing}")
        if len(set(self.vocab)) != len(self.vocab):
            raise ValueError("vocabulary contains duplicates")
        if self.max_length < 2:
            raise ValueError("max_length must leave room for the start and separator markers")
        self._index = {tok: i for i, tok in enumerate(self.vocab)}
        self._special_ids = frozenset(self._index[t] for t in SPECIAL_TOKENS)

    @property
    def pad_id(self) -> int:
        return self._index[PAD]

    @property
    def unk_id(self) -> int:
        return self._index[UNK]

    @property
    def cls_id(self) -> int:
        return self._index[CLS]

    @property
    def sep_id(self) -> int:
        return self._index[SEP]

    @property
    def mask_id(self) -> int:
        return self._index[MASK]

    @property
    def special_ids(self) -> frozenset[int]:
        return self._special_ids

    def content_mask(self, ids: torch.Tensor) -> torch.Tensor:
        """Boolean tensor, true where ``ids`` holds an ordinary (non-marker) token."""
        return ~torch.isin(ids, torch.tensor(sorted(self._special_ids)))

    def __len__(self) -> int:
        return len(self.vocab)

    def token_to_id(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    def id_to_token(self, i: int) -> str:
        return self.vocab[i]

    def split_word(self, word: str) -> list[tuple[int, str]]:
        """Segment one word into (id, surface) pairs."""
        if word and len(word) % len(MASK) == 0 and word == MASK * (len(word) // len(MASK)):
            return [(self.mask_id, MASK)] * (len(word) // len(MASK))
        pieces = []
        start = 0
        while start < len(word):
            end = len(word)
            found = None
            while end > start:
                piece = word[start:end]
                if start > 0:
                    piece = CONTINUATION + piece
                if piece in self._index:
                    found = piece
                    break
                end -= 1
            if found is None:
                return [(self.unk_id, word)]
            pieces.append((self._index[found], found))
            start = end
        return pieces

    def tokenize(self, text: str) -> TokenizedText:
        words = text.split(" ") if text else []
        ids, index, surface = [self.cls_id], [SPECIAL], [CLS]
        kept: list[str] = []
        truncated = False
        budget = self.max_length - 2
        for w, word in enumerate(words):
            pieces = self.split_word(word)
            if len(ids) - 1 + len(pieces) > budget:
                truncated = True
                break
            kept.append(word)
            for pid, surf in pieces:
                ids.append(pid)
                index.append(w)
                surface.append(surf)
        ids.append(self.sep_id)
        index.append(SPECIAL)
        surface.append(SEP)
        return TokenizedText(tuple(ids), tuple(index), tuple(surface), tuple(kept), truncated)

    def pad(self, t: TokenizedText, length: int) -> TokenizedText:
        extra = length - len(t)
        if extra <= 0:
            return t
        return replace(
            t,
            ids=t.ids + (self.pad_id,) * extra,
            word_index=t.word_index + (SPECIAL,) * extra,
            surface=t.surface + (PAD,) * extra,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.vocab) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, max_length: int = 64) -> "WordPieceTokenizer":
        vocab = Path(path).read_text(encoding="utf-8").split("\n")
        if vocab and vocab[-1] == "":
            vocab.pop()
        return cls(vocab, max_length)


def build_vocab(
    texts: Iterable[str],
    vocab_size: int = 2000,
    min_word_count: int = 2,
    max_piece_length: int = 8,
) -> list[str]:
    """Frequency-ranked subword vocabulary.

    Every character seen is included both as a word-initial piece and as a
    continuation piece, so segmentation of text over the same alphabet never
    falls back to ``[UNK]``. The remaining budget goes to frequent whole words
    and then to frequent word prefixes and continuation suffixes.
    """
    word_counts = Counter(w for t in texts for w in (t.split(" ") if t else []))
    chars = sorted({ch for w in word_counts for ch in w})
    vocab = list(SPECIAL_TOKENS)
    vocab += chars + [CONTINUATION + ch for ch in chars]
    seen = set(vocab)

    whole = sorted(
        ((w, c) for w, c in word_counts.items() if c >= min_word_count and w not in seen),
        key=lambda wc: (-wc[1], wc[0]),
    )
    pieces: Counter[str] = Counter()
    for w, c in word_counts.items():
        for n in range(2, min(len(w), max_piece_length + 1)):
            pieces[w[:n]] += c
            pieces[CONTINUATION + w[-n:]] += c
    ranked_pieces = sorted(
        ((p, c) for p, c in pieces.items() if c >= min_word_count),
        key=lambda pc: (-pc[1], pc[0]),
    )
    for tok, _ in whole + ranked_pieces:
        if len(vocab) >= vocab_size:
            break
        if tok not in seen:
            vocab.append(tok)
            seen.add(tok)
    return vocab
