"""Synthetic trigger-lexicon corpus with known ground-truth hate words.

Comments are drawn from slot templates. Non-hate comments fill every slot from
benign word lists; hate comments additionally overwrite one or two adjective
slots with words from a planted trigger lexicon (invented tokens, so no real
slur is ever generated). The generator records which words were planted.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus, LabeledComment

TRIGGERS = (
    "vrakk", "zlorb", "grusk", "blemt", "skorv", "trunx", "quolm", "druzz",
    "fenkt", "maggrot", "plonx", "yurgh", "kretch", "wubsk", "snarv", "glebb",
)

SLOTS = {
    "A": ("quiet", "busy", "friendly", "young", "local", "famous", "careful", "honest",
          "cheerful", "modern", "patient", "clever"),
    "N": ("teacher", "driver", "farmer", "neighbour", "doctor", "player", "singer",
          "student", "shopkeeper", "writer"),
    "P": ("the city", "the village", "our street", "the market", "the station", "the school"),
    "V": ("arrived", "spoke", "waited", "smiled", "left", "returned", "worked", "called"),
    "T": ("today", "yesterday", "this morning", "last night", "again", "every day"),
}

TEMPLATES = (
    "the {A} {N} from {P} {V} {T}",
    "that {N} is so {A}",
    "why is the {N} always {A} {T}",
    "i think the {N} near {P} is {A}",
    "my {A} {N} {V} {T}",
    "people say the {N} at {P} is {A} and {A}",
    "look at this {A} {N}",
    "{T} the {A} {N} {V} at {P}",
    "what a {A} {N}",
    "the {N} {V} because he is {A}",
)


@dataclass
class SyntheticCorpus:
    corpus: Corpus
    planted: dict[str, tuple[str, ...]]  # comment id -> trigger words in that comment
    positions: dict[str, tuple[int, ...]]  # comment id -> word positions of those triggers
    lexicon: tuple[str, ...] = TRIGGERS

    def save(self, path: str | Path) -> None:
        """Corpus snapshot plus ground truth, one JSON record per comment."""
        with Path(path).open("w", encoding="utf-8") as fh:
            for c in self.corpus:
                fh.write(json.dumps({
                    "id": c.id, "text": c.text, "label": c.label,
                    "planted": list(self.planted[c.id]),
                    "planted_positions": list(self.positions[c.id]),
                }) + "\n")

    @classmethod
    def load(cls, path: str | Path, name: str = "synth") -> "SyntheticCorpus":
        comments, planted, positions = [], {}, {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            comments.append(LabeledComment(str(rec["id"]), rec["text"], int(rec["label"])))
            planted[str(rec["id"])] = tuple(rec.get("planted", ()))
            positions[str(rec["id"])] = tuple(rec.get("planted_positions", ()))
        return cls(Corpus(name, comments), planted, positions)


def _fill(template: str, rng: random.Random) -> tuple[list[str], list[int]]:
    """Fill a template; returns the words and the word positions of adjective slots."""
    words, adjective_slots = [], []
    for part in template.split(" "):
        if part.startswith("{") and part.endswith("}"):
            value = rng.choice(SLOTS[part[1:-1]])
            if part == "{A}":
                adjective_slots.append(len(words))
            words.extend(value.split(" "))
        else:
            words.append(part)
    return words, adjective_slots


def generate(
    size: int = 2000,
    trigger_rate: float = 0.5,
    seed: int = 0,
    double_rate: float = 0.2,
    lexicon: tuple[str, ...] = TRIGGERS,
    name: str = "synth",
) -> SyntheticCorpus:
    """``round(size * trigger_rate)`` hate comments, the rest benign, in shuffled order.

    A hate comment carries two triggers with probability ``double_rate`` when its
    template has two adjective slots, otherwise one.
    """
    if size < 1:
        raise ValueError("size must be positive")
    if not 0 <= trigger_rate <= 1:
        raise ValueError("trigger_rate must be in [0, 1]")
    rng = random.Random(seed)
    n_hate = round(size * trigger_rate)
    labels = [1] * n_hate + [0] * (size - n_hate)
    rng.shuffle(labels)
    comments, planted, positions = [], {}, {}
    for i, label in enumerate(labels):
        words, slots = _fill(rng.choice(TEMPLATES), rng)
        chosen: list[int] = []
        if label:
            count = 2 if len(slots) > 1 and rng.random() < double_rate else 1
            chosen = sorted(rng.sample(slots, count))
            for pos in chosen:
                words[pos] = rng.choice(lexicon)
        cid = f"s{i:05d}"
        comments.append(LabeledComment(cid, " ".join(words), label))
        planted[cid] = tuple(words[p] for p in chosen)
        positions[cid] = tuple(chosen)
    return SyntheticCorpus(Corpus(name, comments), planted, positions, tuple(lexicon))
