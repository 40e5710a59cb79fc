"""Hate/non-hate classifier over the pooled encoder output, its training loop and
cross-validation driver."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .corpus import Corpus, make_folds
from .encoder import EncoderOutput, HeadSelector, TextEncoder, build_encoder, load_encoder, save_encoder
from .evaluation import FoldSummary, MetricsReport, aggregate_folds, classification_metrics

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    warmup_fraction: float = 0.10
    max_epochs: int = 10
    early_stop_patience: int = 3
    batch_size: int = 32
    seed: int = 0
    token_dropout: float = 0.0  # per-token chance of replacement by the pad id
    blank_rate: float = 0.0  # per-row chance of an extra all-pad copy labeled non-hate

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be at least 1")
        if not 0 <= self.token_dropout < 1:
            raise ValueError("token_dropout must be in [0, 1)")
        if not 0 <= self.blank_rate <= 1:
            raise ValueError("blank_rate must be in [0, 1]")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be positive")


@dataclass(frozen=True)
class Prediction:
    probs: tuple[float, float]
    label: int
    pooled: np.ndarray = field(repr=False, compare=False)
    degenerate: bool = False


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_f1_macro: float | None
    val_accuracy: float | None
    learning_rate: float


def linear_schedule(step: int, total: int, warmup: int) -> float:
    """Multiplier on the peak learning rate: linear ramp 0 -> 1 over ``warmup``
    steps, then linear decay to 0 at ``total``."""
    if step < warmup:
        return step / warmup
    if total <= warmup:
        return 1.0
    return max(0.0, (total - step) / (total - warmup))


def label_from_probs(probs) -> int:
    # ties resolve to non-hate
    return int(probs[1] > probs[0])


class TrainedDetector:
    """Encoder + linear head; ``classify`` is read-only over the parameters."""

    def __init__(self, encoder, head: nn.Linear | None = None, config: TrainingConfig | None = None):
        self.encoder = encoder
        if head is None:
            with torch.random.fork_rng():
                torch.manual_seed(config.seed if config else 0)
                head = nn.Linear(encoder.embedding_dim, 2).double()
        self.head = head
        self.config = config or TrainingConfig()
        self.history: list[EpochRecord] = []
        self.initial_loss: float | None = None
        self.best_epoch: int | None = None

    def parameters(self):
        yield from self.encoder.parameters()
        yield from self.head.parameters()

    def selector(self, class_index: int, kind: str = "prob") -> HeadSelector:
        return HeadSelector(self.head, class_index, kind)

    def scores(self, out: EncoderOutput) -> torch.Tensor:
        return self.head(out.pooled)

    def probabilities(self, texts: Sequence[str]) -> np.ndarray:
        """(len(texts), 2) class probabilities, computed in one padded batch."""
        if not texts:
            return np.zeros((0, 2))
        enc = self.encoder
        tokenized = [enc.tokenize(t) for t in texts]
        with torch.no_grad():
            ids, valid = enc.batch(tokenized)
            ctx = enc(enc.embed_ids(ids), valid)
            return self.head(ctx[:, 0]).softmax(dim=-1).numpy()

    def classify(self, text: str) -> Prediction:
        enc = self.encoder
        with torch.no_grad():
            out = enc.encode(enc.embed(enc.tokenize(text)))
            probs = self.head(out.pooled).softmax(dim=-1).numpy()
        degenerate = not text.strip()
        label = 0 if degenerate else label_from_probs(probs)
        return Prediction((float(probs[0]), float(probs[1])), label, out.pooled.numpy(), degenerate)

    def predict(self, texts: Sequence[str], batch_size: int = 256) -> list[int]:
        labels = []
        for start in range(0, len(texts), batch_size):
            chunk = texts[start : start + batch_size]
            probs = self.probabilities(chunk)
            labels += [0 if not t.strip() else label_from_probs(p) for t, p in zip(chunk, probs)]
        return labels

    def evaluate(self, corpus: Corpus) -> MetricsReport:
        return classification_metrics(self.predict(corpus.texts), corpus.labels)

    def save(self, directory: str | Path) -> None:
        """Config snapshot, encoder + head weights, per-epoch history."""
        directory = Path(directory)
        save_encoder(self.encoder, directory / "encoder")
        head = {k: v.tolist() for k, v in self.head.state_dict().items()}
        (directory / "head.json").write_text(json.dumps(head) + "\n")
        meta = {
            "training": asdict(self.config),
            "best_epoch": self.best_epoch,
            "initial_loss": self.initial_loss,
        }
        (directory / "config.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        with (directory / "history.jsonl").open("w") as fh:
            for rec in self.history:
                fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "TrainedDetector":
        directory = Path(directory)
        encoder = load_encoder(directory / "encoder")
        state = json.loads((directory / "head.json").read_text())
        head = nn.Linear(encoder.embedding_dim, 2).double()
        head.load_state_dict({k: torch.tensor(v, dtype=torch.float64) for k, v in state.items()})
        meta = json.loads((directory / "config.json").read_text())
        det = cls(encoder, head, TrainingConfig(**meta["training"]))
        det.best_epoch = meta["best_epoch"]
        det.initial_loss = meta["initial_loss"]
        history = (directory / "history.jsonl").read_text().splitlines()
        det.history = [EpochRecord(**json.loads(line)) for line in history if line]
        return det


def _batch_loss(det: TrainedDetector, tokenized, labels: torch.Tensor, dropout: float = 0.0,
                blank: float = 0.0, gen: torch.Generator | None = None) -> torch.Tensor:
    enc = det.encoder
    ids, valid = enc.batch(tokenized)
    content = valid & enc.tokenizer.content_mask(ids)
    if dropout:
        # replaced tokens stay attended, so the pad embedding learns "unknown word"
        drop = content & (torch.rand(ids.shape, generator=gen) < dropout)
        ids = ids.masked_fill(drop, enc.tokenizer.pad_id)
    if blank:
        rows = torch.nonzero(torch.rand(len(ids), generator=gen) < blank).flatten()
        if len(rows):
            blanks = ids[rows].masked_fill(content[rows], enc.tokenizer.pad_id)
            ids = torch.cat([ids, blanks])
            valid = torch.cat([valid, valid[rows]])
            labels = torch.cat([labels, torch.zeros(len(rows), dtype=labels.dtype)])
    ctx = enc(enc.embed_ids(ids), valid)
    return F.cross_entropy(det.head(ctx[:, 0]), labels)


def _full_loss(det: TrainedDetector, tokenized, labels, batch_size: int) -> float:
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(tokenized), batch_size):
            chunk = tokenized[start : start + batch_size]
            total += float(_batch_loss(det, chunk, labels[start : start + batch_size])) * len(chunk)
    return total / len(tokenized)


def train(
    corpus: Corpus,
    val: Corpus,
    config: TrainingConfig = TrainingConfig(),
    encoder: TextEncoder | None = None,
    **encoder_options,
) -> TrainedDetector:
    """Fine-tune encoder + head with cross-entropy, AdamW and a linear warm-up/decay
    schedule; early-stop on validation macro-F1 and return the best epoch's weights.

    ``encoder`` is copied, never mutated. Without one, a fresh built-in encoder is
    built from the training texts (``encoder_options`` go to :func:`build_encoder`).
    """
    if not len(corpus) or not len(val):
        raise TrainingError("training and validation splits must be non-empty")
    if len(set(corpus.labels)) < 2:
        raise TrainingError("training split contains a single class")

    if encoder is None:
        encoder_options.setdefault("seed", config.seed)
        encoder = build_encoder(corpus.texts, **encoder_options)
    else:
        encoder = copy.deepcopy(encoder)
    det = TrainedDetector(encoder, config=config)

    tokenized = [encoder.tokenize(t) for t in corpus.texts]
    labels = torch.tensor(corpus.labels, dtype=torch.long)
    steps_per_epoch = math.ceil(len(tokenized) / config.batch_size)
    total = steps_per_epoch * config.max_epochs
    warmup = int(round(config.warmup_fraction * total))

    opt = torch.optim.AdamW(
        list(det.parameters()),
        lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
        weight_decay=config.weight_decay,
    )
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: linear_schedule(s, total, warmup))
    gen = torch.Generator().manual_seed(config.seed)

    det.initial_loss = _full_loss(det, tokenized, labels, 256)
    best_f1, best_state, stale = -math.inf, None, 0
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)  # dropout masks
        for epoch in range(1, config.max_epochs + 1):
            encoder.train()
            order = torch.randperm(len(tokenized), generator=gen).tolist()
            running, seen = 0.0, 0
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                loss = _batch_loss(det, [tokenized[i] for i in idx], labels[idx], config.token_dropout,
                                   config.blank_rate, gen)
                if not torch.isfinite(loss):
                    encoder.eval()
                    raise TrainingError(
                        f"non-finite loss {loss.item()} at epoch {epoch}, step {sched.last_epoch}"
                    )
                opt.zero_grad()
                loss.backward()
                opt.step()
                sched.step()
                running += loss.item() * len(idx)
                seen += len(idx)
            encoder.eval()
            report = det.evaluate(val)
            det.history.append(
                EpochRecord(epoch, running / seen, report.f1_macro, report.accuracy,
                            opt.param_groups[0]["lr"])
            )
            log.debug("epoch %d loss %.4f val macro-F1 %.4f", epoch, running / seen, report.f1_macro)
            if report.f1_macro > best_f1:
                best_f1, stale = report.f1_macro, 0
                det.best_epoch = epoch
                best_state = (copy.deepcopy(encoder.state_dict()), copy.deepcopy(det.head.state_dict()))
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break
    encoder.load_state_dict(best_state[0])
    det.head.load_state_dict(best_state[1])
    return det


@dataclass
class CrossValidation:
    reports: list[MetricsReport]
    summary: FoldSummary
    detectors: list[TrainedDetector] = field(repr=False)


def cross_validate(
    corpus: Corpus,
    k: int = 5,
    config: TrainingConfig = TrainingConfig(),
    encoder: TextEncoder | None = None,
    early_stop_fraction: float = 0.1,
    **encoder_options,
) -> CrossValidation:
    """Train one detector per stratified fold and score it on the held-out fold.

    Early stopping never sees the held-out fold: a stratified slice of size
    ``early_stop_fraction`` of each fold's training ids serves as validation.
    """
    reports, detectors = [], []
    inner_k = max(2, round(1 / early_stop_fraction))
    for fold in make_folds(corpus, k, config.seed):
        train_part = corpus.subset(fold.train_ids, "train")
        held_out = corpus.subset(fold.val_ids, "val")
        inner = make_folds(train_part, inner_k, config.seed)[0]
        det = train(
            train_part.subset(inner.train_ids),
            train_part.subset(inner.val_ids, "val"),
            config,
            encoder,
            **encoder_options,
        )
        reports.append(det.evaluate(held_out))
        detectors.append(det)
        log.info("fold %d macro-F1 %.4f", fold.fold_index, reports[-1].f1_macro)
    return CrossValidation(reports, aggregate_folds(reports), detectors)
