"""
Softening a comment with a masked language model
================================================

Mask the most hateful words of a comment, let a masked language model propose
replacements, and keep the candidate closest in meaning to the source.
"""

import torch

from hatescope import synth
from hatescope.attribution import HateWord
from hatescope.encoder import build_encoder, pretrain_mlm
from hatescope.reducer import ReducerConfig, bertscore, plan_masks, reduce_text

torch.set_num_threads(1)

s = synth.generate(1000, trigger_rate=0.5, seed=1)
mlm = build_encoder(s.corpus.texts, seed=0)
losses = pretrain_mlm(mlm, s.corpus.texts, epochs=10, seed=0)
print("masked-LM loss by epoch:", [round(x, 2) for x in losses])

###############################################################################
# Pretend attribution already happened: two hate words with scores.
source = next(c for c in s.corpus if len(s.planted[c.id]) == 2)
text, words = source.text, source.words
hate = [HateWord(words[p], p, 1.0 - 0.1 * i) for i, p in enumerate(s.positions[source.id])]
print(text)
print("hate words:", [(h.word, h.score) for h in hate])

# With a mask fraction of 0.5, ceil(0.5 * 2) = 1 word is masked: the top one.
plan = plan_masks(text, hate, 0.5, mlm.tokenizer)
print("masked:", plan.masked_text)

###############################################################################
# Ten candidates, scored by BERTScore against the source. Precision matches
# each candidate token to its best source token; recall does the reverse.
r = reduce_text(text, hate, mlm, ReducerConfig(mask_fraction=0.5, candidates=10), scorer=mlm)
for i, c in enumerate(r.selection.candidates):
    mark = "*" if i == r.selection.index else " "
    print(f"{mark} {c.score.f1:.4f}  {c.text}")
print(r.selection.selection_reason)

# BERTScore is symmetric in F1 and swaps precision with recall
ab, ba = bertscore(text, r.rewrite, mlm), bertscore(r.rewrite, text, mlm)
print(ab, ba, sep="\n")
