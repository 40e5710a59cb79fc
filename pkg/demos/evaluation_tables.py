"""
Fold tables, overlap and rater agreement
========================================

The evaluation helpers work on plain label lists and sets, so they can be
checked against arithmetic done by hand.
"""

from hatescope.evaluation import aggregate_folds, classification_metrics, format_table, jaccard, pearson

gold = [1, 1, 0, 0]
pred = [0, 0, 0, 0]
r = classification_metrics(pred, gold)
# class 0: precision 2/4, recall 1, F1 2/3; class 1 is never predicted, F1 0
print(f"accuracy {r.accuracy}  macro-F1 {r.f1_macro:.4f}  micro-F1 {r.f1_micro:.4f}")

# per-fold reports reduce to mean and sample standard deviation
folds = [classification_metrics(p, g) for p, g in [
    ([1, 0, 1, 0], [1, 0, 1, 0]),
    ([1, 0, 0, 0], [1, 0, 1, 0]),
    ([1, 1, 1, 0], [1, 0, 1, 0]),
]]
print(format_table({"toy": aggregate_folds(folds)}))

# word overlap between two selections
print(jaccard({"vile", "scum"}, {"scum", "filthy"}))  # 1/3

# two raters scoring the same four rewrites on a 1-5 scale
print(pearson([1, 2, 3, 4], [1, 3, 2, 4]))  # 0.8
