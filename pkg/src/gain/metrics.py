"""Entity-level evaluation: per-label precision/recall/F1, macro averages
and type-agnostic mention-detection F1.

An entity counts as matched only on exact (start, end, type) equality.
Labels absent from both gold and prediction are excluded from the macro
means; any other zero-division scores 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .corpus import ENTITY_TYPES, Dataset, entity_spans
from .errors import DataError


@dataclass(frozen=True)
class LabelScore:
    precision: float
    recall: float
    f1: float
    gold_count: int
    pred_count: int
    matched_count: int


@dataclass(frozen=True)
class EvalReport:
    per_label: dict[str, LabelScore]
    macro_f1: float
    macro_p: float
    macro_r: float
    md_f1: float

    def to_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "macro_p": self.macro_p,
            "macro_r": self.macro_r,
            "md_f1": self.md_f1,
            "per_label": {
                label: vars(score) for label, score in sorted(self.per_label.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def to_table(self) -> str:
        rows = [
            ("macro@F1", self.macro_f1),
            ("macro@P", self.macro_p),
            ("macro@R", self.macro_r),
            ("MD@F1", self.md_f1),
        ]
        for label in ENTITY_TYPES:
            if label in self.per_label:
                rows.append((f"F1@{label}", self.per_label[label].f1))
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value:.4f}" for name, value in rows)


def _prf(matched: int, pred: int, gold: int) -> tuple[float, float, float]:
    p = matched / pred if pred else 0.0
    r = matched / gold if gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def evaluate(pred: Dataset, gold: Dataset) -> EvalReport:
    if len(pred) != len(gold):
        raise DataError(f"sentence count mismatch: {len(pred)} predicted vs {len(gold)} gold")
    gold_counts = {t: 0 for t in ENTITY_TYPES}
    pred_counts = {t: 0 for t in ENTITY_TYPES}
    matched = {t: 0 for t in ENTITY_TYPES}
    md_gold = md_pred = md_matched = 0

    for idx, (p_sent, g_sent) in enumerate(zip(pred, gold)):
        if len(p_sent) != len(g_sent):
            raise DataError(f"sentence {idx}: length mismatch {len(p_sent)} vs {len(g_sent)}")
        g_spans = set(entity_spans(g_sent.tags))
        p_spans = set(entity_spans(p_sent.tags))
        for start, end, etype in g_spans:
            gold_counts[etype] += 1
        for start, end, etype in p_spans:
            pred_counts[etype] += 1
        for span in g_spans & p_spans:
            matched[span[2]] += 1
        g_untyped = {(s, e) for s, e, _ in g_spans}
        p_untyped = {(s, e) for s, e, _ in p_spans}
        md_gold += len(g_untyped)
        md_pred += len(p_untyped)
        md_matched += len(g_untyped & p_untyped)

    per_label: dict[str, LabelScore] = {}
    for label in ENTITY_TYPES:
        g, p, m = gold_counts[label], pred_counts[label], matched[label]
        if g == 0 and p == 0:
            continue
        prec, rec, f1 = _prf(m, p, g)
        per_label[label] = LabelScore(prec, rec, f1, g, p, m)

    if per_label:
        macro_f1 = sum(s.f1 for s in per_label.values()) / len(per_label)
        macro_p = sum(s.precision for s in per_label.values()) / len(per_label)
        macro_r = sum(s.recall for s in per_label.values()) / len(per_label)
    else:
        macro_f1 = macro_p = macro_r = 0.0
    _, _, md_f1 = _prf(md_matched, md_pred, md_gold)
    return EvalReport(per_label, macro_f1, macro_p, macro_r, md_f1)
