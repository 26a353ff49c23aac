import json

import numpy as np
import pytest

from gain.corpus import Dataset, Sentence, entity_spans, random_valid_tags, spans_to_tags
from gain.errors import DataError
from gain.metrics import evaluate


def ds(*sentences):
    return Dataset(tuple(sentences))


def sent(n, spans):
    tokens = tuple(f"t{i}" for i in range(n))
    return Sentence(tokens, tuple(spans_to_tags(spans, n)))


class TestEvaluate:
    def test_perfect_prediction(self):
        gold = ds(sent(4, [(0, 2, "PER")]), sent(3, [(1, 2, "LOC")]))
        report = evaluate(gold, gold)
        assert report.macro_f1 == 1.0
        assert report.macro_p == 1.0
        assert report.macro_r == 1.0
        assert report.md_f1 == 1.0
        for score in report.per_label.values():
            assert score.f1 == 1.0

    def test_right_span_wrong_type(self):
        gold = ds(sent(3, [(0, 2, "PER")]))
        pred = ds(sent(3, [(0, 2, "LOC")]))
        report = evaluate(pred, gold)
        assert report.per_label["PER"].recall == 0.0
        assert report.per_label["LOC"].precision == 0.0
        assert report.md_f1 == 1.0

    def test_hand_computed_three_label_case(self):
        # gold: 2 PER + 1 LOC; pred: 1 correct PER, 1 spurious PROD, 1 correct LOC
        gold = ds(
            sent(5, [(0, 1, "PER"), (3, 5, "PER")]),
            sent(4, [(1, 3, "LOC")]),
        )
        pred = ds(
            sent(5, [(0, 1, "PER")]),
            sent(4, [(1, 3, "LOC"), (3, 4, "PROD")]),
        )
        report = evaluate(pred, gold)
        assert report.per_label["PER"].f1 == pytest.approx(2 / 3)
        assert report.per_label["LOC"].f1 == 1.0
        assert report.per_label["PROD"].f1 == 0.0
        assert set(report.per_label) == {"PER", "LOC", "PROD"}
        assert report.macro_f1 == pytest.approx((2 / 3 + 1.0 + 0.0) / 3)

    def test_label_absent_from_both_excluded(self):
        gold = ds(sent(3, [(0, 1, "PER")]))
        report = evaluate(gold, gold)
        assert "CW" not in report.per_label

    def test_exact_match_required(self):
        gold = ds(sent(5, [(1, 4, "GRP")]))
        pred = ds(sent(5, [(1, 3, "GRP")]))
        report = evaluate(pred, gold)
        assert report.per_label["GRP"].f1 == 0.0
        assert report.md_f1 == 0.0

    def test_sentence_count_mismatch(self):
        with pytest.raises(DataError):
            evaluate(ds(sent(3, [])), ds(sent(3, []), sent(2, [])))

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            evaluate(ds(sent(3, [])), ds(sent(4, [])))

    def test_macro_invariant_under_sentence_permutation(self):
        rng = np.random.default_rng(5)
        sentences = []
        for _ in range(30):
            n = int(rng.integers(1, 10))
            sentences.append(Sentence(tuple(f"t{i}" for i in range(n)),
                                      tuple(random_valid_tags(rng, n))))
        preds = []
        for s in sentences:
            preds.append(Sentence(s.tokens, tuple(random_valid_tags(rng, len(s)))))
        base = evaluate(Dataset(tuple(preds)), Dataset(tuple(sentences)))
        order = rng.permutation(len(sentences))
        shuffled = evaluate(Dataset(tuple(preds[i] for i in order)),
                            Dataset(tuple(sentences[i] for i in order)))
        assert base.macro_f1 == shuffled.macro_f1
        assert base.md_f1 == shuffled.md_f1

    def test_adding_correct_entity_never_hurts(self):
        gold = ds(sent(6, [(0, 1, "PER"), (2, 4, "LOC")]))
        pred_without = ds(sent(6, [(0, 1, "PER")]))
        pred_with = ds(sent(6, [(0, 1, "PER"), (2, 4, "LOC")]))
        before = evaluate(pred_without, gold)
        after = evaluate(pred_with, gold)
        for label in before.per_label:
            assert after.per_label[label].f1 >= before.per_label[label].f1

    def test_typed_matches_bounded_by_untyped(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n = int(rng.integers(1, 12))
            gold_tags = random_valid_tags(rng, n)
            pred_tags = random_valid_tags(rng, n)
            tokens = tuple(f"t{i}" for i in range(n))
            report = evaluate(ds(Sentence(tokens, tuple(pred_tags))),
                              ds(Sentence(tokens, tuple(gold_tags))))
            typed = sum(s.matched_count for s in report.per_label.values())
            gold_spans = {(x, y) for x, y, _ in entity_spans(gold_tags)}
            pred_spans = {(x, y) for x, y, _ in entity_spans(pred_tags)}
            assert typed <= len(gold_spans & pred_spans)


class TestReportOutput:
    def test_json_is_canonical(self):
        gold = ds(sent(3, [(0, 1, "PER")]))
        report = evaluate(gold, gold)
        parsed = json.loads(report.to_json())
        assert parsed["macro_f1"] == 1.0
        assert report.to_json() == json.dumps(parsed, sort_keys=True,
                                              separators=(",", ":"))

    def test_table_rows(self):
        gold = ds(sent(3, [(0, 1, "PER")]), sent(3, [(1, 3, "CW")]))
        table = evaluate(gold, gold).to_table()
        for row in ("macro@F1", "macro@P", "macro@R", "MD@F1", "F1@PER", "F1@CW"):
            assert row in table
        assert "1.0000" in table
