import numpy as np
import pytest

from gain.corpus import Dataset, Sentence, random_valid_tags, validate_bio
from gain.ensemble import (
    PredictionSet,
    avg_logits,
    avg_logits_decode,
    check_aligned,
    kfold_split,
    load_predictions,
    save_predictions,
    weighted_token_vote,
)
from gain.errors import ConfigError, ContractError, DataError
from gain.model import decode_softmax_logits


def random_dataset(rng, n):
    sentences = []
    for _ in range(n):
        length = int(rng.integers(1, 10))
        sentences.append(Sentence(tuple(f"t{i}" for i in range(length)),
                                  tuple(random_valid_tags(rng, length))))
    return Dataset(tuple(sentences))


class TestAvgLogits:
    def test_identical_members_equal_single_decode(self):
        rng = np.random.default_rng(0)
        logits = rng.uniform(-2, 2, (8, 13))
        members = [logits.copy() for _ in range(5)]
        assert avg_logits_decode(members, decode_softmax_logits) == \
            decode_softmax_logits(logits)

    def test_opposite_members_tie_break_lowest_index(self):
        rng = np.random.default_rng(1)
        c = rng.uniform(0.5, 2.0, (6, 13))
        assert avg_logits_decode([c, -c], decode_softmax_logits) == [0] * 6

    def test_matches_mean_then_argmax_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            members = [rng.uniform(-3, 3, (4, 13)) for _ in range(5)]
            oracle = decode_softmax_logits(sum(members) / 5)
            assert avg_logits_decode(members, decode_softmax_logits) == oracle

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        members = [rng.uniform(-3, 3, (5, 13)) for _ in range(4)]
        a = avg_logits(members)
        b = avg_logits(members[::-1])
        assert np.allclose(a, b)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            avg_logits([np.zeros((2, 13)), np.zeros((3, 13))])

    def test_empty_members(self):
        with pytest.raises(ContractError):
            avg_logits([])


class TestVote:
    def test_single_positive_weight_selects_member(self):
        members = [[1, 2, 0], [3, 4, 5], [6, 7, 8]]
        got = weighted_token_vote(members, [1.0, 0.0, 0.0])
        assert got == weighted_token_vote([members[0]], [1.0])

    def test_majority_wins(self):
        members = [[0, 1, 2], [0, 1, 2], [5, 6, 0]]
        assert weighted_token_vote(members) == [0, 1, 2]

    def test_tie_breaks_to_lowest_tag_index(self):
        assert weighted_token_vote([[3], [1]]) == [1]

    def test_positive_rescaling_invariant(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(1, 10))
            members = [random_valid_tags(rng, n) for _ in range(4)]
            weights = list(rng.uniform(0.1, 3.0, 4))
            scale = float(rng.uniform(0.01, 50))
            assert weighted_token_vote(members, weights) == \
                weighted_token_vote(members, [w * scale for w in weights])

    def test_permutation_invariant_with_weights(self):
        rng = np.random.default_rng(5)
        members = [random_valid_tags(rng, 8) for _ in range(4)]
        weights = [0.5, 1.5, 2.0, 0.25]
        order = [2, 0, 3, 1]
        assert weighted_token_vote(members, weights) == \
            weighted_token_vote([members[i] for i in order],
                                [weights[i] for i in order])

    def test_output_always_bio_valid(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            n = int(rng.integers(1, 12))
            members = [[int(t) for t in rng.integers(0, 13, n)] for _ in range(3)]
            assert validate_bio(weighted_token_vote(members)) == []

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            weighted_token_vote([[0, 1], [0]])

    def test_all_zero_weights(self):
        with pytest.raises(ContractError):
            weighted_token_vote([[0], [0]], [0.0, 0.0])

    def test_negative_weight(self):
        with pytest.raises(ContractError):
            weighted_token_vote([[0]], [-1.0])


class TestKfold:
    def test_ten_sentences_five_folds(self):
        rng = np.random.default_rng(7)
        data = random_dataset(rng, 10)
        plan = kfold_split(data, 5, seed=3)
        assert all(len(f) == 2 for f in plan.folds)
        seen = [i for fold in plan.folds for i in fold]
        assert sorted(seen) == list(range(10))

    def test_same_seed_same_plan(self):
        rng = np.random.default_rng(8)
        data = random_dataset(rng, 23)
        assert kfold_split(data, 4, seed=9) == kfold_split(data, 4, seed=9)

    def test_every_sentence_in_exactly_one_fold(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            n = int(rng.integers(5, 40))
            k = int(rng.integers(2, min(6, n) + 1))
            plan = kfold_split(random_dataset(rng, n), k, seed=int(rng.integers(1000)))
            seen = sorted(i for fold in plan.folds for i in fold)
            assert seen == list(range(n))
            sizes = [len(f) for f in plan.folds]
            assert max(sizes) - min(sizes) <= 1

    def test_train_val_split(self):
        rng = np.random.default_rng(10)
        data = random_dataset(rng, 9)
        plan = kfold_split(data, 3, seed=1)
        train, val = plan.train_val(data, 1)
        assert len(train) + len(val) == 9
        assert len(val) == 3

    def test_k_too_small_or_large(self):
        rng = np.random.default_rng(11)
        data = random_dataset(rng, 4)
        with pytest.raises(ConfigError):
            kfold_split(data, 1, seed=0)
        with pytest.raises(ConfigError):
            kfold_split(data, 5, seed=0)


class TestInterchange:
    def test_tags_roundtrip(self, tmp_path):
        rng = np.random.default_rng(12)
        data = random_dataset(rng, 6)
        pset = PredictionSet("m1", [s.tokens for s in data],
                             tags=[list(s.tags) for s in data])
        path = tmp_path / "preds.jsonl"
        save_predictions(pset, path)
        loaded = load_predictions(path)
        assert loaded.model_id == "m1"
        assert loaded.tokens == pset.tokens
        assert loaded.tags == pset.tags

    def test_logits_roundtrip(self, tmp_path):
        rng = np.random.default_rng(13)
        tokens = [("a", "b"), ("c",)]
        logits = [rng.uniform(-1, 1, (2, 13)), rng.uniform(-1, 1, (1, 13))]
        pset = PredictionSet("m2", tokens, logits=logits)
        path = tmp_path / "logits.jsonl"
        save_predictions(pset, path)
        loaded = load_predictions(path)
        for a, b in zip(loaded.logits, logits):
            assert np.allclose(a, b)

    def test_needs_exactly_one_payload(self):
        with pytest.raises(ContractError):
            PredictionSet("x", [("a",)])
        with pytest.raises(ContractError):
            PredictionSet("x", [("a",)], tags=[[0]], logits=[np.zeros((1, 13))])

    def test_misaligned_members_rejected(self):
        a = PredictionSet("a", [("x", "y")], tags=[[0, 0]])
        b = PredictionSet("b", [("x", "z")], tags=[[0, 0]])
        with pytest.raises(ContractError):
            check_aligned([a, b])

    def test_bad_json_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"tokens": ["a"], "tags": ["O"]}\nnot json\n')
        with pytest.raises(DataError, match="line 2"):
            load_predictions(path)

    def test_unknown_tag_name(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"model_id": "m", "tokens": ["a"], "tags": ["B-XX"]}\n')
        with pytest.raises(DataError):
            load_predictions(path)

    def test_wrong_logit_width(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"model_id": "m", "tokens": ["a"], "logits": [[1, 2]]}\n')
        with pytest.raises(DataError):
            load_predictions(path)
