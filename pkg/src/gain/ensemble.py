"""Model aggregation: logit averaging, (weighted) token voting and k-fold
cross-validation plans, plus the JSON-lines prediction interchange format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import TAGS, Dataset, repair_bio
from .errors import ConfigError, ContractError, DataError


def avg_logits(members: list[np.ndarray]) -> np.ndarray:
    """Elementwise mean of equally shaped logit matrices."""
    if not members:
        raise ContractError("avg_logits needs at least one member")
    first = np.asarray(members[0], dtype=np.float64)
    for m in members[1:]:
        if np.asarray(m).shape != first.shape:
            raise ContractError(
                f"logit shape mismatch: {np.asarray(m).shape} vs {first.shape}"
            )
    return np.mean([np.asarray(m, dtype=np.float64) for m in members], axis=0)


def avg_logits_decode(members: list[np.ndarray], decoder) -> list[int]:
    """Mean the members' logits, then apply the supplied decode."""
    return decoder(avg_logits(members))


def weighted_token_vote(members: list[list[int]], weights=None) -> list[int]:
    """Per-token weighted plurality vote over tag sequences.

    Ties break to the lowest tag index; the result is BIO-repaired.
    """
    if not members:
        raise ContractError("vote needs at least one member")
    n = len(members[0])
    for seq in members:
        if len(seq) != n:
            raise ContractError(f"member length mismatch: {len(seq)} vs {n}")
    if weights is None:
        weights = [1.0] * len(members)
    if len(weights) != len(members):
        raise ContractError(f"{len(weights)} weights for {len(members)} members")
    if any(w < 0 for w in weights):
        raise ContractError("vote weights must be >= 0")
    if not any(w > 0 for w in weights):
        raise ContractError("at least one vote weight must be positive")

    tally = np.zeros((n, len(TAGS)))
    for seq, w in zip(members, weights):
        for pos, tag in enumerate(seq):
            tally[pos, tag] += w
    voted = [int(i) for i in np.argmax(tally, axis=1)]
    return repair_bio(voted)


@dataclass(frozen=True)
class FoldPlan:
    """Disjoint validation folds covering a dataset; sizes differ by <= 1."""

    folds: tuple[tuple[int, ...], ...]
    seed: int

    def train_val(self, data: Dataset, fold: int) -> tuple[Dataset, Dataset]:
        val_idx = self.folds[fold]
        val_set = set(val_idx)
        train_idx = [i for i in range(len(data)) if i not in val_set]
        return data.subset(train_idx, f"{data.name}-fold{fold}-train"), \
            data.subset(val_idx, f"{data.name}-fold{fold}-val")


def kfold_split(data: Dataset, k: int, seed: int) -> FoldPlan:
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if k > len(data):
        raise ConfigError(f"k={k} exceeds dataset size {len(data)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    base, extra = divmod(len(data), k)
    folds = []
    cursor = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(tuple(int(j) for j in order[cursor : cursor + size]))
        cursor += size
    return FoldPlan(tuple(folds), seed)


@dataclass
class PredictionSet:
    """One model's predictions over a fixed sentence list.

    Carries either decoded tag sequences (vote input) or per-token logits
    with 13 columns (averaging input), never both.
    """

    model_id: str
    tokens: list[tuple[str, ...]]
    tags: list[list[int]] | None = None
    logits: list[np.ndarray] | None = None
    weight: float = 1.0

    def __post_init__(self):
        if (self.tags is None) == (self.logits is None):
            raise ContractError("prediction set needs exactly one of tags or logits")
        if self.weight < 0:
            raise ContractError("weight must be >= 0")
        n = len(self.tokens)
        payload = self.tags if self.tags is not None else self.logits
        if len(payload) != n:
            raise ContractError(f"{len(payload)} predictions for {n} sentences")


def check_aligned(members: list[PredictionSet]) -> None:
    """All members must cover identical sentences."""
    if not members:
        raise ContractError("no prediction sets given")
    first = members[0].tokens
    for m in members[1:]:
        if m.tokens != first:
            raise ContractError(
                f"prediction sets {members[0].model_id!r} and {m.model_id!r} "
                "cover different sentences"
            )


def save_predictions(pred: PredictionSet, path) -> None:
    """JSON-lines: one object per sentence with tokens and tags or logits."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, tokens in enumerate(pred.tokens):
            obj: dict = {"model_id": pred.model_id, "tokens": list(tokens)}
            if pred.tags is not None:
                obj["tags"] = [TAGS[t] for t in pred.tags[i]]
            else:
                obj["logits"] = [[float(x) for x in row] for row in pred.logits[i]]
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def load_predictions(path) -> PredictionSet:
    tokens: list[tuple[str, ...]] = []
    tags: list[list[int]] = []
    logits: list[np.ndarray] = []
    model_id = ""
    tag_index = {name: i for i, name in enumerate(TAGS)}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {line_no}: invalid JSON ({exc})") from None
            model_id = obj.get("model_id", model_id)
            toks = tuple(obj["tokens"])
            tokens.append(toks)
            if "tags" in obj:
                try:
                    tags.append([tag_index[t] for t in obj["tags"]])
                except KeyError as exc:
                    raise DataError(f"{path}: line {line_no}: unknown tag {exc}") from None
                if len(obj["tags"]) != len(toks):
                    raise DataError(f"{path}: line {line_no}: tag/token length mismatch")
            elif "logits" in obj:
                arr = np.asarray(obj["logits"], dtype=np.float64)
                if arr.ndim != 2 or arr.shape != (len(toks), len(TAGS)):
                    raise DataError(
                        f"{path}: line {line_no}: logits must be {len(toks)} x {len(TAGS)}"
                    )
                logits.append(arr)
            else:
                raise DataError(f"{path}: line {line_no}: needs tags or logits")
    if tags and logits:
        raise DataError(f"{path}: mixes tag and logit records")
    return PredictionSet(
        model_id,
        tokens,
        tags=tags if tags else None,
        logits=logits if logits else None,
    )
