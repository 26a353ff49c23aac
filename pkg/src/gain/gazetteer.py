"""Label-partitioned surface-form store, prefix-tree matching, one-hot
feature emission, coverage analytics and coverage-controlled subsampling.

A surface form is a tuple of tokens. The same surface may legitimately carry
several labels ("apple" is both PROD and CORP); within one label surfaces are
deduplicated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import (
    ENTITY_TYPES,
    O_TAG,
    TAGS,
    TYPE_INDEX,
    Dataset,
    b_tag,
    entity_spans,
    i_tag,
)
from .errors import ContractError, DataError


class Gazetteer:
    """Mutable store of entity surfaces partitioned by label."""

    def __init__(self):
        self._by_label: dict[str, set[tuple[str, ...]]] = {t: set() for t in ENTITY_TYPES}

    def add(self, surface, label: str) -> None:
        surface = tuple(surface)
        if label not in TYPE_INDEX:
            raise DataError(f"unknown label {label!r}")
        if not surface or any(not tok for tok in surface):
            raise DataError(f"empty surface for label {label}")
        self._by_label[label].add(surface)

    def surfaces(self, label: str) -> tuple[tuple[str, ...], ...]:
        """All surfaces of a label in a stable sorted order."""
        return tuple(sorted(self._by_label[label]))

    def labels_of(self, surface) -> set[str]:
        surface = tuple(surface)
        return {t for t, surfaces in self._by_label.items() if surface in surfaces}

    def counts(self) -> dict[str, int]:
        return {t: len(s) for t, s in self._by_label.items()}

    def total_entries(self) -> int:
        return sum(len(s) for s in self._by_label.values())

    def entries(self):
        for label in ENTITY_TYPES:
            for surface in sorted(self._by_label[label]):
                yield surface, label

    def __eq__(self, other) -> bool:
        return isinstance(other, Gazetteer) and self._by_label == other._by_label


def parse_gazetteer(text: str) -> Gazetteer:
    """Parse `surface<TAB>label` lines; surface tokens are space-separated."""
    gaz = Gazetteer()
    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataError(f"line {line_no}: expected surface<TAB>label, got {line!r}")
        surface_text, label = line.split("\t", 1)
        tokens = tuple(surface_text.split())
        if not tokens:
            raise DataError(f"line {line_no}: empty surface")
        if label not in TYPE_INDEX:
            raise DataError(f"line {line_no}: unknown label {label!r}")
        gaz.add(tokens, label)
    return gaz


def serialize_gazetteer(gaz: Gazetteer) -> str:
    lines = [f"{' '.join(surface)}\t{label}" for surface, label in gaz.entries()]
    return "\n".join(lines) + ("\n" if lines else "")


def load_gazetteer(path) -> Gazetteer:
    with open(path, encoding="utf-8") as fh:
        return parse_gazetteer(fh.read())


def save_gazetteer(gaz: Gazetteer, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_gazetteer(gaz))


class _Node:
    __slots__ = ("children", "labels")

    def __init__(self):
        self.children: dict[str, _Node] = {}
        self.labels: set[str] = set()


class MatchTrie:
    """Read-only token prefix tree over gazetteer surfaces."""

    def __init__(self, lowercase: bool = False):
        self.root = _Node()
        self.lowercase = lowercase
        self.node_count = 1

    def _insert(self, surface, label: str) -> None:
        node = self.root
        for tok in surface:
            if self.lowercase:
                tok = tok.lower()
            nxt = node.children.get(tok)
            if nxt is None:
                nxt = _Node()
                node.children[tok] = nxt
                self.node_count += 1
            node = nxt
        node.labels.add(label)

    def lookup(self, surface) -> set[str]:
        node = self.root
        for tok in surface:
            if self.lowercase:
                tok = tok.lower()
            node = node.children.get(tok)
            if node is None:
                return set()
        return set(node.labels)


def build_trie(gaz: Gazetteer, *, lowercase: bool = False) -> MatchTrie:
    trie = MatchTrie(lowercase)
    for surface, label in gaz.entries():
        trie._insert(surface, label)
    return trie


@dataclass(frozen=True, order=True)
class Match:
    start: int
    length: int
    label: str

    @property
    def end(self) -> int:
        return self.start + self.length


def match_tokens(trie: MatchTrie, tokens, policy: str = "longest") -> list[Match]:
    """All gazetteer hits in a token sequence.

    ``all`` reports every (start, surface, label) hit; ``longest`` keeps, for
    each (start, label), only the longest hit there. Output is sorted by
    (start, canonical label order, length descending).
    """
    if policy not in ("longest", "all"):
        raise ContractError(f"unknown match policy {policy!r}")
    if not tokens:
        raise ContractError("match_tokens requires at least one token")
    hits: list[Match] = []
    for start in range(len(tokens)):
        node = trie.root
        for end in range(start, len(tokens)):
            tok = tokens[end].lower() if trie.lowercase else tokens[end]
            node = node.children.get(tok)
            if node is None:
                break
            for label in node.labels:
                hits.append(Match(start, end - start + 1, label))
    if policy == "longest":
        best: dict[tuple[int, str], Match] = {}
        for m in hits:
            key = (m.start, m.label)
            if key not in best or m.length > best[key].length:
                best[key] = m
        hits = list(best.values())
    hits.sort(key=lambda m: (m.start, TYPE_INDEX[m.label], -m.length))
    return hits


def matches_to_features(matches, n_tokens: int) -> np.ndarray:
    """OR-combine match contributions into an N x 13 one-hot feature matrix.

    Each match sets B-label at its start row and I-label on continuation
    rows; rows untouched by any match get O=1.
    """
    feats = np.zeros((n_tokens, len(TAGS)), dtype=np.float64)
    for m in matches:
        feats[m.start, b_tag(m.label)] = 1.0
        if m.length > 1:
            feats[m.start + 1 : m.end, i_tag(m.label)] = 1.0
    untouched = feats.sum(axis=1) == 0
    feats[untouched, O_TAG] = 1.0
    return feats


def match_features(trie: MatchTrie, tokens, policy: str = "longest") -> np.ndarray:
    return matches_to_features(match_tokens(trie, tokens, policy), len(tokens))


@dataclass(frozen=True)
class CoverageReport:
    """Per-label fraction of distinct gold entity surfaces found in the
    gazetteer under the same label; the average is unweighted over labels
    that occur in the data."""

    per_label_rate: dict[str, float]
    average_rate: float
    total_entries: int
    per_label_counts: dict[str, tuple[int, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_label_rate": dict(self.per_label_rate),
            "average_rate": self.average_rate,
            "total_entries": self.total_entries,
            "per_label_counts": {k: list(v) for k, v in self.per_label_counts.items()},
        }


def distinct_entities(data: Dataset) -> dict[str, set[tuple[str, ...]]]:
    """Distinct gold entity surfaces per label."""
    out: dict[str, set[tuple[str, ...]]] = {t: set() for t in ENTITY_TYPES}
    for sent in data:
        for start, end, etype in entity_spans(sent.tags):
            out[etype].add(tuple(sent.tokens[start:end]))
    return out


def coverage_rate(gaz: Gazetteer, data: Dataset) -> CoverageReport:
    if len(data) == 0:
        raise ContractError("coverage_rate requires a non-empty dataset")
    gold = distinct_entities(data)
    rates: dict[str, float] = {}
    counts: dict[str, tuple[int, int]] = {}
    for label in ENTITY_TYPES:
        surfaces = gold[label]
        if not surfaces:
            continue
        found = sum(1 for s in surfaces if s in gaz._by_label[label])
        rates[label] = found / len(surfaces)
        counts[label] = (found, len(surfaces))
    average = sum(rates.values()) / len(rates) if rates else 0.0
    return CoverageReport(rates, average, gaz.total_entries(), counts)


def subsample_coverage(data: Dataset, target: float, rng: np.random.Generator) -> Gazetteer:
    """Gazetteer holding a uniform random fraction ``target`` of the
    dataset's distinct gold entities per label (count rounded to nearest)."""
    if not 0.0 <= target <= 1.0:
        raise ContractError(f"target fraction must be in [0, 1], got {target}")
    gaz = Gazetteer()
    gold = distinct_entities(data)
    for label in ENTITY_TYPES:
        surfaces = sorted(gold[label])
        keep = int(round(target * len(surfaces)))
        if keep == 0:
            continue
        idx = rng.choice(len(surfaces), size=keep, replace=False)
        for i in sorted(idx):
            gaz.add(surfaces[i], label)
    return gaz
