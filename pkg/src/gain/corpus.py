"""Datasets of BIO-tagged sentences: CoNLL-style I/O, validation, augmentation
and synthetic corpus generation.

The tag scheme is fixed: 13 tags, index 0 is ``O`` and indices 1..12 are the
B/I pairs for the six entity types in canonical order (PER, LOC, GRP, CORP,
PROD, CW).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DataError

log = logging.getLogger("gain.corpus")

ENTITY_TYPES: tuple[str, ...] = ("PER", "LOC", "GRP", "CORP", "PROD", "CW")

TAGS: tuple[str, ...] = ("O",) + tuple(
    f"{prefix}-{etype}" for etype in ENTITY_TYPES for prefix in ("B", "I")
)

O_TAG = 0
TAG_INDEX: dict[str, int] = {name: i for i, name in enumerate(TAGS)}
TYPE_INDEX: dict[str, int] = {name: i for i, name in enumerate(ENTITY_TYPES)}


def b_tag(etype: str) -> int:
    return 1 + 2 * TYPE_INDEX[etype]


def i_tag(etype: str) -> int:
    return 2 + 2 * TYPE_INDEX[etype]


def tag_type(tag: int) -> str | None:
    """Entity type of a B-/I- tag, None for O."""
    if tag == O_TAG:
        return None
    return ENTITY_TYPES[(tag - 1) // 2]


def is_b(tag: int) -> bool:
    return tag != O_TAG and (tag - 1) % 2 == 0


def is_i(tag: int) -> bool:
    return tag != O_TAG and (tag - 1) % 2 == 1


@dataclass(frozen=True)
class Sentence:
    """Whitespace tokens plus one tag index per token; tags must be a valid
    BIO sequence (decoders repair before constructing)."""

    tokens: tuple[str, ...]
    tags: tuple[int, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise ContractError(
                f"token/tag length mismatch: {len(self.tokens)} vs {len(self.tags)}"
            )
        bad = validate_bio(self.tags)
        if bad:
            pos, expected, found = bad[0]
            raise ContractError(f"invalid BIO at position {pos}: {found} (expected {expected})")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Dataset:
    sentences: tuple[Sentence, ...]
    name: str = ""

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def subset(self, indices, name: str = "") -> "Dataset":
        return Dataset(tuple(self.sentences[i] for i in indices), name or self.name)

    def concat(self, other: "Dataset", name: str = "") -> "Dataset":
        return Dataset(self.sentences + other.sentences, name or self.name)


def validate_bio(tags) -> list[tuple[int, str, str]]:
    """Check a tag-index sequence against the BIO rules.

    Returns one record per violation: (position, expected context, found).
    An I-X is valid only directly after a B-X or I-X of the same type.
    """
    violations = []
    for pos, tag in enumerate(tags):
        if not 0 <= tag < len(TAGS):
            raise ContractError(f"tag index {tag} out of range at position {pos}")
        if not is_i(tag):
            continue
        etype = tag_type(tag)
        prev = tags[pos - 1] if pos > 0 else None
        if prev is None:
            violations.append((pos, f"B-{etype}/I-{etype}", f"{TAGS[tag]} at sentence start"))
        elif tag_type(prev) != etype or prev == O_TAG:
            violations.append((pos, f"B-{etype}/I-{etype}", f"{TAGS[prev]} precedes {TAGS[tag]}"))
    return violations


def repair_bio(tags) -> list[int]:
    """Lenient repair: any orphan I-X becomes B-X."""
    out = list(tags)
    for pos, _expected, _found in validate_bio(tags):
        out[pos] = out[pos] - 1  # I-X -> B-X
    return out


def parse_conll(text: str, *, lenient: bool = False, name: str = "") -> Dataset:
    """Parse token<TAB>tag lines into a Dataset.

    Sentences are separated by blank lines. Unknown tag names raise a
    DataError with the offending line number; BIO violations raise in strict
    mode and are repaired with a warning when ``lenient`` is set.
    """
    sentences: list[Sentence] = []
    tokens: list[str] = []
    tags: list[int] = []
    start_line = 1

    def flush(line_no: int):
        nonlocal tokens, tags
        if not tokens:
            return
        bad = validate_bio(tags)
        if bad:
            pos, expected, found = bad[0]
            if not lenient:
                raise DataError(
                    f"BIO violation at line {start_line + pos}: {found} (expected {expected})"
                )
            log.warning("repaired BIO violation near line %d: %s", start_line + pos, found)
            repaired = repair_bio(tags)
        else:
            repaired = tags
        sentences.append(Sentence(tuple(tokens), tuple(repaired)))
        tokens, tags = [], []

    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush(line_no)
            start_line = line_no + 1
            continue
        if "\t" not in line:
            raise DataError(f"line {line_no}: expected token<TAB>tag, got {line!r}")
        token, tag_name = line.split("\t", 1)
        if not token:
            raise DataError(f"line {line_no}: empty token")
        if tag_name not in TAG_INDEX:
            raise DataError(f"line {line_no}: unknown tag {tag_name!r}")
        if not tokens:
            start_line = line_no
        tokens.append(token)
        tags.append(TAG_INDEX[tag_name])
    flush(line_no + 1 if text else 1)
    return Dataset(tuple(sentences), name)


def serialize_conll(data: Dataset) -> str:
    """Canonical CoNLL-style text: LF endings, one blank line between
    sentences, trailing newline."""
    blocks = [
        "\n".join(f"{tok}\t{TAGS[tag]}" for tok, tag in zip(s.tokens, s.tags))
        for s in data.sentences
    ]
    if not blocks:
        return ""
    return "\n\n".join(blocks) + "\n"


def load_dataset(path, *, lenient: bool = False, name: str = "") -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_conll(fh.read(), lenient=lenient, name=name or str(path))


def save_dataset(data: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_conll(data))


def tags_to_onehot(tags) -> np.ndarray:
    """N x 13 one-hot rows from gold tag indices."""
    mat = np.zeros((len(tags), len(TAGS)), dtype=np.float64)
    for i, tag in enumerate(tags):
        if not 0 <= tag < len(TAGS):
            raise DataError(f"tag index {tag} out of range at position {i}")
        mat[i, tag] = 1.0
    return mat


def entity_spans(tags) -> list[tuple[int, int, str]]:
    """Maximal (start, end_exclusive, type) spans of a valid BIO sequence."""
    spans = []
    start = None
    cur_type = None
    for pos, tag in enumerate(tags):
        if is_b(tag):
            if start is not None:
                spans.append((start, pos, cur_type))
            start, cur_type = pos, tag_type(tag)
        elif is_i(tag) and start is not None and tag_type(tag) == cur_type:
            continue
        else:
            if start is not None:
                spans.append((start, pos, cur_type))
                start, cur_type = None, None
    if start is not None:
        spans.append((start, len(tags), cur_type))
    return spans


def spans_to_tags(spans, length: int) -> list[int]:
    """Inverse of entity_spans for non-overlapping spans."""
    tags = [O_TAG] * length
    for start, end, etype in spans:
        if not 0 <= start < end <= length:
            raise ContractError(f"span ({start}, {end}) out of bounds for length {length}")
        tags[start] = b_tag(etype)
        for pos in range(start + 1, end):
            tags[pos] = i_tag(etype)
    return tags


def augment_replace(data: Dataset, gaz, rng: np.random.Generator) -> Dataset:
    """Replace every gold entity with a uniformly sampled same-label
    gazetteer surface form; tags are re-expanded to the new token length.

    Entity counts and types are preserved; only surfaces (and hence sentence
    lengths) change. Concatenating the result with the original gives the
    doubled augmented set.
    """
    needed = {etype for s in data for _, _, etype in entity_spans(s.tags)}
    missing = sorted(t for t in needed if not gaz.surfaces(t))
    if missing:
        raise DataError(f"gazetteer has no entries for labels: {', '.join(missing)}")

    out = []
    for sent in data:
        spans = entity_spans(sent.tags)
        if not spans:
            out.append(sent)
            continue
        tokens: list[str] = []
        tags: list[int] = []
        cursor = 0
        for start, end, etype in spans:
            tokens.extend(sent.tokens[cursor:start])
            tags.extend(sent.tags[cursor:start])
            surfaces = gaz.surfaces(etype)
            surface = surfaces[rng.integers(len(surfaces))]
            tokens.extend(surface)
            tags.append(b_tag(etype))
            tags.extend([i_tag(etype)] * (len(surface) - 1))
            cursor = end
        tokens.extend(sent.tokens[cursor:])
        tags.extend(sent.tags[cursor:])
        out.append(Sentence(tuple(tokens), tuple(tags)))
    return Dataset(tuple(out), data.name)


SLOT_PREFIX = "<"
SLOT_SUFFIX = ">"

LENGTH_RANGE = {"low": (3, 8), "rich": (10, 25)}

_FRESH_LETTERS = np.array(list("bcdfghjklmnpqrstvwxz"))


def _slot_type(token: str) -> str | None:
    if token.startswith(SLOT_PREFIX) and token.endswith(SLOT_SUFFIX):
        return token[1:-1]
    return None


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a deterministic synthetic corpus.

    Templates are token tuples where ``<TYPE>`` marks an entity slot.
    ``entity_source`` selects gazetteer sampling or fresh random strings
    (the latter makes the corpus solvable only with gazetteer access).
    """

    n_sentences: int
    template_pool: tuple[tuple[str, ...], ...]
    context_mode: str = "rich"
    vocab_size: int = 200
    seed: int = 0
    entity_source: str = "gazetteer"
    fresh_max_tokens: int = 2

    def __post_init__(self):
        if self.context_mode not in LENGTH_RANGE:
            raise ConfigError(f"context_mode must be low or rich, got {self.context_mode!r}")
        if self.entity_source not in ("gazetteer", "fresh"):
            raise ConfigError(f"entity_source must be gazetteer or fresh, got {self.entity_source!r}")
        if self.n_sentences < 0:
            raise ConfigError("n_sentences must be >= 0")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")
        if not self.template_pool:
            raise ConfigError("template pool is empty")
        _, hi = LENGTH_RANGE[self.context_mode]
        for template in self.template_pool:
            slots = [t for t in template if _slot_type(t) is not None]
            if not slots:
                raise ConfigError(f"template without entity slot: {template}")
            if len(slots) > hi:
                raise ConfigError(f"template has more slots than the {self.context_mode} length cap: {template}")
            for tok in slots:
                if _slot_type(tok) not in TYPE_INDEX:
                    raise ConfigError(f"unknown slot type in template token {tok!r}")


def default_templates(mode: str) -> tuple[tuple[str, ...], ...]:
    """Hand-written template pools with a mix of typed slots."""
    if mode == "low":
        pool = [
            ("where", "to", "buy", "<PROD>"),
            ("who", "is", "<PER>"),
            ("play", "<CW>", "now"),
            ("is", "<CORP>", "hiring"),
            ("<GRP>", "tour", "dates"),
            ("map", "of", "<LOC>"),
            ("reviews", "for", "<PROD>"),
            ("<PER>", "net", "worth"),
            ("watch", "<CW>", "online"),
            ("<CORP>", "stock", "price"),
            ("flights", "to", "<LOC>"),
            ("<GRP>", "new", "album"),
        ]
    else:
        pool = [
            ("the", "new", "<PROD>", "went", "on", "sale", "across", "stores", "this", "week"),
            ("<PER>", "spoke", "at", "the", "annual", "meeting", "held", "in", "<LOC>", "yesterday"),
            ("critics", "praised", "<CW>", "as", "the", "finest", "release", "of", "the", "season"),
            ("<CORP>", "announced", "a", "partnership", "with", "<GRP>", "during", "the", "press", "event"),
            ("residents", "of", "<LOC>", "gathered", "to", "welcome", "<PER>", "after", "the", "ceremony"),
            ("the", "band", "<GRP>", "performed", "songs", "from", "<CW>", "to", "a", "full", "house"),
            ("engineers", "at", "<CORP>", "tested", "the", "<PROD>", "before", "the", "public", "launch"),
            ("a", "biography", "of", "<PER>", "topped", "the", "charts", "for", "three", "straight", "weeks"),
        ]
    return tuple(pool)


def generic_templates(mode: str = "low") -> tuple[tuple[str, ...], ...]:
    """Type-uninformative pool: every context appears once per entity type,
    so only gazetteer features can resolve the label."""
    contexts = [
        ("find", "{}", "today"),
        ("tell", "me", "about", "{}"),
        ("i", "really", "like", "{}"),
        ("{}", "is", "trending"),
        ("search", "for", "{}"),
    ]
    if mode == "rich":
        contexts = [
            ("people", "keep", "asking", "about", "{}", "again", "and", "again", "these", "days"),
            ("there", "was", "a", "long", "story", "about", "{}", "in", "the", "news"),
            ("everyone", "at", "the", "office", "talked", "about", "{}", "over", "lunch", "today"),
        ]
    pool = []
    for ctx in contexts:
        for etype in ENTITY_TYPES:
            pool.append(tuple(tok.format(f"<{etype}>") if tok == "{}" else tok for tok in ctx))
    return tuple(pool)


def _fresh_surface(rng: np.random.Generator, max_tokens: int) -> tuple[str, ...]:
    n = int(rng.integers(1, max_tokens + 1))
    return tuple(
        "".join(rng.choice(_FRESH_LETTERS, size=7)) for _ in range(n)
    )


def synth_corpus(spec: SynthSpec, gaz=None, rng: np.random.Generator | None = None):
    """Generate a BIO-valid corpus plus the gazetteer of emitted entities.

    Deterministic for a fixed ``spec.seed`` (an explicit ``rng`` overrides
    it). Returns ``(dataset, companion)`` where ``companion`` records every
    entity surface that was placed, under its label; with
    ``entity_source="fresh"`` those surfaces are random unseen strings, which
    makes gazetteer benefit directly measurable.
    """
    from .gazetteer import Gazetteer

    if rng is None:
        rng = np.random.default_rng(spec.seed)
    lo, hi = LENGTH_RANGE[spec.context_mode]
    fillers = [f"w{i:03d}" for i in range(spec.vocab_size)]
    companion = Gazetteer()

    sentences = []
    for _ in range(spec.n_sentences):
        template = spec.template_pool[rng.integers(len(spec.template_pool))]
        target = int(rng.integers(lo, hi + 1))
        n_slots = sum(1 for t in template if _slot_type(t) is not None)

        pieces: list[tuple[tuple[str, ...], str | None]] = []
        placed = 0
        slots_left = n_slots
        context_left = len(template) - n_slots
        for tok in template:
            etype = _slot_type(tok)
            if etype is None:
                context_left -= 1
                if placed + 1 + slots_left + context_left <= hi:
                    pieces.append(((tok,), None))
                    placed += 1
                continue
            slots_left -= 1
            budget = max(1, hi - placed - slots_left - context_left)
            surface: tuple[str, ...] | None = None
            if spec.entity_source == "gazetteer" and gaz is not None:
                candidates = [s for s in gaz.surfaces(etype) if len(s) <= budget]
                if candidates:
                    surface = candidates[rng.integers(len(candidates))]
            if surface is None:
                surface = _fresh_surface(rng, min(spec.fresh_max_tokens, budget))
            companion.add(surface, etype)
            pieces.append((surface, etype))
            placed += len(surface)

        tokens: list[str] = []
        tags: list[int] = []
        for surface, etype in pieces:
            if etype is None:
                tokens.extend(surface)
                tags.extend([O_TAG] * len(surface))
            else:
                tokens.extend(surface)
                tags.append(b_tag(etype))
                tags.extend([i_tag(etype)] * (len(surface) - 1))
        while len(tokens) < max(lo, min(target, hi)):
            tokens.append(fillers[rng.integers(len(fillers))])
            tags.append(O_TAG)
        sentences.append(Sentence(tuple(tokens), tuple(tags)))

    name = f"synth-{spec.context_mode}-{spec.seed}"
    return Dataset(tuple(sentences), name), companion


def random_valid_tags(rng: np.random.Generator, length: int) -> list[int]:
    """Random BIO-valid tag sequence (test/property helper)."""
    tags = [O_TAG] * length
    pos = 0
    while pos < length:
        if rng.random() < 0.35:
            etype = ENTITY_TYPES[rng.integers(len(ENTITY_TYPES))]
            span_len = int(rng.integers(1, min(4, length - pos) + 1))
            tags[pos] = b_tag(etype)
            for k in range(1, span_len):
                tags[pos + k] = i_tag(etype)
            pos += span_len
        else:
            pos += 1
    return tags
