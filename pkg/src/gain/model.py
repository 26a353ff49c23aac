"""Networks and classifier heads.

The pipeline pairs a frozen-capable token encoder (embedding + BiLSTM) with
a gazetteer network (dense + ReLU + BiLSTM over 13-dim one-hot features)
whose output matches the encoder width, so the two representations can be
fused by concatenation or a trainable per-dimension convex weighting. Three
backend classifiers sit on top of the fused representation: per-token
softmax, a linear-chain CRF, and an independent start/end span scorer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .corpus import ENTITY_TYPES, TAGS, b_tag, entity_spans, i_tag, repair_bio
from .errors import ConfigError, ContractError, NumericError
from .numcore import Tensor

N_TAGS = len(TAGS)
N_SPAN_CLASSES = 1 + len(ENTITY_TYPES)  # class 0 = none

UNK_ID = 0


@dataclass
class ModelConfig:
    embed_dim: int = 32
    d_model: int = 64
    gaz_hidden: int = 32
    classifier: str = "softmax"  # softmax | crf | span
    integration: str = "concat"  # concat | weighted_sum | none
    span_max_width: int = 10
    lowercase_match: bool = False
    match_policy: str = "longest"

    def __post_init__(self):
        if self.d_model % 2 != 0:
            raise ConfigError(f"d_model must be even, got {self.d_model}")
        if self.classifier not in ("softmax", "crf", "span"):
            raise ConfigError(f"unknown classifier {self.classifier!r}")
        if self.integration not in ("concat", "weighted_sum", "none"):
            raise ConfigError(f"unknown integration mode {self.integration!r}")
        if self.match_policy not in ("longest", "all"):
            raise ConfigError(f"unknown match policy {self.match_policy!r}")

    @property
    def fused_dim(self) -> int:
        return 2 * self.d_model if self.integration == "concat" else self.d_model


def build_vocab(*datasets) -> dict[str, int]:
    """token -> id map; id 0 is reserved for unknown tokens."""
    vocab: dict[str, int] = {}
    for data in datasets:
        for sent in data:
            for tok in sent.tokens:
                if tok not in vocab:
                    vocab[tok] = len(vocab) + 1
    return vocab


class Encoder:
    """Trainable embedding + one BiLSTM layer; the stand-in representation
    source. ``frozen`` excludes its parameters from optimization without
    changing the forward pass."""

    def __init__(self, vocab: dict[str, int], embed_dim: int, d_model: int,
                 rng: np.random.Generator):
        if d_model % 2 != 0:
            raise ConfigError("encoder width must be even")
        self.vocab = dict(vocab)
        self.embed_dim = embed_dim
        self.d_model = d_model
        half = d_model // 2
        rows = (max(self.vocab.values()) if self.vocab else 0) + 1
        self.embed = Tensor(nc.uniform_init(rng, (rows, embed_dim), embed_dim))
        self.fw = nc.lstm_init(rng, embed_dim, half)
        self.bw = nc.lstm_init(rng, embed_dim, half)
        self.frozen = False
        self.pretrained = False

    def token_ids(self, tokens) -> list[int]:
        return [self.vocab.get(tok, UNK_ID) for tok in tokens]

    def forward(self, tokens, *, dropout_p: float = 0.0,
                rng: np.random.Generator | None = None) -> Tensor:
        x = nc.embedding(self.embed, self.token_ids(tokens))
        out = nc.bilstm(x, self.fw, self.bw)
        if dropout_p > 0.0:
            if rng is None:
                raise ContractError("dropout requires an RNG")
            out = nc.dropout(out, dropout_p, rng)
        return out

    def parameters(self) -> dict[str, Tensor]:
        out = {"embed": self.embed}
        for tag, triple in (("fw", self.fw), ("bw", self.bw)):
            out[f"{tag}.w_ih"], out[f"{tag}.w_hh"], out[f"{tag}.b"] = triple
        return out


class GazNet:
    """Dense 13->H with ReLU followed by a BiLSTM producing the encoder
    width, applied to one-hot gazetteer feature rows."""

    def __init__(self, hidden: int, d_model: int, rng: np.random.Generator):
        if d_model % 2 != 0:
            raise ConfigError("gazetteer network width must be even")
        self.hidden = hidden
        self.d_model = d_model
        half = d_model // 2
        self.w = Tensor(nc.uniform_init(rng, (N_TAGS, hidden), N_TAGS))
        self.b = Tensor(np.zeros(hidden))
        self.fw = nc.lstm_init(rng, hidden, half)
        self.bw = nc.lstm_init(rng, hidden, half)

    def forward(self, features: np.ndarray, *, dropout_p: float = 0.0,
                rng: np.random.Generator | None = None) -> Tensor:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != N_TAGS:
            raise ContractError(f"gazetteer features must be N x {N_TAGS}, got {features.shape}")
        x = nc.relu(nc.linear(Tensor(features), self.w, self.b))
        out = nc.bilstm(x, self.fw, self.bw)
        if dropout_p > 0.0:
            if rng is None:
                raise ContractError("dropout requires an RNG")
            out = nc.dropout(out, dropout_p, rng)
        return out

    def parameters(self) -> dict[str, Tensor]:
        out = {"dense.w": self.w, "dense.b": self.b}
        for tag, triple in (("fw", self.fw), ("bw", self.bw)):
            out[f"{tag}.w_ih"], out[f"{tag}.w_hh"], out[f"{tag}.b"] = triple
        return out


class ProjectionHead:
    """Linear projection to tag logits."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.w = Tensor(nc.uniform_init(rng, (d_in, d_out), d_in))
        self.b = Tensor(np.zeros(d_out))

    def forward(self, x: Tensor) -> Tensor:
        return nc.linear(x, self.w, self.b)

    def parameters(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


class Integration:
    """Fusion of encoder and gazetteer representations.

    ``concat`` joins them rowwise to width 2D. ``weighted_sum`` learns a
    per-dimension weight sigma(lambda) in (0,1): output is
    (1-sigma) * e + sigma * g, so sigma -> 0 ignores the gazetteer entirely.
    ``none`` passes the encoder output through (gazetteer-free baseline).
    """

    def __init__(self, mode: str, d_model: int):
        if mode not in ("concat", "weighted_sum", "none"):
            raise ConfigError(f"unknown integration mode {mode!r}")
        self.mode = mode
        self.d_model = d_model
        self.lam_raw = Tensor(np.zeros(d_model)) if mode == "weighted_sum" else None

    def combine(self, e: Tensor, g: Tensor | None) -> Tensor:
        if self.mode == "none":
            return e
        if g is None:
            raise ContractError("integration requires a gazetteer representation")
        if e.data.shape != g.data.shape:
            raise ContractError(f"integration shape mismatch: {e.shape} vs {g.shape}")
        if self.mode == "concat":
            return nc.concat_cols(e, g)
        weight = nc.sigmoid(self.lam_raw)
        rest = nc.sub(Tensor(np.ones(self.d_model)), weight)
        return nc.add(nc.mul(rest, e), nc.mul(weight, g))

    def mean_sigma(self) -> float:
        """Mean gating weight; the gazetteer-usage diagnostic."""
        if self.lam_raw is None:
            raise ContractError("mean_sigma is only defined for weighted_sum integration")
        x = self.lam_raw.data
        return float(np.mean(np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                                      np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))))

    def parameters(self) -> dict[str, Tensor]:
        return {"lam_raw": self.lam_raw} if self.lam_raw is not None else {}


def integrate(e: Tensor, g: Tensor | None, params: Integration) -> Tensor:
    return params.combine(e, g)


# ---------------------------------------------------------------------------
# classifier heads


class SoftmaxHead:
    """Per-token 13-way classification."""

    kind = "softmax"

    def __init__(self, d_in: int, rng: np.random.Generator):
        self.proj = ProjectionHead(d_in, N_TAGS, rng)

    def loss(self, fused: Tensor, gold_tags) -> Tensor:
        return nc.cross_entropy(self.proj.forward(fused), list(gold_tags))

    def decode(self, fused: np.ndarray) -> list[int]:
        logits = fused @ self.proj.w.data + self.proj.b.data
        return decode_softmax_logits(logits)

    def logits(self, fused: np.ndarray) -> np.ndarray:
        return fused @ self.proj.w.data + self.proj.b.data

    def parameters(self) -> dict[str, Tensor]:
        return {f"classifier.{k}": v for k, v in self.proj.parameters().items()}


def decode_softmax_logits(logits: np.ndarray) -> list[int]:
    """Argmax per token followed by lenient BIO repair."""
    return repair_bio([int(i) for i in np.argmax(logits, axis=1)])


class CrfHead:
    """Linear-chain CRF: emission projection plus transition, start and end
    scores. Transitions are unconstrained; BIO repair runs after decoding."""

    kind = "crf"

    def __init__(self, d_in: int, rng: np.random.Generator):
        self.proj = ProjectionHead(d_in, N_TAGS, rng)
        self.trans = Tensor(rng.uniform(-0.1, 0.1, size=(N_TAGS, N_TAGS)))
        self.start = Tensor(rng.uniform(-0.1, 0.1, size=N_TAGS))
        self.end = Tensor(rng.uniform(-0.1, 0.1, size=N_TAGS))

    def loss(self, fused: Tensor, gold_tags) -> Tensor:
        emissions = self.proj.forward(fused)
        return crf_log_likelihood_loss(self.trans, self.start, self.end, emissions, list(gold_tags))

    def decode(self, fused: np.ndarray) -> list[int]:
        emissions = fused @ self.proj.w.data + self.proj.b.data
        path = crf_viterbi(self.trans.data, self.start.data, self.end.data, emissions)
        return repair_bio(path)

    def parameters(self) -> dict[str, Tensor]:
        out = {f"classifier.{k}": v for k, v in self.proj.parameters().items()}
        out.update({"crf.trans": self.trans, "crf.start": self.start, "crf.end": self.end})
        return out


def crf_log_likelihood_loss(trans: Tensor, start: Tensor, end: Tensor,
                            emissions: Tensor, tags: list[int]) -> Tensor:
    """Negative log-likelihood logZ - score(gold) with a stable forward pass.

    score(y) = start[y_1] + sum_i emit[i, y_i] + sum_i trans[y_{i-1}, y_i]
             + end[y_N].
    """
    n = emissions.data.shape[0]
    if n < 1:
        raise ContractError("CRF loss requires at least one token")
    if len(tags) != n:
        raise ContractError(f"gold length {len(tags)} vs {n} emission rows")
    if not np.all(np.isfinite(emissions.data)):
        raise NumericError("non-finite emission scores")

    gold = nc.add(nc.tensor_sum(nc.pick(emissions, tags)), nc.tensor_sum(nc.take(start, [tags[0]])))
    if n > 1:
        gold = nc.add(gold, nc.tensor_sum(nc.gather_pairs(trans, tags[:-1], tags[1:])))
    gold = nc.add(gold, nc.tensor_sum(nc.take(end, [tags[-1]])))

    alpha = nc.add(nc.reshape(start, (1, N_TAGS)), nc.slice_rows(emissions, 0, 1))
    for i in range(1, n):
        scores = nc.add(nc.transpose(alpha), trans)  # [prev, cur]
        alpha = nc.add(nc.logsumexp(scores, axis=0, keepdims=True),
                       nc.slice_rows(emissions, i, i + 1))
    log_z = nc.logsumexp(nc.add(alpha, nc.reshape(end, (1, N_TAGS))), axis=None)
    return nc.sub(log_z, gold)


def crf_viterbi(trans: np.ndarray, start: np.ndarray, end: np.ndarray,
                emissions: np.ndarray) -> list[int]:
    """Best path under the CRF score; ties break to the lowest tag index."""
    n = emissions.shape[0]
    if n < 1:
        raise ContractError("viterbi requires at least one token")
    score = start + emissions[0]
    backptr = []
    for i in range(1, n):
        total = score[:, None] + trans
        best_prev = np.argmax(total, axis=0)  # first max = lowest index
        score = total[best_prev, np.arange(trans.shape[0])] + emissions[i]
        backptr.append(best_prev)
    score = score + end
    tag = int(np.argmax(score))
    path = [tag]
    for bp in reversed(backptr):
        tag = int(bp[tag])
        path.append(tag)
    path.reverse()
    return path


def crf_brute_force_logz(trans: np.ndarray, start: np.ndarray, end: np.ndarray,
                         emissions: np.ndarray) -> tuple[float, float]:
    """Exhaustive (logZ, best score) over all T^N tag paths; test oracle."""
    import itertools

    n, t = emissions.shape
    paths = np.array(list(itertools.product(range(t), repeat=n)), dtype=np.intp)
    scores = start[paths[:, 0]] + end[paths[:, -1]]
    for i in range(n):
        scores = scores + emissions[i, paths[:, i]]
    for i in range(1, n):
        scores = scores + trans[paths[:, i - 1], paths[:, i]]
    m = scores.max()
    return float(m + np.log(np.exp(scores - m).sum())), float(m)


class SpanHead:
    """Independent start-of-entity and end-of-entity token classifiers over
    7 classes (none + 6 types), paired greedily at decode time."""

    kind = "span"

    def __init__(self, d_in: int, rng: np.random.Generator, max_width: int = 10):
        self.start_proj = ProjectionHead(d_in, N_SPAN_CLASSES, rng)
        self.end_proj = ProjectionHead(d_in, N_SPAN_CLASSES, rng)
        self.max_width = max_width

    def loss(self, fused: Tensor, gold_tags) -> Tensor:
        start_t, end_t = span_targets(list(gold_tags))
        start_ce = nc.cross_entropy(self.start_proj.forward(fused), start_t)
        end_ce = nc.cross_entropy(self.end_proj.forward(fused), end_t)
        return nc.add(start_ce, end_ce)

    def decode(self, fused: np.ndarray) -> list[int]:
        start_logits = fused @ self.start_proj.w.data + self.start_proj.b.data
        end_logits = fused @ self.end_proj.w.data + self.end_proj.b.data
        tags = span_decode(start_logits, end_logits, self.max_width)
        return repair_bio(tags)

    def parameters(self) -> dict[str, Tensor]:
        out = {f"classifier.start_{k}": v for k, v in self.start_proj.parameters().items()}
        out.update({f"classifier.end_{k}": v for k, v in self.end_proj.parameters().items()})
        return out


def span_targets(tags: list[int]) -> tuple[list[int], list[int]]:
    """Per-token class targets: gold span starts/ends carry the type class
    (type index + 1), every other position is class 0."""
    n = len(tags)
    start_t = [0] * n
    end_t = [0] * n
    for s, e, etype in entity_spans(tags):
        cls = ENTITY_TYPES.index(etype) + 1
        start_t[s] = cls
        end_t[e - 1] = cls
    return start_t, end_t


def span_decode(start_logits: np.ndarray, end_logits: np.ndarray, max_width: int) -> list[int]:
    """Pair predicted starts with the nearest unconsumed same-type end within
    ``max_width`` tokens, scanning left to right; unmatched predictions are
    dropped and overlapping later spans are skipped."""
    n = start_logits.shape[0]
    starts = np.argmax(start_logits, axis=1)
    ends = np.argmax(end_logits, axis=1)
    spans = []
    used_ends: set[int] = set()
    for i in range(n):
        cls = int(starts[i])
        if cls == 0:
            continue
        for j in range(i, min(i + max_width, n)):
            if j not in used_ends and int(ends[j]) == cls:
                spans.append((i, j + 1, ENTITY_TYPES[cls - 1]))
                used_ends.add(j)
                break
    tags = [0] * n
    claimed = [False] * n
    for s, e, etype in spans:
        if any(claimed[s:e]):
            continue
        tags[s] = b_tag(etype)
        for k in range(s + 1, e):
            tags[k] = i_tag(etype)
        for k in range(s, e):
            claimed[k] = True
    return tags


def make_classifier(cfg: ModelConfig, rng: np.random.Generator):
    d_in = cfg.fused_dim
    if cfg.classifier == "softmax":
        return SoftmaxHead(d_in, rng)
    if cfg.classifier == "crf":
        return CrfHead(d_in, rng)
    return SpanHead(d_in, rng, cfg.span_max_width)
