"""Two-stage training, the model bundle and binary checkpoints.

Stage 1 freezes the encoder and adapts the gazetteer network (plus the two
projection heads) to it by minimizing a symmetric KL between their projected
tag-logit distributions over gold one-hot inputs. Stage 2 unfreezes
everything and trains the fused classifier loss plus alpha times the
adaptation loss.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numcore as nc
from .corpus import Dataset, Sentence, tags_to_onehot
from .errors import ConfigError, ContractError, DataError, NumericError
from .gazetteer import MatchTrie, match_features
from .model import (
    Encoder,
    GazNet,
    Integration,
    ModelConfig,
    ProjectionHead,
    SoftmaxHead,
    build_vocab,
    make_classifier,
    N_TAGS,
)
from .numcore import OptimizerConfig, ParamSet, Tensor, derive_seed, seeded_rng

CHECKPOINT_MAGIC = b"GAINCKPT"
CHECKPOINT_VERSION = 1

STAGES = ("init", "pretrained", "adapted", "trained")


@dataclass
class TrainConfig:
    """Hyperparameters for all three training phases.

    ``alpha`` weights the adaptation loss inside the stage-2 objective; when
    left unset it resolves per classifier (5 for softmax/span, 100 for CRF).
    """

    alpha: float | None = None
    pretrain_epochs: int = 10
    stage1_epochs: int = 5
    stage2_epochs: int = 20
    batch_size: int = 16
    dropout: float = 0.1
    learning_rates: dict[str, float] = field(default_factory=lambda: dict(nc.DEFAULT_RATES))
    betas: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    adaptation_loss: str = "kl"  # kl | mse
    stage2_l1_source: str = "gold"  # gold | matched
    seed: int = 0

    def __post_init__(self):
        if self.alpha is not None and self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.adaptation_loss not in ("kl", "mse"):
            raise ConfigError(f"adaptation_loss must be kl or mse, got {self.adaptation_loss!r}")
        if self.stage2_l1_source not in ("gold", "matched"):
            raise ConfigError(f"stage2_l1_source must be gold or matched, got {self.stage2_l1_source!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    def resolved_alpha(self, classifier: str) -> float:
        if self.alpha is not None:
            return self.alpha
        return 100.0 if classifier == "crf" else 5.0

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate_groups=dict(self.learning_rates),
            betas=tuple(self.betas),
            epsilon=self.epsilon,
            weight_decay=self.weight_decay,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["betas"] = list(self.betas)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


class ModelBundle:
    """Everything one trained model needs: encoder, gazetteer network, the
    two adaptation projection heads, integration parameters and a backend
    classifier, with a stage marker."""

    def __init__(self, encoder: Encoder, gaznet: GazNet, head_e: ProjectionHead,
                 head_g: ProjectionHead, integration: Integration, classifier,
                 model_cfg: ModelConfig, seed: int = 0):
        self.encoder = encoder
        self.gaznet = gaznet
        self.head_e = head_e
        self.head_g = head_g
        self.integration = integration
        self.classifier = classifier
        self.model_cfg = model_cfg
        self.seed = seed
        self.stage = "init"
        self.history: dict = {}

    def param_set(self) -> ParamSet:
        ps = ParamSet()
        for k, v in self.encoder.parameters().items():
            ps.add(f"encoder.{k}", v)
        for k, v in self.gaznet.parameters().items():
            ps.add(f"gaznet.{k}", v)
        for k, v in self.head_e.parameters().items():
            ps.add(f"head_e.{k}", v)
        for k, v in self.head_g.parameters().items():
            ps.add(f"head_g.{k}", v)
        for k, v in self.integration.parameters().items():
            ps.add(f"integration.{k}", v)
        for k, v in self.classifier.parameters().items():
            ps.add(k, v)  # classifier.* and crf.* names carry their own prefix
        return ps

    # -- inference ---------------------------------------------------------

    def fused_features(self, tokens, trie: MatchTrie | None) -> np.ndarray:
        with nc.no_grad():
            e = self.encoder.forward(tokens)
            if self.integration.mode == "none":
                return e.data
            if trie is None:
                raise ContractError("gazetteer trie required for integration")
            feats = match_features(trie, tokens, self.model_cfg.match_policy)
            g = self.gaznet.forward(feats)
            return self.integration.combine(e, g).data

    def predict_tags(self, tokens, trie: MatchTrie | None) -> list[int]:
        return self.classifier.decode(self.fused_features(tokens, trie))

    def predict_logits(self, tokens, trie: MatchTrie | None) -> np.ndarray:
        """Pre-softmax tag scores for logit-averaging ensembles."""
        fused = self.fused_features(tokens, trie)
        if self.classifier.kind == "softmax":
            return self.classifier.logits(fused)
        raise ContractError(f"{self.classifier.kind} members ensemble by voting, not logits")


def build_bundle(vocab: dict[str, int], model_cfg: ModelConfig, seed: int,
                 encoder: Encoder | None = None) -> ModelBundle:
    """Construct a bundle with per-component derived init seeds, so baseline
    and gazetteer variants share identical encoder initialization."""
    if encoder is None:
        encoder = Encoder(vocab, model_cfg.embed_dim, model_cfg.d_model,
                          seeded_rng(derive_seed(seed, "encoder-init")))
    gaznet = GazNet(model_cfg.gaz_hidden, model_cfg.d_model,
                    seeded_rng(derive_seed(seed, "gaznet-init")))
    head_e = ProjectionHead(model_cfg.d_model, N_TAGS, seeded_rng(derive_seed(seed, "head-e-init")))
    head_g = ProjectionHead(model_cfg.d_model, N_TAGS, seeded_rng(derive_seed(seed, "head-g-init")))
    integration = Integration(model_cfg.integration, model_cfg.d_model)
    classifier = make_classifier(model_cfg, seeded_rng(derive_seed(seed, "classifier-init")))
    bundle = ModelBundle(encoder, gaznet, head_e, head_g, integration, classifier,
                         model_cfg, seed)
    if encoder.pretrained:
        bundle.stage = "pretrained"
    return bundle


def clone_encoder(enc: Encoder) -> Encoder:
    new = Encoder(enc.vocab, enc.embed_dim, enc.d_model, seeded_rng(0))
    for (_, src), (_, dst) in zip(sorted(enc.parameters().items()),
                                  sorted(new.parameters().items())):
        dst.data[...] = src.data
    new.pretrained = enc.pretrained
    return new


def clone_bundle(bundle: ModelBundle) -> ModelBundle:
    new = build_bundle(bundle.encoder.vocab, bundle.model_cfg, bundle.seed)
    new.param_set().restore(bundle.param_set().snapshot())
    new.encoder.pretrained = bundle.encoder.pretrained
    new.stage = bundle.stage
    return new


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield [int(i) for i in order[lo : lo + batch_size]]


def _mean_loss(parts: list[Tensor]) -> Tensor:
    total = parts[0]
    for p in parts[1:]:
        total = nc.add(total, p)
    return nc.scale(total, 1.0 / len(parts))


# ---------------------------------------------------------------------------
# encoder pre-training


def pretrain_encoder(data: Dataset, cfg: TrainConfig, model_cfg: ModelConfig) -> Encoder:
    """Train an encoder with a throwaway softmax head on gold tags.

    The head is discarded; its final token accuracy on the training data is
    kept on ``encoder.pretrain_accuracy`` as a smoke signal.
    """
    if len(data) == 0:
        raise DataError("empty pre-training dataset")
    vocab = build_vocab(data)
    encoder = Encoder(vocab, model_cfg.embed_dim, model_cfg.d_model,
                      seeded_rng(derive_seed(cfg.seed, "encoder-init")))
    head = SoftmaxHead(model_cfg.d_model, seeded_rng(derive_seed(cfg.seed, "pretrain-head-init")))

    params = ParamSet()
    for k, v in encoder.parameters().items():
        params.add(f"encoder.{k}", v)
    for k, v in head.parameters().items():
        params.add(k, v)
    opt_cfg = cfg.optimizer_config()
    rng = seeded_rng(derive_seed(cfg.seed, "pretrain"))

    for epoch in range(cfg.pretrain_epochs):
        for bi, batch in enumerate(_batches(len(data), cfg.batch_size, rng)):
            parts = []
            for i in batch:
                sent = data.sentences[i]
                e = encoder.forward(sent.tokens, dropout_p=cfg.dropout, rng=rng)
                parts.append(head.loss(e, sent.tags))
            loss = _mean_loss(parts)
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite pre-training loss at epoch {epoch + 1}, batch {bi + 1}")
            loss.backward()
            nc.adamw_step(params, opt_cfg)

    correct = total = 0
    for sent in data:
        with nc.no_grad():
            pred = head.decode(encoder.forward(sent.tokens).data)
        correct += sum(1 for p, t in zip(pred, sent.tags) if p == t)
        total += len(sent)
    encoder.pretrain_accuracy = correct / total if total else 0.0
    encoder.pretrained = True
    return encoder


# ---------------------------------------------------------------------------
# stage 1: adaptation


def _adaptation_loss(cfg: TrainConfig, a_logits: Tensor, b_logits: Tensor,
                     fd_cache: dict | None = None, fd_key=None) -> Tensor:
    if cfg.adaptation_loss != "kl":
        return nc.mse_loss(a_logits, b_logits)
    if fd_cache is None:
        return nc.kl_pair_loss(a_logits, b_logits)
    # Finite-difference mode: freeze the stop-gradient sides at first sight so
    # central differences see the function the backward pass differentiates.
    snap = fd_cache.get(fd_key)
    if snap is None:
        snap = nc.kl_pair_snapshot(a_logits, b_logits)
        fd_cache[fd_key] = snap
    return nc.kl_pair_loss_frozen(a_logits, b_logits, snap)


def stage1_adapt(bundle: ModelBundle, data: Dataset, cfg: TrainConfig) -> ModelBundle:
    """Adapt the gazetteer network to the frozen encoder on gold one-hots.

    Only the gazetteer network and the two projection heads are updated; the
    encoder is bitwise untouched. Per-epoch mean losses are recorded in
    ``bundle.history["stage1_loss"]``.
    """
    if not bundle.encoder.pretrained:
        raise ContractError("stage-1 adaptation requires a pretrained encoder")
    if len(data) == 0:
        raise DataError("empty adaptation dataset")

    params = bundle.param_set().subset(("gaznet.", "head_e.", "head_g."))
    opt_cfg = cfg.optimizer_config()
    rng = seeded_rng(derive_seed(cfg.seed, "stage1"))

    enc_tensors = list(bundle.encoder.parameters().values())
    for t in enc_tensors:
        t.requires_grad = False
    bundle.encoder.frozen = True
    epoch_losses = []
    try:
        for epoch in range(cfg.stage1_epochs):
            batch_losses = []
            for bi, batch in enumerate(_batches(len(data), cfg.batch_size, rng)):
                parts = []
                for i in batch:
                    sent = data.sentences[i]
                    g_r = bundle.gaznet.forward(tags_to_onehot(sent.tags),
                                                dropout_p=cfg.dropout, rng=rng)
                    e = bundle.encoder.forward(sent.tokens, dropout_p=cfg.dropout, rng=rng)
                    g_r_t = bundle.head_g.forward(g_r)
                    e_t = bundle.head_e.forward(e)
                    parts.append(_adaptation_loss(cfg, g_r_t, e_t))
                loss = _mean_loss(parts)
                if not np.isfinite(loss.data):
                    raise NumericError(f"non-finite stage-1 loss at epoch {epoch + 1}, batch {bi + 1}")
                loss.backward()
                nc.adamw_step(params, opt_cfg)
                batch_losses.append(float(loss.data))
            epoch_losses.append(float(np.mean(batch_losses)))
    finally:
        for t in enc_tensors:
            t.requires_grad = True
        bundle.encoder.frozen = False

    bundle.history["stage1_loss"] = epoch_losses
    bundle.stage = "adapted"
    return bundle


def mean_adaptation_loss(bundle: ModelBundle, data: Dataset, cfg: TrainConfig) -> float:
    """Dropout-free mean adaptation loss over a dataset (diagnostic)."""
    total = 0.0
    for sent in data:
        with nc.no_grad():
            g_r = bundle.gaznet.forward(tags_to_onehot(sent.tags))
            e = bundle.encoder.forward(sent.tokens)
            loss = _adaptation_loss(cfg, bundle.head_g.forward(g_r), bundle.head_e.forward(e))
        total += float(loss.data)
    return total / len(data)


# ---------------------------------------------------------------------------
# stage 2: joint training


def stage2_sentence_loss(bundle: ModelBundle, sent: Sentence, trie: MatchTrie | None,
                         cfg: TrainConfig, alpha: float, *, train: bool = False,
                         rng: np.random.Generator | None = None,
                         fd_cache: dict | None = None, fd_key=None):
    """(total, adaptation part, classifier part) losses for one sentence.

    total = alpha * L_adapt + L_classifier; with ``none`` integration the
    adaptation term is skipped and the classifier runs on the encoder alone.
    """
    dropout_p = cfg.dropout if train else 0.0
    e = bundle.encoder.forward(sent.tokens, dropout_p=dropout_p, rng=rng)
    if bundle.integration.mode == "none":
        l2 = bundle.classifier.loss(e, sent.tags)
        return l2, None, l2
    if trie is None:
        raise ContractError("stage-2 training requires a gazetteer trie")
    feats = match_features(trie, sent.tokens, bundle.model_cfg.match_policy)
    g = bundle.gaznet.forward(feats, dropout_p=dropout_p, rng=rng)
    fused = bundle.integration.combine(e, g)
    l2 = bundle.classifier.loss(fused, sent.tags)
    if alpha == 0.0:
        return l2, None, l2
    if cfg.stage2_l1_source == "gold":
        g_r = bundle.gaznet.forward(tags_to_onehot(sent.tags), dropout_p=dropout_p, rng=rng)
    else:
        g_r = g
    l1 = _adaptation_loss(cfg, bundle.head_g.forward(g_r), bundle.head_e.forward(e),
                          fd_cache, fd_key)
    total = nc.add(nc.scale(l1, alpha), l2)
    return total, l1, l2


def stage2_batch_loss(bundle: ModelBundle, sentences, trie: MatchTrie | None,
                      cfg: TrainConfig, alpha: float, *, train: bool = False,
                      rng: np.random.Generator | None = None,
                      fd_cache: dict | None = None):
    """Batch-mean (total, L1, L2); L1 is None when the term is inactive."""
    totals, l1s, l2s = [], [], []
    for key, sent in enumerate(sentences):
        total, l1, l2 = stage2_sentence_loss(bundle, sent, trie, cfg, alpha,
                                             train=train, rng=rng,
                                             fd_cache=fd_cache, fd_key=key)
        totals.append(total)
        l2s.append(l2)
        if l1 is not None:
            l1s.append(l1)
    mean_l1 = _mean_loss(l1s) if l1s else None
    return _mean_loss(totals), mean_l1, _mean_loss(l2s)


def _stage2_param_prefixes(bundle: ModelBundle, alpha: float) -> tuple[str, ...]:
    prefixes = ["encoder.", "classifier.", "crf."]
    if bundle.integration.mode != "none":
        prefixes += ["gaznet.", "integration."]
        if alpha > 0.0:
            prefixes += ["head_e.", "head_g."]
    return tuple(prefixes)


def stage2_train(bundle: ModelBundle, data: Dataset, trie: MatchTrie | None,
                 cfg: TrainConfig, val_data: Dataset | None = None,
                 allow_unadapted: bool = False) -> ModelBundle:
    """Joint training of all parameters on matched gazetteer features.

    Keeps the best-on-validation parameters by macro-F1 when ``val_data`` is
    given. ``allow_unadapted`` permits skipping stage 1 for ablations.
    """
    from .metrics import evaluate

    if bundle.stage != "adapted" and not allow_unadapted:
        raise ContractError(f"stage-2 requires an adapted bundle, found stage {bundle.stage!r}")
    if len(data) == 0:
        raise DataError("empty stage-2 training dataset")

    alpha = cfg.resolved_alpha(bundle.model_cfg.classifier)
    params = bundle.param_set().subset(_stage2_param_prefixes(bundle, alpha))
    opt_cfg = cfg.optimizer_config()
    rng = seeded_rng(derive_seed(cfg.seed, "stage2"))

    best_snapshot = None
    best_f1 = -1.0
    history = []
    for epoch in range(cfg.stage2_epochs):
        batch_losses = []
        for bi, batch in enumerate(_batches(len(data), cfg.batch_size, rng)):
            sentences = [data.sentences[i] for i in batch]
            loss, _, _ = stage2_batch_loss(bundle, sentences, trie, cfg, alpha,
                                           train=True, rng=rng)
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite stage-2 loss at epoch {epoch + 1}, batch {bi + 1}")
            loss.backward()
            nc.adamw_step(params, opt_cfg)
            batch_losses.append(float(loss.data))
        entry = {"epoch": epoch + 1, "train_loss": float(np.mean(batch_losses))}
        if val_data is not None:
            report = evaluate(predict_dataset(bundle, val_data, trie), val_data)
            entry["val_macro_f1"] = report.macro_f1
            if report.macro_f1 > best_f1:
                best_f1 = report.macro_f1
                best_snapshot = params.snapshot()
        history.append(entry)

    if best_snapshot is not None:
        params.restore(best_snapshot)
    bundle.history["stage2"] = history
    bundle.stage = "trained"
    return bundle


def predict_dataset(bundle: ModelBundle, data: Dataset, trie: MatchTrie | None) -> Dataset:
    predicted = tuple(
        Sentence(sent.tokens, tuple(bundle.predict_tags(sent.tokens, trie)))
        for sent in data
    )
    return Dataset(predicted, data.name)


# ---------------------------------------------------------------------------
# checkpoints


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(bundle: ModelBundle, path, train_cfg: TrainConfig | None = None) -> None:
    """Versioned binary checkpoint: magic, version, config JSON, manifest of
    (name, shape, offset), then little-endian float64 arrays."""
    params = bundle.param_set()
    meta = {
        "stage": bundle.stage,
        "seed": bundle.seed,
        "pretrained": bundle.encoder.pretrained,
        "vocab": bundle.encoder.vocab,
        "model": asdict(bundle.model_cfg),
        "train": train_cfg.to_dict() if train_cfg is not None else None,
    }
    blob = _canonical_json(meta)

    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)

    names = params.names()
    buf.write(struct.pack("<I", len(names)))
    offset = 0
    arrays = []
    for name in names:
        arr = np.ascontiguousarray(params[name].data, dtype="<f8")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(struct.pack("<Q", offset))
        offset += arr.nbytes
        arrays.append(arr)
    for arr in arrays:
        buf.write(arr.tobytes())

    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exactly(fh, n: int, what: str) -> bytes:
    chunk = fh.read(n)
    if len(chunk) != n:
        raise DataError(f"truncated checkpoint while reading {what}")
    return chunk


def load_checkpoint(path) -> tuple[ModelBundle, TrainConfig | None]:
    """Rebuild a bundle bitwise-identically from a checkpoint file."""
    with open(path, "rb") as fh:
        magic = _read_exactly(fh, len(CHECKPOINT_MAGIC), "magic")
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"not a checkpoint file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", _read_exactly(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise DataError(
                f"checkpoint format version {version} unsupported (expected {CHECKPOINT_VERSION})"
            )
        (json_len,) = struct.unpack("<Q", _read_exactly(fh, 8, "config length"))
        meta = json.loads(_read_exactly(fh, json_len, "config").decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exactly(fh, 4, "manifest count"))
        manifest = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exactly(fh, 2, "name length"))
            name = _read_exactly(fh, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exactly(fh, 1, "ndim"))
            shape = tuple(
                struct.unpack("<I", _read_exactly(fh, 4, "dim"))[0] for _ in range(ndim)
            )
            (offset,) = struct.unpack("<Q", _read_exactly(fh, 8, "offset"))
            manifest.append((name, shape, offset))
        data_blob = fh.read()

    model_cfg = ModelConfig(**meta["model"])
    train_cfg = TrainConfig.from_dict(meta["train"]) if meta.get("train") else None
    bundle = build_bundle(meta["vocab"], model_cfg, meta["seed"])
    bundle.encoder.pretrained = bool(meta.get("pretrained", False))
    stage = meta.get("stage", "init")
    if stage not in STAGES:
        raise DataError(f"unknown stage marker {stage!r} in checkpoint")
    bundle.stage = stage

    params = bundle.param_set()
    expected = set(params.names())
    found = {name for name, _, _ in manifest}
    if expected != found:
        raise DataError(
            f"checkpoint parameters do not match model: missing {sorted(expected - found)}, "
            f"unexpected {sorted(found - expected)}"
        )
    for name, shape, offset in manifest:
        tensor = params[name]
        if tensor.data.shape != shape:
            raise DataError(f"shape mismatch for {name}: file {shape} vs model {tensor.data.shape}")
        nbytes = int(np.prod(shape, dtype=np.int64) * 8) if shape else 8
        raw = data_blob[offset : offset + nbytes]
        if len(raw) != nbytes:
            raise DataError(f"truncated checkpoint data for {name}")
        tensor.data[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
    return bundle, train_cfg
