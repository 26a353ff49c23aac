"""The ``gain`` command: the full pipeline and the analysis experiments as
subcommands with JSON configuration and deterministic seeding.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure. Set GAIN_LOG=debug|info|warning for verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    Dataset,
    TAGS,
    SynthSpec,
    augment_replace,
    default_templates,
    generic_templates,
    load_dataset,
    save_dataset,
    synth_corpus,
    validate_bio,
)
from .diagnostics import GRAD_TOLERANCE, gradient_check_suite
from .ensemble import (
    PredictionSet,
    avg_logits,
    check_aligned,
    load_predictions,
    save_predictions,
    weighted_token_vote,
)
from .errors import ConfigError, ContractError, DataError, NumericError, UsageError
from .gazetteer import (
    build_trie,
    coverage_rate,
    load_gazetteer,
    match_features,
    match_tokens,
    save_gazetteer,
    subsample_coverage,
)
from .metrics import evaluate
from .model import ModelConfig, decode_softmax_logits
from .numcore import derive_seed, seeded_rng
from .train import (
    TrainConfig,
    build_bundle,
    clone_encoder,
    load_checkpoint,
    predict_dataset,
    pretrain_encoder,
    save_checkpoint,
    stage1_adapt,
    stage2_train,
)

log = logging.getLogger("gain.cli")


@dataclass
class RunConfig:
    """Fully resolved run settings: defaults <- config file <- CLI flags."""

    seed: int = 0
    # model
    embed_dim: int = 32
    d_model: int = 64
    gaz_hidden: int = 32
    classifier: str = "softmax"
    integration: str = "concat"
    span_max_width: int = 10
    match_policy: str = "longest"
    lowercase_match: bool = False
    # training
    alpha: float | None = None
    pretrain_epochs: int = 10
    stage1_epochs: int = 5
    stage2_epochs: int = 20
    batch_size: int = 16
    dropout: float = 0.1
    lr_encoder: float = 1e-3
    lr_gazetteer_net: float = 1e-3
    lr_crf: float = 1e-2
    lr_other: float = 1e-3
    weight_decay: float = 0.01
    adaptation_loss: str = "kl"
    stage2_l1_source: str = "gold"
    # synthesis
    synth_n: int = 200
    synth_mode: str = "rich"
    synth_vocab: int = 200
    synth_templates: str = "default"
    synth_entity_source: str = "gazetteer"

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim,
            d_model=self.d_model,
            gaz_hidden=self.gaz_hidden,
            classifier=self.classifier,
            integration=self.integration,
            span_max_width=self.span_max_width,
            lowercase_match=self.lowercase_match,
            match_policy=self.match_policy,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            alpha=self.alpha,
            pretrain_epochs=self.pretrain_epochs,
            stage1_epochs=self.stage1_epochs,
            stage2_epochs=self.stage2_epochs,
            batch_size=self.batch_size,
            dropout=self.dropout,
            learning_rates={
                "encoder": self.lr_encoder,
                "gazetteer_net": self.lr_gazetteer_net,
                "crf": self.lr_crf,
                "other": self.lr_other,
            },
            weight_decay=self.weight_decay,
            adaptation_loss=self.adaptation_loss,
            stage2_l1_source=self.stage2_l1_source,
            seed=self.seed,
        )


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        unknown = set(file_values) - _CONFIG_FIELDS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = replace(cfg, **file_values)
    overrides = {
        name: getattr(args, name)
        for name in _CONFIG_FIELDS
        if getattr(args, name, None) is not None
    }
    if overrides:
        cfg = replace(cfg, **overrides)
    cfg.model_config()  # validate eagerly
    cfg.train_config()
    return cfg


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _prepare_out(args, cfg: RunConfig, command: str) -> Path | None:
    out = getattr(args, "out", None)
    if out is None:
        return None
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "config.json", {
        "version": __version__,
        "command": command,
        "config": dataclasses.asdict(cfg),
    })
    return out_dir


# ---------------------------------------------------------------------------
# gazetteer subcommands


def cmd_gazetteer_build(args, cfg: RunConfig) -> int:
    data = load_dataset(args.data, lenient=args.lenient)
    rate = 1.0 if args.coverage is None else args.coverage
    rng = seeded_rng(derive_seed(cfg.seed, "gazetteer-build"))
    gaz = subsample_coverage(data, rate, rng)
    save_gazetteer(gaz, args.out_file)
    print(json.dumps({"entries": gaz.total_entries(), "per_label": gaz.counts()},
                     sort_keys=True))
    return 0


def _feature_table(tokens, feats: np.ndarray) -> str:
    width = max(5, max((len(t) for t in tokens), default=5))
    header = f"{'token':<{width}} " + " ".join(f"{name:>7}" for name in TAGS)
    lines = [header]
    for tok, row in zip(tokens, feats):
        cells = " ".join(f"{int(v):>7d}" for v in row)
        lines.append(f"{tok:<{width}} {cells}")
    return "\n".join(lines)


def cmd_gazetteer_match(args, cfg: RunConfig) -> int:
    gaz = load_gazetteer(args.gazetteer)
    trie = build_trie(gaz, lowercase=cfg.lowercase_match)
    tokens = args.tokens.split()
    if not tokens:
        raise UsageError("--tokens must contain at least one token")
    policy = args.policy or cfg.match_policy
    matches = match_tokens(trie, tokens, policy)
    feats = match_features(trie, tokens, policy)
    if args.format == "json":
        print(json.dumps({
            "matches": [{"start": m.start, "length": m.length, "label": m.label}
                        for m in matches],
            "features": feats.astype(int).tolist(),
        }, sort_keys=True))
    else:
        for m in matches:
            print(f"match: tokens[{m.start}:{m.end}] -> {m.label}")
        print(_feature_table(tokens, feats))
    return 0


def cmd_gazetteer_coverage(args, cfg: RunConfig) -> int:
    gaz = load_gazetteer(args.gazetteer)
    data = load_dataset(args.data, lenient=args.lenient)
    report = coverage_rate(gaz, data)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# data subcommands


def cmd_data_synth(args, cfg: RunConfig) -> int:
    templates = (generic_templates(cfg.synth_mode) if cfg.synth_templates == "generic"
                 else default_templates(cfg.synth_mode))
    spec = SynthSpec(
        n_sentences=cfg.synth_n,
        template_pool=templates,
        context_mode=cfg.synth_mode,
        vocab_size=cfg.synth_vocab,
        seed=derive_seed(cfg.seed, "synth"),
        entity_source=cfg.synth_entity_source,
    )
    gaz = load_gazetteer(args.gazetteer) if args.gazetteer else None
    data, companion = synth_corpus(spec, gaz)
    save_dataset(data, args.out_file)
    if args.companion_out:
        save_gazetteer(companion, args.companion_out)
    print(json.dumps({"sentences": len(data),
                      "companion_entries": companion.total_entries()}, sort_keys=True))
    return 0


def cmd_data_augment(args, cfg: RunConfig) -> int:
    data = load_dataset(args.data, lenient=args.lenient)
    gaz = load_gazetteer(args.gazetteer)
    rng = seeded_rng(derive_seed(cfg.seed, "augment"))
    augmented = augment_replace(data, gaz, rng)
    result = data.concat(augmented) if args.double else augmented
    save_dataset(result, args.out_file)
    print(json.dumps({"sentences": len(result)}, sort_keys=True))
    return 0


def cmd_data_validate(args, cfg: RunConfig) -> int:
    data = load_dataset(args.data, lenient=args.lenient)
    violations = sum(len(validate_bio(s.tags)) for s in data)
    tokens = sum(len(s) for s in data)
    print(json.dumps({"sentences": len(data), "tokens": tokens,
                      "bio_violations": violations}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# training subcommands


def cmd_pretrain(args, cfg: RunConfig) -> int:
    out_dir = _prepare_out(args, cfg, "pretrain")
    data = load_dataset(args.data, lenient=args.lenient)
    tcfg = cfg.train_config()
    mcfg = cfg.model_config()
    encoder = pretrain_encoder(data, tcfg, mcfg)
    bundle = build_bundle(encoder.vocab, mcfg, cfg.seed, encoder=encoder)
    ckpt = (out_dir or Path(".")) / "pretrained.ckpt"
    save_checkpoint(bundle, ckpt, tcfg)
    print(json.dumps({"checkpoint": str(ckpt),
                      "token_accuracy": encoder.pretrain_accuracy}, sort_keys=True))
    return 0


def cmd_adapt(args, cfg: RunConfig) -> int:
    out_dir = _prepare_out(args, cfg, "adapt")
    bundle, _ = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data, lenient=args.lenient)
    tcfg = cfg.train_config()
    stage1_adapt(bundle, data, tcfg)
    ckpt = (out_dir or Path(".")) / "adapted.ckpt"
    save_checkpoint(bundle, ckpt, tcfg)
    if out_dir:
        _write_json(out_dir / "history.json", bundle.history)
    losses = bundle.history["stage1_loss"]
    print(json.dumps({"checkpoint": str(ckpt), "final_loss": losses[-1] if losses else None},
                     sort_keys=True))
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    out_dir = _prepare_out(args, cfg, "train")
    bundle, _ = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data, lenient=args.lenient)
    val = load_dataset(args.val, lenient=args.lenient) if args.val else None
    trie = None
    if bundle.integration.mode != "none":
        if not args.gazetteer:
            raise UsageError("--gazetteer is required unless integration mode is none")
        trie = build_trie(load_gazetteer(args.gazetteer), lowercase=cfg.lowercase_match)
    tcfg = cfg.train_config()
    stage2_train(bundle, data, trie, tcfg, val_data=val,
                 allow_unadapted=args.allow_unadapted)
    ckpt = (out_dir or Path(".")) / "trained.ckpt"
    save_checkpoint(bundle, ckpt, tcfg)
    if out_dir:
        _write_json(out_dir / "history.json", bundle.history)
    summary = {"checkpoint": str(ckpt)}
    entries = bundle.history.get("stage2", [])
    if entries and "val_macro_f1" in entries[-1]:
        summary["best_val_macro_f1"] = max(e["val_macro_f1"] for e in entries)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    out_dir = _prepare_out(args, cfg, "eval")
    bundle, _ = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data, lenient=args.lenient)
    trie = None
    if bundle.integration.mode != "none":
        if not args.gazetteer:
            raise UsageError("--gazetteer is required unless integration mode is none")
        trie = build_trie(load_gazetteer(args.gazetteer), lowercase=cfg.lowercase_match)
    pred = predict_dataset(bundle, data, trie)
    report = evaluate(pred, data)
    if out_dir:
        _write_json(out_dir / "report.json", report.to_dict())
        with open(out_dir / "report.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_table() + "\n")
        model_id = args.model_id or Path(args.checkpoint).stem
        if args.emit_logits:
            logits = [bundle.predict_logits(s.tokens, trie) for s in data]
            pset = PredictionSet(model_id, [s.tokens for s in data], logits=logits)
        else:
            pset = PredictionSet(model_id, [s.tokens for s in data],
                                 tags=[list(s.tags) for s in pred])
        save_predictions(pset, out_dir / "predictions.jsonl")
    print(report.to_table())
    return 0


def cmd_ensemble(args, cfg: RunConfig) -> int:
    out_dir = _prepare_out(args, cfg, "ensemble")
    members = [load_predictions(p) for p in args.inputs]
    check_aligned(members)
    weights = None
    if args.weights:
        weights = [float(w) for w in args.weights.split(",")]
        if len(weights) != len(members):
            raise UsageError(f"{len(weights)} weights for {len(members)} inputs")

    tokens = members[0].tokens
    combined: list[list[int]] = []
    if args.mode == "avg-logits":
        for m in members:
            if m.logits is None:
                raise DataError(f"member {m.model_id!r} has no logits; avg-logits needs logit files")
        for i in range(len(tokens)):
            mean = avg_logits([m.logits[i] for m in members])
            combined.append(decode_softmax_logits(mean))
    else:
        member_tags = []
        for m in members:
            if m.tags is not None:
                member_tags.append(m.tags)
            else:
                member_tags.append([decode_softmax_logits(lg) for lg in m.logits])
        for i in range(len(tokens)):
            combined.append(weighted_token_vote([mt[i] for mt in member_tags], weights))

    result = PredictionSet("ensemble", list(tokens), tags=combined)
    if out_dir:
        save_predictions(result, out_dir / "predictions.jsonl")
    if args.gold:
        from .corpus import Sentence

        gold = load_dataset(args.gold, lenient=args.lenient)
        pred_ds = Dataset(tuple(Sentence(t, tuple(tg)) for t, tg in zip(tokens, combined)))
        report = evaluate(pred_ds, gold)
        if out_dir:
            _write_json(out_dir / "report.json", report.to_dict())
        print(report.to_table())
    else:
        print(json.dumps({"sentences": len(combined), "mode": args.mode}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# experiments


def sweep_coverage(data: Dataset, rates, cfg: RunConfig,
                   val_data: Dataset | None = None,
                   pretrain_data: Dataset | None = None,
                   encoder=None) -> list[dict]:
    """For each coverage rate: subsample a gazetteer from the data's own
    entities, run the full two-stage training with a derived seed, and record
    validation macro-F1 plus the mean gazetteer gate weight."""
    for rate in rates:
        if not 0.0 <= rate <= 1.0:
            raise ConfigError(f"coverage rate {rate} outside [0, 1]")
    if cfg.integration != "weighted_sum":
        raise ConfigError("the coverage sweep needs weighted_sum integration for its gate diagnostic")

    if val_data is None:
        rng = seeded_rng(derive_seed(cfg.seed, "sweep-split"))
        order = rng.permutation(len(data))
        n_val = max(1, len(data) // 6)
        val_data = data.subset([int(i) for i in order[:n_val]], "sweep-val")
        data = data.subset([int(i) for i in order[n_val:]], "sweep-train")
    combined = data.concat(val_data, "sweep-all")

    tcfg = cfg.train_config()
    mcfg = cfg.model_config()
    if encoder is None:
        encoder = pretrain_encoder(pretrain_data or data, tcfg, mcfg)

    results = []
    for rate in rates:
        label = f"sweep-rate-{rate:.6f}"
        gaz = subsample_coverage(combined, rate, seeded_rng(derive_seed(cfg.seed, label + "-sub")))
        trie = build_trie(gaz, lowercase=cfg.lowercase_match)
        rate_seed = derive_seed(cfg.seed, label)
        bundle = build_bundle(encoder.vocab, mcfg, rate_seed, encoder=clone_encoder(encoder))
        rate_cfg = replace(tcfg, seed=rate_seed)
        stage1_adapt(bundle, data, rate_cfg)
        stage2_train(bundle, data, trie, rate_cfg, val_data=val_data)
        report = evaluate(predict_dataset(bundle, val_data, trie), val_data)
        results.append({
            "rate": rate,
            "macro_f1": report.macro_f1,
            "mean_sigma_lambda": bundle.integration.mean_sigma(),
            "gazetteer_entries": gaz.total_entries(),
        })
        log.info("sweep rate %.2f: macro-F1 %.4f, mean sigma(lambda) %.4f",
                 rate, report.macro_f1, results[-1]["mean_sigma_lambda"])
    return results


def cmd_sweep_coverage(args, cfg: RunConfig) -> int:
    if cfg.integration != "weighted_sum":
        log.info("forcing weighted_sum integration for the coverage sweep")
        cfg = replace(cfg, integration="weighted_sum")
    out_dir = _prepare_out(args, cfg, "sweep-coverage")
    data = load_dataset(args.data, lenient=args.lenient)
    val = load_dataset(args.val, lenient=args.lenient) if args.val else None
    pre = load_dataset(args.pretrain_data, lenient=args.lenient) if args.pretrain_data else None
    rates = [float(r) for r in args.rates.split(",")]
    results = sweep_coverage(data, rates, cfg, val_data=val, pretrain_data=pre)
    if out_dir:
        _write_json(out_dir / "sweep.json", results)
    print(f"{'rate':>6} {'macro_f1':>9} {'mean_sigma':>11}")
    for row in results:
        print(f"{row['rate']:>6.2f} {row['macro_f1']:>9.4f} {row['mean_sigma_lambda']:>11.4f}")
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    results = gradient_check_suite(samples=args.samples)
    worst = max(results.values())
    for name in sorted(results):
        status = "ok" if results[name] < GRAD_TOLERANCE else "FAIL"
        print(f"{status}  {name:<28} max_rel_err={results[name]:.3e}")
    print(f"worst: {worst:.3e} (tolerance {GRAD_TOLERANCE:.0e})")
    if worst >= GRAD_TOLERANCE:
        raise NumericError(f"gradient check failed: {worst:.3e} >= {GRAD_TOLERANCE:.0e}")
    return 0


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_usage()}")


def _add_common(p: argparse.ArgumentParser, *, out: bool = False):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--lenient", action="store_true", help="repair BIO violations on load")
    if out:
        p.add_argument("--out", help="run directory for artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gain", description=__doc__)
    parser.add_argument("--version", action="version", version=f"gain {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    gaz = sub.add_parser("gazetteer", help="build, match against or measure a gazetteer")
    gaz_sub = gaz.add_subparsers(dest="subcommand", metavar="ACTION")

    p = gaz_sub.add_parser("build", help="extract a gazetteer from gold entities")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out-file", required=True)
    p.add_argument("--coverage", type=float, default=None,
                   help="keep this fraction of distinct entities per label")
    p.set_defaults(handler=cmd_gazetteer_build)

    p = gaz_sub.add_parser("match", help="match a sentence and print its features")
    _add_common(p)
    p.add_argument("--gazetteer", required=True)
    p.add_argument("--tokens", required=True, help="whitespace-separated sentence")
    p.add_argument("--policy", choices=["longest", "all"], default=None)
    p.add_argument("--format", choices=["table", "json"], default="table")
    p.set_defaults(handler=cmd_gazetteer_match)

    p = gaz_sub.add_parser("coverage", help="coverage report of a gazetteer over a dataset")
    _add_common(p)
    p.add_argument("--gazetteer", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(handler=cmd_gazetteer_coverage)

    data = sub.add_parser("data", help="synthesize, augment or validate datasets")
    data_sub = data.add_subparsers(dest="subcommand", metavar="ACTION")

    p = data_sub.add_parser("synth", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--gazetteer", default=None)
    p.add_argument("--out-file", required=True)
    p.add_argument("--companion-out", default=None,
                   help="write the gazetteer of emitted entities here")
    p.add_argument("--synth-n", type=int, default=None, dest="synth_n")
    p.add_argument("--synth-mode", choices=["low", "rich"], default=None, dest="synth_mode")
    p.add_argument("--synth-templates", choices=["default", "generic"], default=None,
                   dest="synth_templates")
    p.add_argument("--synth-entity-source", choices=["gazetteer", "fresh"], default=None,
                   dest="synth_entity_source")
    p.set_defaults(handler=cmd_data_synth)

    p = data_sub.add_parser("augment", help="entity-replacement augmentation")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--gazetteer", required=True)
    p.add_argument("--out-file", required=True)
    p.add_argument("--double", action="store_true",
                   help="concatenate the original with the augmented copy")
    p.set_defaults(handler=cmd_data_augment)

    p = data_sub.add_parser("validate", help="check a dataset file")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(handler=cmd_data_validate)

    p = sub.add_parser("pretrain", help="pre-train the encoder with a throwaway head")
    _add_common(p, out=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pretrain-epochs", type=int, default=None, dest="pretrain_epochs")
    p.add_argument("--classifier", choices=["softmax", "crf", "span"], default=None)
    p.add_argument("--integration", choices=["concat", "weighted_sum", "none"], default=None)
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("adapt", help="stage 1: adapt the gazetteer network to the frozen encoder")
    _add_common(p, out=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--stage1-epochs", type=int, default=None, dest="stage1_epochs")
    p.add_argument("--adaptation-loss", choices=["kl", "mse"], default=None,
                   dest="adaptation_loss")
    p.set_defaults(handler=cmd_adapt)

    p = sub.add_parser("train", help="stage 2: joint training with gazetteer matching")
    _add_common(p, out=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--gazetteer", default=None)
    p.add_argument("--val", default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--stage2-epochs", type=int, default=None, dest="stage2_epochs")
    p.add_argument("--stage2-l1-source", choices=["gold", "matched"], default=None,
                   dest="stage2_l1_source")
    p.add_argument("--allow-unadapted", action="store_true",
                   help="permit skipping stage 1 (ablation)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common(p, out=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--gazetteer", default=None)
    p.add_argument("--model-id", default=None)
    p.add_argument("--emit-logits", action="store_true",
                   help="write logits instead of tags to predictions.jsonl")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("ensemble", help="aggregate prediction files")
    _add_common(p, out=True)
    p.add_argument("--mode", choices=["avg-logits", "vote"], required=True)
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--weights", default=None, help="comma-separated member weights")
    p.add_argument("--gold", default=None, help="gold dataset for scoring the ensemble")
    p.set_defaults(handler=cmd_ensemble)

    p = sub.add_parser("sweep-coverage", help="coverage-rate experiment")
    _add_common(p, out=True)
    p.add_argument("--data", required=True)
    p.add_argument("--val", default=None)
    p.add_argument("--pretrain-data", default=None)
    p.add_argument("--rates", required=True, help="comma-separated fractions in [0,1]")
    p.add_argument("--stage2-epochs", type=int, default=None, dest="stage2_epochs")
    p.set_defaults(handler=cmd_sweep_coverage)

    p = sub.add_parser("gradcheck", help="finite-difference check of every operation")
    _add_common(p)
    p.add_argument("--samples", type=int, default=48)
    p.set_defaults(handler=cmd_gradcheck)

    return parser


def _setup_logging():
    level_name = os.environ.get("GAIN_LOG", "warning").upper()
    level = getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def run(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = getattr(args, "handler", None)
        if handler is None:
            raise UsageError(parser.format_usage())
        cfg = resolve_config(args)
        return handler(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
