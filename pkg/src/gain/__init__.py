"""Gazetteer-adapted integration network for complex named entity recognition.

A self-contained pipeline: gazetteer construction and trie matching, a
differentiable numeric core, encoder and gazetteer networks with two-stage
adaptation training, three backend classifiers, ensembling, entity-level
metrics and an experiment CLI.
"""

__version__ = "0.1.0"

from .corpus import (
    Dataset,
    ENTITY_TYPES,
    Sentence,
    SynthSpec,
    TAGS,
    augment_replace,
    entity_spans,
    parse_conll,
    serialize_conll,
    spans_to_tags,
    synth_corpus,
    tags_to_onehot,
    validate_bio,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    GainError,
    NumericError,
    UsageError,
)
from .gazetteer import (
    CoverageReport,
    Gazetteer,
    Match,
    MatchTrie,
    build_trie,
    coverage_rate,
    load_gazetteer,
    match_features,
    match_tokens,
    save_gazetteer,
    subsample_coverage,
)
from .metrics import EvalReport, evaluate
from .model import Encoder, GazNet, Integration, ModelConfig, integrate
from .numcore import OptimizerConfig, ParamSet, Tensor, adamw_step, grad_check
from .train import (
    ModelBundle,
    TrainConfig,
    build_bundle,
    load_checkpoint,
    pretrain_encoder,
    save_checkpoint,
    stage1_adapt,
    stage2_train,
)
from .ensemble import (
    FoldPlan,
    PredictionSet,
    avg_logits_decode,
    kfold_split,
    weighted_token_vote,
)
