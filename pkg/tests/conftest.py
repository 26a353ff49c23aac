"""Shared fixtures: the synthetic corpora, the pretrained encoder and the
trained bundles reused by the training tests and the acceptance suite.

Everything derives from one shipped master seed; the expensive trainings run
once per session.
"""

from dataclasses import replace

import pytest

from gain.corpus import SynthSpec, default_templates, generic_templates, synth_corpus
from gain.gazetteer import build_trie
from gain.model import ModelConfig
from gain.train import (
    TrainConfig,
    build_bundle,
    clone_bundle,
    clone_encoder,
    pretrain_encoder,
    stage1_adapt,
    stage2_train,
)

SHIPPED_SEED = 20220211

MODEL_KW = dict(embed_dim=32, d_model=64, gaz_hidden=32)

TASK_STAGE2_EPOCHS = 8


@pytest.fixture(scope="session")
def fixture_timings():
    """Wall-clock seconds of the expensive session fixtures, for the
    acceptance suite's runtime bounds."""
    return {}


@pytest.fixture(scope="session")
def pretrain_corpus():
    spec = SynthSpec(2000, default_templates("rich"), context_mode="rich",
                     vocab_size=150, seed=SHIPPED_SEED, entity_source="fresh")
    data, _ = synth_corpus(spec)
    return data


@pytest.fixture(scope="session")
def task_corpus():
    """Gazetteer-dependent task: entities are fresh random strings, contexts
    carry no type information, the companion gazetteer covers everything."""
    spec = SynthSpec(2400, generic_templates("low"), context_mode="low",
                     vocab_size=150, seed=SHIPPED_SEED + 1, entity_source="fresh")
    data, companion = synth_corpus(spec)
    train = data.subset(range(2000), "task-train")
    val = data.subset(range(2000, 2400), "task-val")
    return train, val, companion


@pytest.fixture(scope="session")
def task_trie(task_corpus):
    return build_trie(task_corpus[2])


@pytest.fixture(scope="session")
def pretrained_encoder(pretrain_corpus, fixture_timings):
    import time

    cfg = TrainConfig(seed=SHIPPED_SEED)
    mcfg = ModelConfig(**MODEL_KW)
    t0 = time.time()
    encoder = pretrain_encoder(pretrain_corpus, cfg, mcfg)
    fixture_timings["pretrain"] = time.time() - t0
    return encoder


@pytest.fixture(scope="session")
def task_train_config():
    return replace(TrainConfig(seed=SHIPPED_SEED), stage2_epochs=TASK_STAGE2_EPOCHS)


@pytest.fixture(scope="session")
def adapted_gain_bundle(pretrained_encoder, task_corpus, task_train_config,
                        fixture_timings):
    """Stage-1-adapted concat/softmax bundle on the task training data."""
    import time

    train, _, _ = task_corpus
    mcfg = ModelConfig(classifier="softmax", integration="concat", **MODEL_KW)
    bundle = build_bundle(pretrained_encoder.vocab, mcfg, SHIPPED_SEED,
                          encoder=clone_encoder(pretrained_encoder))
    t0 = time.time()
    stage1_adapt(bundle, train, task_train_config)
    fixture_timings["stage1"] = time.time() - t0
    return bundle


@pytest.fixture(scope="session")
def trained_gain_bundle(adapted_gain_bundle, task_corpus, task_trie,
                        task_train_config, fixture_timings):
    import time

    train, val, _ = task_corpus
    bundle = clone_bundle(adapted_gain_bundle)
    bundle.history.update(adapted_gain_bundle.history)
    t0 = time.time()
    stage2_train(bundle, train, task_trie, task_train_config, val_data=val)
    fixture_timings["stage2_gain"] = time.time() - t0
    return bundle


@pytest.fixture(scope="session")
def trained_baseline_bundle(pretrained_encoder, task_corpus, task_train_config,
                            fixture_timings):
    """Encoder-only baseline trained identically (same epochs, same seed)."""
    import time

    train, val, _ = task_corpus
    mcfg = ModelConfig(classifier="softmax", integration="none", **MODEL_KW)
    bundle = build_bundle(pretrained_encoder.vocab, mcfg, SHIPPED_SEED,
                          encoder=clone_encoder(pretrained_encoder))
    t0 = time.time()
    stage2_train(bundle, train, None, task_train_config, val_data=val,
                 allow_unadapted=True)
    fixture_timings["stage2_baseline"] = time.time() - t0
    return bundle
