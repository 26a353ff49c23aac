"""Finite-difference verification of every differentiable operation and of
the complete stage-2 objective on a tiny model."""

from __future__ import annotations

from . import numcore as nc
from .corpus import Sentence
from .gazetteer import Gazetteer, build_trie
from .model import ModelConfig, crf_log_likelihood_loss
from .numcore import ParamSet, Tensor, grad_check, seeded_rng
from .train import TrainConfig, build_bundle, stage2_batch_loss

GRAD_TOLERANCE = 1e-4


def _param(ps: ParamSet, name: str, rng, shape, low=-1.0, high=1.0) -> Tensor:
    return ps.add(name, Tensor(rng.uniform(low, high, size=shape)))


def _op_checks() -> list[tuple[str, ParamSet, object]]:
    """(name, params, loss_fn) triples exercising each op in isolation."""
    rng = seeded_rng(1234)
    checks = []

    def simple(name, shapes, fn, low=-1.0, high=1.0):
        ps = ParamSet()
        tensors = [_param(ps, f"p{i}", rng, s, low, high) for i, s in enumerate(shapes)]
        checks.append((name, ps, lambda t=tensors: nc.tensor_sum(fn(*t))))

    def scalarized(name, shapes, fn, low=-1.0, high=1.0):
        ps = ParamSet()
        tensors = [_param(ps, f"p{i}", rng, s, low, high) for i, s in enumerate(shapes)]
        checks.append((name, ps, lambda t=tensors: fn(*t)))

    mix = Tensor(rng.uniform(-1, 1, size=(3, 4)))  # fixed mixing weights

    simple("add", [(3, 4), (3, 4)], lambda a, b: nc.mul(nc.add(a, b), mix))
    simple("add_bias_broadcast", [(3, 4), (4,)], lambda a, b: nc.mul(nc.add(a, b), mix))
    simple("sub", [(3, 4), (3, 4)], lambda a, b: nc.mul(nc.sub(a, b), mix))
    simple("mul", [(3, 4), (3, 4)], nc.mul)
    simple("mul_broadcast", [(3, 4), (4,)], nc.mul)
    simple("scale", [(3, 4)], lambda a: nc.scale(a, 1.7))
    simple("neg", [(3, 4)], nc.neg)
    simple("matmul", [(3, 4), (4, 2)], nc.matmul)
    simple("relu", [(3, 4)], nc.relu, low=0.2, high=1.0)  # keep clear of the kink
    simple("sigmoid", [(3, 4)], nc.sigmoid)
    simple("tanh", [(3, 4)], nc.tanh)
    simple("exp", [(3, 4)], nc.exp)
    simple("log", [(3, 4)], nc.log, low=0.5, high=2.0)
    scalarized("sum", [(3, 4)], nc.tensor_sum)
    scalarized("mean", [(3, 4)], nc.tensor_mean)
    simple("transpose", [(3, 4)], lambda a: nc.mul(nc.transpose(a), nc.transpose(mix)))
    simple("reshape", [(3, 4)], lambda a: nc.reshape(a, (2, 6)))
    simple("concat_cols", [(3, 2), (3, 2)], lambda a, b: nc.mul(nc.concat_cols(a, b), mix))
    simple("concat_rows", [(1, 4), (2, 4)], lambda a, b: nc.mul(nc.concat_rows([a, b]), mix))
    simple("slice_rows", [(3, 4)], lambda a: nc.slice_rows(a, 1, 3))
    simple("slice_cols", [(3, 4)], lambda a: nc.slice_cols(a, 1, 3))
    scalarized("logsumexp_all", [(3, 4)], lambda a: nc.logsumexp(a, axis=None))
    simple("logsumexp_axis0", [(3, 4)], lambda a: nc.logsumexp(a, axis=0, keepdims=True))
    simple("softmax", [(3, 4)], lambda a: nc.mul(nc.softmax(a), mix))
    simple("log_softmax", [(3, 4)], lambda a: nc.mul(nc.log_softmax(a), mix))
    simple("pick", [(3, 4)], lambda a: nc.pick(a, [0, 3, 1]))
    simple("take", [(6,)], lambda a: nc.take(a, [4, 0, 0, 2]))
    simple("gather_pairs", [(3, 4)], lambda a: nc.gather_pairs(a, [0, 2, 2], [1, 3, 3]))
    simple("embedding", [(5, 3)], lambda a: nc.embedding(a, [0, 4, 4, 2]))
    simple("linear", [(3, 4), (4, 2), (2,)], nc.linear)
    scalarized("cross_entropy", [(4, 5)], lambda a: nc.cross_entropy(a, [1, 0, 4, 2]))
    scalarized("mse_loss", [(3, 4), (3, 4)], nc.mse_loss)

    def dropout_fixed(a):
        return nc.dropout(a, 0.3, seeded_rng(99))  # same mask on every call

    simple("dropout", [(4, 4)], dropout_fixed)

    # The stop-gradient side is a constant here; differentiability is only
    # claimed for the other operand (the zero-gradient contract is asserted
    # separately in the unit tests).
    blocked = Tensor(rng.uniform(-1, 1, (3, 4)))
    simple("stop_gradient", [(3, 4)], lambda b: nc.mul(nc.stop_gradient(blocked), b))

    def kl_frozen_case(ps):
        a = _param(ps, "a", rng, (3, 5))
        b = _param(ps, "b", rng, (3, 5))
        snap = nc.kl_pair_snapshot(a, b)
        return lambda: nc.kl_pair_loss_frozen(a, b, snap)

    ps = ParamSet()
    checks.append(("kl_pair_loss", ps, kl_frozen_case(ps)))

    def lstm_case(ps):
        x = _param(ps, "x", rng, (3, 4))
        w_ih = _param(ps, "w_ih", rng, (4, 12), -0.5, 0.5)
        w_hh = _param(ps, "w_hh", rng, (3, 12), -0.5, 0.5)
        b = _param(ps, "b", rng, (12,), -0.5, 0.5)
        weights = Tensor(rng.uniform(-1, 1, (3, 3)))
        return lambda: nc.tensor_sum(nc.mul(nc.lstm_run(x, w_ih, w_hh, b), weights))

    ps = ParamSet()
    checks.append(("lstm", ps, lstm_case(ps)))

    def bilstm_case(ps):
        x = _param(ps, "x", rng, (3, 4))
        fw = tuple(_param(ps, f"fw{i}", rng, s, -0.5, 0.5)
                   for i, s in enumerate([(4, 12), (3, 12), (12,)]))
        bw = tuple(_param(ps, f"bw{i}", rng, s, -0.5, 0.5)
                   for i, s in enumerate([(4, 12), (3, 12), (12,)]))
        weights = Tensor(rng.uniform(-1, 1, (3, 6)))
        return lambda: nc.tensor_sum(nc.mul(nc.bilstm(x, fw, bw), weights))

    ps = ParamSet()
    checks.append(("bilstm", ps, bilstm_case(ps)))

    def crf_case(ps):
        emissions = _param(ps, "emissions", rng, (4, 13))
        trans = _param(ps, "trans", rng, (13, 13), -0.3, 0.3)
        start = _param(ps, "start", rng, (13,), -0.3, 0.3)
        end = _param(ps, "end", rng, (13,), -0.3, 0.3)
        gold = [0, 1, 2, 0]
        return lambda: crf_log_likelihood_loss(trans, start, end, emissions, gold)

    ps = ParamSet()
    checks.append(("crf_loss", ps, crf_case(ps)))

    return checks


def _stage2_checks() -> list[tuple[str, ParamSet, object]]:
    """Full stage-2 objective on a two-sentence batch per classifier.

    The sentences are long enough that the sampled coordinates carry
    gradients well above the float64 resolution of central differences at
    h=1e-5 (roughly 2e-6 times the loss magnitude).
    """
    sentences = [
        Sentence(("we", "went", "to", "buy", "a", "red", "widget", "yesterday"),
                 (0, 0, 0, 0, 0, 0, 9, 0)),
        Sentence(("ada", "lovelace", "wrote", "programs", "about", "paris"),
                 (1, 2, 0, 11, 0, 3)),
    ]
    gaz = Gazetteer()
    gaz.add(("widget",), "PROD")
    gaz.add(("red", "widget"), "PROD")
    gaz.add(("ada", "lovelace"), "PER")
    gaz.add(("programs",), "CW")
    gaz.add(("paris",), "LOC")
    trie = build_trie(gaz)
    vocab = {tok: i + 1 for i, tok in enumerate(
        sorted({t for s in sentences for t in s.tokens}))}

    checks = []
    for classifier in ("softmax", "crf", "span"):
        for integration in ("concat", "weighted_sum"):
            mcfg = ModelConfig(embed_dim=4, d_model=8, gaz_hidden=6,
                               classifier=classifier, integration=integration)
            tcfg = TrainConfig(dropout=0.0, seed=11)
            bundle = build_bundle(vocab, mcfg, seed=11)
            alpha = tcfg.resolved_alpha(classifier)
            params = bundle.param_set()
            fd_cache: dict = {}  # freeze the adaptation stop-gradient targets

            def loss_fn(b=bundle, t=tcfg, a=alpha, cache=fd_cache):
                total, _, _ = stage2_batch_loss(b, sentences, trie, t, a,
                                                train=False, fd_cache=cache)
                return total

            checks.append((f"stage2_{classifier}_{integration}", params, loss_fn))
    return checks


def gradient_check_suite(samples: int = 48, h: float = 1e-5) -> dict[str, float]:
    """Max relative finite-difference error per check, keyed by name."""
    results = {}
    for name, params, loss_fn in _op_checks() + _stage2_checks():
        results[name] = grad_check(loss_fn, params, h=h, samples=samples,
                                   rng=seeded_rng(7))
    return results
