"""Minimal reverse-mode differentiable numeric core over dense float64
arrays.

Everything the training pipeline needs and nothing more: a Tensor with a
recorded backward graph, the layer ops used by the networks (linear, LSTM,
activations, dropout, concatenation), stable softmax/log-softmax, the three
losses (cross-entropy, symmetric-KL pair with stop-gradient placement, MSE),
AdamW with per-group learning rates, and central-finite-difference gradient
checking.

No broadcasting beyond what numpy's rules give elementwise add/sub/mul;
matmul is strictly 2-D. Set ``GAIN_DEBUG=1`` (or call ``set_debug``) to check
every forward result for NaN/Inf.
"""

from __future__ import annotations

import hashlib
import os
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError

_debug = bool(os.environ.get("GAIN_DEBUG"))
_grad_enabled = True


def set_debug(flag: bool) -> None:
    global _debug
    _debug = bool(flag)


@contextmanager
def no_grad():
    """Disable graph recording (forward-only evaluation)."""
    global _grad_enabled
    old, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = old


class Tensor:
    """A float64 array with an optional gradient and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise ContractError(f"backward() requires a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if _debug and not np.all(np.isfinite(data)):
        raise NumericError("non-finite values produced in forward pass")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ContractError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    data = a.data * c

    def backward(g):
        _accum(a, g * c)

    return _make(data, (a,), backward)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ContractError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def backward(g):
        _accum(a, g * (a.data > 0.0))

    return _make(data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        _accum(a, g * data * (1.0 - data))

    return _make(data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - data * data))

    return _make(data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        _accum(a, g * data)

    return _make(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _make(data, (a,), backward)


def tensor_sum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum())

    def backward(g):
        _accum(a, np.full(a.data.shape, float(g)))

    return _make(data, (a,), backward)


def tensor_mean(a: Tensor) -> Tensor:
    n = a.data.size
    data = np.asarray(a.data.sum() / n)

    def backward(g):
        _accum(a, np.full(a.data.shape, float(g) / n))

    return _make(data, (a,), backward)


def transpose(a: Tensor) -> Tensor:
    data = a.data.T

    def backward(g):
        _accum(a, g.T)

    return _make(data, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(data, (a,), backward)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[0] != b.data.shape[0]:
        raise ContractError(f"concat_cols: row counts differ, {a.shape} vs {b.shape}")
    data = np.concatenate([a.data, b.data], axis=1)
    split = a.data.shape[1]

    def backward(g):
        _accum(a, g[:, :split])
        _accum(b, g[:, split:])

    return _make(data, (a, b), backward)


def concat_rows(parts: list[Tensor]) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.data.shape[0] for p in parts]

    def backward(g):
        offset = 0
        for p, n in zip(parts, sizes):
            _accum(p, g[offset : offset + n])
            offset += n

    return _make(data, tuple(parts), backward)


def slice_rows(a: Tensor, lo: int, hi: int) -> Tensor:
    data = a.data[lo:hi]

    def backward(g):
        full = np.zeros_like(a.data)
        full[lo:hi] = g
        _accum(a, full)

    return _make(data, (a,), backward)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    data = a.data[:, lo:hi]

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, lo:hi] = g
        _accum(a, full)

    return _make(data, (a,), backward)


def logsumexp(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = a.data
    xmax = x.max(axis=axis, keepdims=True)
    shifted = np.exp(x - xmax)
    total = shifted.sum(axis=axis, keepdims=True)
    result = np.log(total) + xmax
    soft = shifted / total
    if keepdims:
        data = result
    elif axis is None:
        data = np.asarray(result.reshape(()))
    else:
        data = result.squeeze(axis=axis)

    def backward(g):
        if axis is None:
            _accum(a, soft * float(g))
        else:
            g_keep = g if keepdims else np.expand_dims(g, axis)
            _accum(a, soft * g_keep)

    return _make(data, (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """Row-wise stable softmax of a 2-D tensor."""
    if a.data.ndim != 2:
        raise ContractError(f"softmax expects 2-D input, got {a.shape}")
    x = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(x)
    data = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=1, keepdims=True)
        _accum(a, data * (g - dot))

    return _make(data, (a,), backward)


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-softmax via max subtraction."""
    if a.data.ndim != 2:
        raise ContractError(f"log_softmax expects 2-D input, got {a.shape}")
    x = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=1, keepdims=True))
    data = x - lse
    soft = np.exp(data)

    def backward(g):
        _accum(a, g - soft * g.sum(axis=1, keepdims=True))

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# gather ops


def pick(a: Tensor, cols) -> Tensor:
    """out[i] = a[i, cols[i]] as a 1-D tensor."""
    rows = np.arange(a.data.shape[0])
    cols = np.asarray(cols, dtype=np.intp)
    data = a.data[rows, cols]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, cols), g)
        _accum(a, full)

    return _make(data, (a,), backward)


def take(a: Tensor, indices) -> Tensor:
    """1-D gather: out[k] = a[indices[k]]."""
    idx = np.asarray(indices, dtype=np.intp)
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(data, (a,), backward)


def gather_pairs(a: Tensor, rows, cols) -> Tensor:
    """out[k] = a[rows[k], cols[k]] for a 2-D tensor."""
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    data = a.data[r, c]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (r, c), g)
        _accum(a, full)

    return _make(data, (a,), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Row gather from an embedding table; gradients scatter-add back."""
    idx = np.asarray(ids, dtype=np.intp)
    data = table.data[idx]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _accum(table, full)

    return _make(data, (table,), backward)


def stop_gradient(a: Tensor) -> Tensor:
    """Identity forward, zero contribution to upstream gradients."""
    return Tensor(a.data)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted-scaling dropout; call only in training mode."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    data = a.data * mask

    def backward(g):
        _accum(a, g * mask)

    return _make(data, (a,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with the bias broadcast over rows."""
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean token negative log-likelihood of the target classes."""
    n = logits.data.shape[0]
    if n == 0:
        raise ContractError("cross_entropy on empty input")
    return scale(tensor_sum(pick(log_softmax(logits), targets)), -1.0 / n)


def kl_pair_loss(a_logits: Tensor, b_logits: Tensor) -> Tensor:
    """Symmetric KL between row distributions with stop-gradient placement.

    With p = softmax(a) and q = softmax(b), returns the per-row mean of
    KL(sg(p)||q) + KL(sg(q)||p). Gradients reach ``a_logits`` only through
    the second term and ``b_logits`` only through the first.
    """
    _check_same_shape(a_logits, b_logits, "kl_pair_loss")
    if a_logits.data.ndim != 2 or a_logits.data.shape[0] < 1:
        raise ContractError(f"kl_pair_loss expects N x C logits, got {a_logits.shape}")
    n = a_logits.data.shape[0]
    la = log_softmax(a_logits)
    lb = log_softmax(b_logits)
    p = Tensor(np.exp(la.data))
    q = Tensor(np.exp(lb.data))
    term1 = tensor_sum(mul(p, sub(Tensor(la.data), lb)))  # KL(sg(p)||q)
    term2 = tensor_sum(mul(q, sub(Tensor(lb.data), la)))  # KL(sg(q)||p)
    return scale(add(term1, term2), 1.0 / n)


def np_log_softmax(x: np.ndarray) -> np.ndarray:
    """Plain-array row-wise log-softmax, numerically identical to the op."""
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def kl_pair_snapshot(a_logits: Tensor, b_logits: Tensor):
    """Frozen stop-gradient sides of kl_pair_loss at the current point."""
    return np_log_softmax(a_logits.data.copy()), np_log_softmax(b_logits.data.copy())


def kl_pair_loss_frozen(a_logits: Tensor, b_logits: Tensor, snapshot) -> Tensor:
    """kl_pair_loss with its stop-gradient sides supplied as constants.

    At the snapshot point this has the same value and the same gradient as
    ``kl_pair_loss``; away from it the frozen sides stay fixed, which makes
    the function amenable to central-finite-difference checking (an in-place
    stop-gradient is, by definition, the gradient of this frozen function).
    """
    _check_same_shape(a_logits, b_logits, "kl_pair_loss")
    n = a_logits.data.shape[0]
    la0, lb0 = snapshot
    p0 = Tensor(np.exp(la0))
    q0 = Tensor(np.exp(lb0))
    term1 = tensor_sum(mul(p0, sub(Tensor(la0), log_softmax(b_logits))))
    term2 = tensor_sum(mul(q0, sub(Tensor(lb0), log_softmax(a_logits))))
    return scale(add(term1, term2), 1.0 / n)


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference over all elements."""
    _check_same_shape(a, b, "mse_loss")
    d = sub(a, b)
    return scale(tensor_sum(mul(d, d)), 1.0 / a.data.size)


# ---------------------------------------------------------------------------
# recurrent layers


def lstm_run(x: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Single-direction LSTM over an N x Din sequence, returning N x H.

    Gate layout along the 4H axis is input, forget, candidate, output.
    """
    n = x.data.shape[0]
    hidden = w_hh.data.shape[0]
    if w_ih.data.shape[1] != 4 * hidden or b.data.shape != (4 * hidden,):
        raise ContractError("lstm_run: gate dimensions do not line up")
    xin = add(matmul(x, w_ih), b)  # N x 4H, input transform hoisted out of the loop
    h = Tensor(np.zeros((1, hidden)))
    c = Tensor(np.zeros((1, hidden)))
    outs: list[Tensor | None] = [None] * n
    steps = range(n - 1, -1, -1) if reverse else range(n)
    for t in steps:
        gates = add(slice_rows(xin, t, t + 1), matmul(h, w_hh))
        i_gate = sigmoid(slice_cols(gates, 0, hidden))
        f_gate = sigmoid(slice_cols(gates, hidden, 2 * hidden))
        g_cand = tanh(slice_cols(gates, 2 * hidden, 3 * hidden))
        o_gate = sigmoid(slice_cols(gates, 3 * hidden, 4 * hidden))
        c = add(mul(f_gate, c), mul(i_gate, g_cand))
        h = mul(o_gate, tanh(c))
        outs[t] = h
    return concat_rows(outs)  # type: ignore[arg-type]


def bilstm(x: Tensor, fw: tuple[Tensor, Tensor, Tensor], bw: tuple[Tensor, Tensor, Tensor]) -> Tensor:
    """Bidirectional LSTM: row t is concat(forward h_t, backward h_t)."""
    return concat_cols(lstm_run(x, *fw), lstm_run(x, *bw, reverse=True))


# ---------------------------------------------------------------------------
# parameters and optimization

OPTIMIZER_GROUPS = ("encoder", "gazetteer_net", "crf", "other")

DEFAULT_RATES = {"encoder": 1e-3, "gazetteer_net": 1e-3, "crf": 1e-2, "other": 1e-3}


@dataclass
class OptimizerConfig:
    learning_rate_groups: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RATES))
    betas: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        for group, rate in self.learning_rate_groups.items():
            if group not in OPTIMIZER_GROUPS:
                raise ContractError(f"unknown optimizer group {group!r}")
            if rate <= 0:
                raise ContractError(f"learning rate for {group} must be > 0, got {rate}")
        for group in OPTIMIZER_GROUPS:
            self.learning_rate_groups.setdefault(group, DEFAULT_RATES[group])


def param_group(name: str) -> str:
    if name.startswith("encoder."):
        return "encoder"
    if name.startswith("gaznet."):
        return "gazetteer_net"
    if name.startswith("crf."):
        return "crf"
    return "other"


class ParamSet:
    """Named trainable tensors plus per-parameter AdamW state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._step: dict[str, int] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def subset(self, prefixes) -> "ParamSet":
        """New ParamSet sharing tensors whose names match any prefix.

        Optimizer state is not shared; a subset starts fresh.
        """
        out = ParamSet()
        for name, t in self._params.items():
            if any(name.startswith(p) for p in prefixes):
                out._params[name] = t
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, arr in snap.items():
            self._params[name].data[...] = arr

    def total_size(self) -> int:
        return sum(t.data.size for t in self._params.values())


def adamw_step(params: ParamSet, config: OptimizerConfig) -> None:
    """One decoupled-weight-decay Adam update; clears gradients afterwards."""
    beta1, beta2 = config.betas
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"missing gradient for parameter {name!r}")
        g = p.grad
        lr = config.learning_rate_groups[param_group(name)]
        m = params._m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            params._v[name] = np.zeros_like(p.data)
            params._step[name] = 0
        v = params._v[name]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        params._m[name] = m
        params._v[name] = v
        params._step[name] += 1
        t = params._step[name]
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data -= lr * (m_hat / (np.sqrt(v_hat) + config.epsilon) + config.weight_decay * p.data)
    params.zero_grad()


# ---------------------------------------------------------------------------
# seeding and initialization


def seeded_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def derive_seed(master: int, label: str) -> int:
    """Stable 63-bit seed derived from a master seed and a task label."""
    digest = hashlib.sha256(f"{master}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def lstm_init(rng: np.random.Generator, d_in: int, hidden: int):
    """LSTM parameter triple (w_ih, w_hh, b) with forget-gate bias +1."""
    w_ih = Tensor(uniform_init(rng, (d_in, 4 * hidden), d_in))
    w_hh = Tensor(uniform_init(rng, (hidden, 4 * hidden), hidden))
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    return w_ih, w_hh, Tensor(b)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(loss_fn, params: ParamSet, h: float = 1e-5, samples: int = 64,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn`` must be a deterministic closure over ``params`` returning a
    scalar Tensor (disable dropout). The relative error denominator is
    max(|analytic|, |numeric|, 1e-8).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    params.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data):
        raise NumericError("loss is not finite")
    loss.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }
    params.zero_grad()

    coords = [(name, i) for name, t in params.items() for i in range(t.data.size)]
    if len(coords) > samples:
        chosen = rng.choice(len(coords), size=samples, replace=False)
        coords = [coords[i] for i in sorted(chosen)]

    max_rel = 0.0
    for name, flat_idx in coords:
        p = params[name]
        original = p.data.flat[flat_idx]
        p.data.flat[flat_idx] = original + h
        f_plus = float(loss_fn().data)
        p.data.flat[flat_idx] = original - h
        f_minus = float(loss_fn().data)
        p.data.flat[flat_idx] = original
        numeric = (f_plus - f_minus) / (2.0 * h)
        ana = float(np.asarray(analytic[name]).flat[flat_idx])
        rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
    return max_rel
