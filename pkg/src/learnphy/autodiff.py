"""Small reverse-mode differentiation engine on top of numpy.

Only the primitives needed by the encoder, decoder and critic graphs are
provided: affine layers, tanh, embedding gather, 1-D convolution, max
pooling, reshape and the two classification losses. Everything runs in
float64.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ConfigurationError(ValueError):
    """Shapes or hyperparameters that cannot describe a valid layer."""


class InputError(ValueError):
    """Data handed to an operation violates its precondition."""


class Tensor:
    """An array node in the computation graph.

    ``grad`` is allocated lazily by ``backward``; leaf tensors created with
    ``requires_grad=True`` accumulate into it across calls until zeroed.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], None] | None = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | float | None = None) -> None:
        """Propagate ``grad`` (default 1 for scalars) to every ancestor."""
        if grad is None:
            if self.data.size != 1:
                raise InputError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()

        def visit(t: Tensor) -> None:
            # iterative DFS; graphs here are shallow but batch loops can nest
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                if id(node) in seen:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node._parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE) * np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


# --------------------------------------------------------------------------
# layer primitives
# --------------------------------------------------------------------------


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weights + bias`` for a 2-D batch."""
    if x.data.ndim != 2 or weights.data.ndim != 2 or bias.data.ndim != 1:
        raise ConfigurationError("dense expects input B×I, weights I×O, bias O")
    if x.shape[1] != weights.shape[0] or weights.shape[1] != bias.shape[0]:
        raise ConfigurationError(
            f"dense shape mismatch: input {x.shape}, weights {weights.shape}, bias {bias.shape}"
        )
    xd, wd = x.data, weights.data

    def backward(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return Tensor(xd @ wd + bias.data, _parents=(x, weights, bias), _backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ConfigurationError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        return g, g

    return Tensor(a.data + b.data, _parents=(a, b), _backward=backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return Tensor(out, _parents=(x,), _backward=backward)


def embedding(table: Tensor, indices: Sequence[int] | np.ndarray) -> Tensor:
    """Gather rows of ``table``; the backward pass scatter-adds into them."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise InputError(f"embedding index out of range [0, {n})")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return Tensor(table.data[idx], _parents=(table,), _backward=backward)


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid cross-correlation, stride 1: B×C×L with F×C×K gives B×F×(L−K+1)."""
    B, C, L = x.shape
    F, Ck, K = kernels.shape
    if Ck != C or bias.shape != (F,):
        raise ConfigurationError(f"conv1d channel mismatch: input {x.shape}, kernels {kernels.shape}")
    if K > L:
        raise ConfigurationError(f"conv1d kernel {K} longer than input {L}")
    Lo = L - K + 1
    windows = np.lib.stride_tricks.sliding_window_view(x.data, K, axis=2)  # B×C×Lo×K
    kd = kernels.data
    out = np.einsum("bclk,fck->bfl", windows, kd, optimize=True) + bias.data[None, :, None]

    def backward(g):
        gk = np.einsum("bfl,bclk->fck", g, windows, optimize=True)
        gx = np.zeros_like(x.data)
        for k in range(K):
            gx[:, :, k : k + Lo] += np.einsum("bfl,fc->bcl", g, kd[:, :, k], optimize=True)
        return gx, gk, g.sum(axis=(0, 2))

    return Tensor(out, _parents=(x, kernels, bias), _backward=backward)


def maxpool1d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping max over the last axis; a trailing remainder is dropped.

    Ties send the gradient to the lowest index in the window.
    """
    if window < 1:
        raise ConfigurationError("maxpool window must be >= 1")
    B, C, L = x.shape
    Lo = L // window
    blocks = x.data[:, :, : Lo * window].reshape(B, C, Lo, window)
    arg = blocks.argmax(axis=3)  # numpy returns the first maximum
    out = np.take_along_axis(blocks, arg[..., None], axis=3)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=3)
        gx = np.zeros_like(x.data)
        gx[:, :, : Lo * window] = gb.reshape(B, C, Lo * window)
        return (gx,)

    return Tensor(out, _parents=(x,), _backward=backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape

    def backward(g):
        return (g.reshape(src),)

    return Tensor(x.data.reshape(tuple(shape)), _parents=(x,), _backward=backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (g * np.ones_like(x.data),)

    return Tensor(np.sum(x.data), _parents=(x,), _backward=backward)


def sigmoid(z: np.ndarray | float) -> np.ndarray:
    """Numerically stable logistic function (plain numpy, no graph)."""
    z = np.asarray(z, dtype=DTYPE)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def _check_one_hot(labels: np.ndarray) -> None:
    if not (np.all((labels == 0.0) | (labels == 1.0)) and np.all(labels.sum(axis=1) == 1.0)):
        raise InputError("labels must be one-hot rows")


def one_hot(classes: Sequence[int] | np.ndarray, num_classes: int) -> np.ndarray:
    idx = np.asarray(classes, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= num_classes):
        raise InputError(f"class id out of range [0, {num_classes})")
    out = np.zeros((idx.size, num_classes), dtype=DTYPE)
    out[np.arange(idx.size), idx] = 1.0
    return out


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Batch-mean categorical cross-entropy; ``labels`` are one-hot rows."""
    labels = np.asarray(labels, dtype=DTYPE)
    if labels.shape != logits.shape:
        raise InputError(f"label shape {labels.shape} != logits shape {logits.shape}")
    _check_one_hot(labels)
    B = logits.shape[0]
    logp = log_softmax(logits.data)
    loss = -(labels * logp).sum() / B

    def backward(g):
        return (g * (np.exp(logp) - labels) / B,)

    return Tensor(loss, _parents=(logits,), _backward=backward)


def binary_cross_entropy(logit: float, label: int) -> tuple[float, float]:
    """Scalar BCE of ``sigmoid(logit)`` against ``label``.

    Returns ``(loss, d loss / d logit)``. Evaluated as softplus so that
    saturated logits never hit ``log(0)``.
    """
    if label not in (0, 1):
        raise InputError("binary label must be 0 or 1")
    z = float(logit)
    loss = np.logaddexp(0.0, z) - label * z
    return float(loss), float(sigmoid(z) - label)


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Batch-mean of ``binary_cross_entropy`` over a B×1 logit column."""
    y = np.asarray(labels, dtype=DTYPE).reshape(logits.shape)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise InputError("binary labels must be 0 or 1")
    z = logits.data
    n = z.size
    loss = (np.logaddexp(0.0, z) - y * z).sum() / n

    def backward(g):
        return (g * (sigmoid(z) - y) / n,)

    return Tensor(loss, _parents=(logits,), _backward=backward)


# --------------------------------------------------------------------------
# parameters and optimisation
# --------------------------------------------------------------------------


class ParamSet(OrderedDict):
    """Ordered ``name -> Tensor`` map of the learnable weights of one graph."""

    def zero_grad(self) -> None:
        for t in self.values():
            t.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.items()}

    def copy(self) -> "ParamSet":
        return ParamSet((k, parameter(t.data.copy())) for k, t in self.items())

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.reshape(-1) for t in self.values()])


def init_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return parameter(rng.uniform(-bound, bound, size=tuple(shape)))


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class MissingGradientError(RuntimeError):
    pass


def adam_step(params: ParamSet, state: AdamState, names: Iterable[str] | None = None) -> ParamSet:
    """Bias-corrected Adam update in place, then zero the gradients.

    A parameter whose gradient was never populated is an error: every
    update must follow a backward pass that reached all of ``params``.
    """
    keys = list(params) if names is None else list(names)
    for k in keys:
        if params[k].grad is None:
            raise MissingGradientError(f"no gradient for parameter {k!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    step = state.learning_rate / (1.0 - b1**t)
    bc2 = 1.0 - b2**t
    for k in keys:
        p = params[k]
        g = p.grad
        if k not in state.m:
            state.m[k] = np.zeros_like(p.data)
            state.v[k] = np.zeros_like(p.data)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= step * m / (np.sqrt(v / bc2) + state.epsilon)
        p.zero_grad()
    return params


# --------------------------------------------------------------------------
# verification
# --------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_parameter: str
    checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def finite_difference_check(
    forward: Callable[[], Tensor],
    params: ParamSet,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    floor: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of a scalar ``forward()`` to central differences.

    ``forward`` must rebuild the graph from the current contents of
    ``params`` on every call. With ``max_entries`` set, that many entries per
    parameter are sampled with ``rng`` instead of sweeping all of them.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``, so gradients far
    below ``floor`` are judged on absolute error instead.
    """
    params.zero_grad()
    forward().backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}
    params.zero_grad()
    rng = rng or np.random.default_rng(0)

    worst, worst_name, count = 0.0, "", 0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idxs = rng.choice(flat.size, size=max_entries, replace=False)
        a_flat = analytic[name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            fp = float(forward().data)
            flat[i] = orig - step
            fm = float(forward().data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            a = a_flat[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            count += 1
            if err > worst:
                worst, worst_name = err, name
    return GradCheckReport(worst, worst_name, count, tolerance)
