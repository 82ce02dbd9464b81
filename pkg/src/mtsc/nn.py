"""Small reverse-mode autodiff engine over float64 numpy arrays.

The tape is built implicitly while operations run: each result keeps a
reference to its parents and a closure that maps the upstream gradient to
parent gradients.  ``Tensor.backward`` walks that graph once in reverse
topological order.  Gradients accumulate into ``.grad`` on leaf tensors until
``zero_grad`` is called.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .rng import RngHandle


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph traversal -------------------------------------------------

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        ``grad`` is the upstream gradient; it may only be omitted for scalars.
        """
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that is not attached to a graph")
        if grad is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() without an explicit gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.shape:
                raise ValueError(f"gradient shape {grad.shape} != tensor shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _result(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        ),
    )


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


# -- shape / reduction ----------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W.T + b`` as one node."""
    if x.data.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ValueError(
            f"dimension mismatch: input {x.shape} vs weight {W.shape} (expects n x {W.shape[1]})"
        )
    out = x.data @ W.data.T
    if b is None:
        return _result(out, (x, W), lambda g: (g @ W.data, g.T @ x.data))
    out += b.data
    return _result(
        out, (x, W, b), lambda g: (g @ W.data, g.T @ x.data, g.sum(axis=0))
    )


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(out, dtype=np.float64), (x,), back)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def getitem(x: Tensor, index) -> Tensor:
    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.asarray(x.data[index], dtype=np.float64), (x,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; ids is an integer array of any shape."""
    ids = np.asarray(ids)

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _result(table.data[ids], (table,), back)


def straight_through(x: Tensor, value: np.ndarray) -> Tensor:
    """Forward ``value``, backward identity: models additive perturbations
    (channel noise) that do not depend on ``x``."""
    value = np.asarray(value, dtype=np.float64)
    if value.shape != x.shape:
        raise ValueError(f"straight-through value shape {value.shape} != {x.shape}")
    return _result(value.copy(), (x,), lambda g: (g,))


# -- losses ---------------------------------------------------------------


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over rows, stabilized with log-sum-exp."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for {n} rows of logits")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(lse - z[rows, labels])

    def back(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (g * p / n,)

    return _result(np.asarray(loss), (logits,), back)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if target.shape != pred.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    return _result(
        np.asarray(np.mean(diff * diff)), (pred,), lambda g: (g * 2.0 * diff / diff.size,)
    )


# -- modules --------------------------------------------------------------


class Module:
    """Attribute-walking container for named tensors.

    Tensors, sub-modules and dicts of sub-modules found in ``vars(self)`` are
    enumerated in insertion order, which fixes parameter naming.
    """

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_tensors(name + ".")
            elif isinstance(value, dict):
                for k, v in value.items():
                    if isinstance(v, Module):
                        yield from v.named_tensors(f"{name}.{k}.")
                    elif isinstance(v, Tensor):
                        yield f"{name}.{k}", v

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        """Trainable tensors only."""
        return {n: t for n, t in self.named_tensors(prefix) if t.requires_grad}

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.named_tensors(prefix)}

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "", strict: bool = True):
        own = dict(self.named_tensors(prefix))
        missing = [n for n in own if n not in state]
        if strict and missing:
            raise KeyError(f"missing tensors in state: {missing[:5]}")
        for name, t in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()

    def zero_grad(self):
        for _, t in self.named_tensors():
            t.grad = None


def _init_uniform(gen: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    """Glorot-uniform: keeps activation variance roughly constant through tanh layers."""
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-bound, bound, size=shape)


class DenseLayer(Module):
    def __init__(
        self,
        d_in: int,
        d_out: int,
        rng: RngHandle | None = None,
        frozen: bool = False,
    ):
        if rng is None:
            w = np.zeros((d_out, d_in))
        else:
            w = _init_uniform(rng.generator(), (d_out, d_in), d_in, d_out)
        self.W = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True)
        self._frozen = False
        self.frozen = frozen

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, value: bool):
        self._frozen = bool(value)
        self.W.requires_grad = not self._frozen
        self.b.requires_grad = not self._frozen
        if self._frozen:
            self.W.grad = None
            self.b.grad = None


class LoraAdapter(Module):
    """Low-rank residual ``(alpha / r) * B @ A`` for a dense layer.

    B starts at zero so a fresh adapter leaves its layer untouched.
    """

    def __init__(self, d_in: int, d_out: int, rank: int = 4, alpha: float = 8.0, rng: RngHandle | None = None):
        if rank < 1 or rank > min(d_in, d_out):
            raise ValueError(f"LoRA rank {rank} must be in [1, {min(d_in, d_out)}]")
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        a = np.zeros((rank, d_in)) if rng is None else _init_uniform(rng.generator(), (rank, d_in), d_in, rank)
        self.A = Tensor(a, requires_grad=True)
        self.B = Tensor(np.zeros((d_out, rank)), requires_grad=True)
        self._alpha = float(alpha)

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def alpha(self) -> float:
        return self._alpha

    @property
    def scaling(self) -> float:
        return self._alpha / self.rank


def dense_forward(x: Tensor, layer: DenseLayer) -> Tensor:
    return linear(as_tensor(x), layer.W, layer.b)


def lora_forward(x: Tensor, layer: DenseLayer, adapter: LoraAdapter | None) -> Tensor:
    x = as_tensor(x)
    y = dense_forward(x, layer)
    if adapter is None:
        return y
    if adapter.A.shape[1] != layer.d_in or adapter.B.shape[0] != layer.d_out:
        raise ValueError(
            f"adapter A{adapter.A.shape}/B{adapter.B.shape} does not fit layer "
            f"{layer.d_out}x{layer.d_in}"
        )
    if adapter.A.shape[0] != adapter.B.shape[1]:
        raise ValueError(f"rank mismatch: A{adapter.A.shape} vs B{adapter.B.shape}")
    low = linear(linear(x, adapter.A), adapter.B)
    return add(y, mul(low, adapter.scaling))


# -- optimizers -----------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")


class Optimizer:
    """SGD or Adam over a name -> Tensor mapping; state is keyed by name."""

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, params: dict[str, Tensor]):
        cfg = self.config
        for name, p in params.items():
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in tensor {name!r}")
            if cfg.kind == "sgd":
                p.data = p.data - cfg.learning_rate * g
                continue
            t = self.t.get(name, 0) + 1
            m = cfg.beta1 * self.m.get(name, 0.0) + (1.0 - cfg.beta1) * g
            v = cfg.beta2 * self.v.get(name, 0.0) + (1.0 - cfg.beta2) * g * g
            self.t[name], self.m[name], self.v[name] = t, m, v
            m_hat = m / (1.0 - cfg.beta1**t)
            v_hat = v / (1.0 - cfg.beta2**t)
            p.data = p.data - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


def zero_grad(params: Iterable[Tensor] | dict[str, Tensor]):
    for p in params.values() if isinstance(params, dict) else params:
        p.grad = None


# -- verification ---------------------------------------------------------


class NonDifferentiableError(ValueError):
    """Raised by grad_check when the probe straddles a kink."""

    def __init__(self, coords):
        self.coords = coords
        super().__init__(f"one-sided differences disagree at coordinates {coords[:5]}")


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Raises ``NonDifferentiableError`` when forward and backward one-sided
    slopes disagree by far more than smooth curvature allows.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    xt = Tensor(x0, requires_grad=True)
    out = f(xt)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    f0 = out.item()
    out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x0)
    if not (np.isfinite(f0) and np.all(np.isfinite(analytic))):
        raise FloatingPointError("non-finite value in analytic pass")

    numeric = np.empty_like(x0)
    kinks = []
    flat = x0.reshape(-1)
    for i in range(flat.size):
        probe = flat.copy()
        probe[i] += eps
        fp = f(Tensor(probe.reshape(x0.shape))).item()
        probe[i] -= 2 * eps
        fm = f(Tensor(probe.reshape(x0.shape))).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite value probing coordinate {i}")
        numeric.reshape(-1)[i] = (fp - fm) / (2 * eps)
        fwd, bwd = (fp - f0) / eps, (f0 - fm) / eps
        if abs(fwd - bwd) > 1e3 * eps + math.sqrt(eps) * (1.0 + abs(fwd) + abs(bwd)):
            kinks.append(i)
    if kinks:
        raise NonDifferentiableError(kinks)
    # floor the denominator at the central-difference roundoff level so that
    # near-zero components do not report pure cancellation noise as error
    floor = max(1e-8, 1e4 * np.finfo(np.float64).eps * (1.0 + abs(f0)) / eps)
    denom = np.maximum(floor, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if x0.size else 0.0
