"""Random small tanh networks for gradient checking."""

import numpy as np

from mtsc import nn
from mtsc.nn import Tensor


def random_network(gen: np.random.Generator):
    """Return ``(f, theta)``: a scalar loss of a flat parameter vector.

    The network has 1-3 dense layers with widths <= 8 and tanh between
    layers; the loss is chosen among MSE, cross-entropy and a sum of
    squares so every primitive used by the models is exercised.
    """
    depth = int(gen.integers(1, 4))
    dims = [int(d) for d in gen.integers(1, 9, size=depth + 1)]
    n = int(gen.integers(1, 5))
    x = gen.standard_normal((n, dims[0]))
    shapes = []
    for a, b in zip(dims[:-1], dims[1:]):
        shapes += [(b, a), (b,)]
    sizes = [int(np.prod(s)) for s in shapes]
    theta = gen.standard_normal(sum(sizes)) * 0.7
    kind = ["mse", "ce", "sq"][int(gen.integers(0, 3))]
    target = gen.standard_normal((n, dims[-1]))
    labels = gen.integers(0, dims[-1], size=n)

    def f(t: Tensor) -> Tensor:
        h = Tensor(x)
        off = 0
        for i in range(depth):
            (wsh, bsh), (ws, bs) = shapes[2 * i : 2 * i + 2], sizes[2 * i : 2 * i + 2]
            W = t[off : off + ws].reshape(wsh)
            off += ws
            b = t[off : off + bs]
            off += bs
            h = nn.linear(h, W, b)
            if i < depth - 1:
                h = nn.tanh(h)
        if kind == "mse":
            return nn.mse_loss(h, target)
        if kind == "ce":
            return nn.cross_entropy_loss(h, labels)
        return nn.tsum(nn.mul(h, h))

    return f, theta
