"""Independent reference implementations used only by the tests.

The explicit Hessian is assembled by float64 autograd in torch with the ReLU
pattern frozen, so it shares no code with the finite-difference HVP under test.
"""

import numpy as np
import torch

from firereinit.nn import forward, squared_targets


def _torch_loss_fn(params, batch, labels, loss_kind, gates=None):
    x = torch.as_tensor(np.asarray(batch, dtype=np.float64))
    if gates is None:
        gates = forward(params, batch)[1].gates
    masks = [None if g is None else torch.as_tensor(np.asarray(g, dtype=np.float64)) for g in gates]
    shapes = []
    for lw in params.layers:
        shapes.append(lw.weight.shape)
        shapes.append(None if lw.bias is None else lw.bias.shape)
    n = x.shape[0]

    if loss_kind == "cross_entropy":
        y = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    else:
        y = None

    def f(theta):
        h = x
        pos = 0
        for i, lw in enumerate(params.layers):
            wsz = int(np.prod(lw.weight.shape))
            w = theta[pos:pos + wsz].reshape(lw.weight.shape)
            pos += wsz
            a = h @ w.T
            if lw.bias is not None:
                b = theta[pos:pos + lw.bias.size]
                pos += lw.bias.size
                a = a + b
            h = a * masks[i] if masks[i] is not None else a
        if loss_kind == "cross_entropy":
            return torch.nn.functional.cross_entropy(h, y, reduction="mean")
        t = torch.as_tensor(squared_targets(labels, n, h.shape[1]))
        return 0.5 * ((h - t) ** 2).sum() / n

    return f


def explicit_hessian(params, batch, labels, loss_kind, gates=None) -> np.ndarray:
    f = _torch_loss_fn(params, batch, labels, loss_kind, gates)
    theta = torch.as_tensor(params.to_vector())
    return torch.autograd.functional.hessian(f, theta).numpy()


def explicit_gradient(params, batch, labels, loss_kind) -> np.ndarray:
    f = _torch_loss_fn(params, batch, labels, loss_kind)
    theta = torch.as_tensor(params.to_vector()).clone().requires_grad_(True)
    f(theta).backward()
    return theta.grad.numpy()


def output_jacobian(params, batch, gates=None) -> np.ndarray:
    """d(vec logits)/d(theta) with gates frozen; rows are (sample, class) pairs."""
    x = torch.as_tensor(np.asarray(batch, dtype=np.float64))
    if gates is None:
        gates = forward(params, batch)[1].gates
    masks = [None if g is None else torch.as_tensor(np.asarray(g, dtype=np.float64)) for g in gates]

    def logits(theta):
        h = x
        pos = 0
        for i, lw in enumerate(params.layers):
            wsz = int(np.prod(lw.weight.shape))
            w = theta[pos:pos + wsz].reshape(lw.weight.shape)
            pos += wsz
            a = h @ w.T
            if lw.bias is not None:
                a = a + theta[pos:pos + lw.bias.size]
                pos += lw.bias.size
            h = a * masks[i] if masks[i] is not None else a
        return h.reshape(-1)

    theta = torch.as_tensor(params.to_vector())
    return torch.autograd.functional.jacobian(logits, theta).numpy()


def finite_difference_gradient(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)
