"""Minimal deterministic differentiable-layer toolkit.

Dense float64 tensors only; every layer ships a hand-derived backward
pass, and :func:`grad_check` compares those against central finite
differences.  There is no general autodiff graph: callers chain the
``*_backward`` functions explicitly, passing the same inputs the forward
pass saw.  All reductions run in a fixed order, so identical inputs give
bitwise-identical outputs across runs.

Shape conventions
-----------------
conv1d          x: (C_in, L)        w: (C_out, C_in, K)   -> (C_out, L-K+1)
maxpool1d       x: (C, L)                                  -> (C, (L-window)//stride + 1)
relu            elementwise, subgradient 0 at the kink
fully_connected x: (d_in,) or (rows, d_in), w: (d_out, d_in)
graphsage_layer h: (V, d_in)        w: (d_out, 2*d_in)     -> (V, d_out)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geograph import MandiGraph


class ShapeError(ValueError):
    pass


def tensor(data, shape=None) -> np.ndarray:
    """Validated dense tensor: float64, C-order, all values finite."""
    arr = np.array(data, dtype=np.float64, order="C")
    if shape is not None:
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor rejects NaN/Inf values")
    return arr


@dataclass
class Param:
    """A trainable tensor and its gradient accumulator (same shape)."""

    value: np.ndarray
    grad: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        self.value = tensor(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ShapeError(f"grad shape {self.grad.shape} != value shape {self.value.shape}")


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# conv1d (cross-correlation, stride 1, no padding)

def _conv_windows(x: np.ndarray, kernel: int) -> np.ndarray:
    # (C_in, L) -> (C_in, L-K+1, K) view
    return np.lib.stride_tricks.sliding_window_view(x, kernel, axis=1)


def conv1d(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or weights.ndim != 3 or bias.ndim != 1:
        raise ShapeError(f"conv1d expects x(C_in,L), w(C_out,C_in,K), b(C_out); got {x.shape}, {weights.shape}, {bias.shape}")
    c_out, c_in, k = weights.shape
    if x.shape[0] != c_in:
        raise ShapeError(f"conv1d channel mismatch: input has {x.shape[0]} channels, weights expect {c_in}")
    if bias.shape[0] != c_out:
        raise ShapeError(f"conv1d bias length {bias.shape[0]} != {c_out} output channels")
    if x.shape[1] < k:
        raise ShapeError(f"conv1d input length {x.shape[1]} shorter than kernel {k}")
    windows = _conv_windows(x, k)                       # (C_in, L_out, K)
    out = np.einsum("ilk,oik->ol", windows, weights)
    out += bias[:, None]
    return out


def conv1d_backward(x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray,
                    need_input_grad: bool = True):
    """Gradients (gx, gw, gb) of a scalar loss through conv1d."""
    c_out, c_in, k = weights.shape
    windows = _conv_windows(x, k)
    gw = np.einsum("ol,ilk->oik", grad_out, windows)
    gb = grad_out.sum(axis=1)
    gx = None
    if need_input_grad:
        padded = np.pad(grad_out, ((0, 0), (k - 1, k - 1)))
        gwin = _conv_windows(padded, k)                 # (C_out, L, K)
        gx = np.einsum("olk,oik->il", gwin, weights[:, :, ::-1])
    return gx, gw, gb


# ---------------------------------------------------------------------------
# maxpool1d

def _pool_starts(length: int, window: int, stride: int) -> np.ndarray:
    return np.arange(0, length - window + 1, stride)


def maxpool1d(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    if x.ndim != 2:
        raise ShapeError(f"maxpool1d expects x(C,L), got {x.shape}")
    if window > x.shape[1]:
        raise ShapeError(f"pool window {window} exceeds input length {x.shape[1]}")
    if window < 1 or stride < 1:
        raise ShapeError("window and stride must be >= 1")
    views = np.lib.stride_tricks.sliding_window_view(x, window, axis=1)[:, ::stride]
    return views.max(axis=2)


def maxpool1d_backward(x: np.ndarray, window: int, stride: int, grad_out: np.ndarray) -> np.ndarray:
    """Routes each window's gradient to its first maximum position."""
    views = np.lib.stride_tricks.sliding_window_view(x, window, axis=1)[:, ::stride]
    arg = views.argmax(axis=2)                          # first max on ties
    starts = _pool_starts(x.shape[1], window, stride)
    gx = np.zeros_like(x)
    rows = np.arange(x.shape[0])[:, None]
    # overlapping windows (stride < window) must accumulate
    np.add.at(gx, (np.broadcast_to(rows, arg.shape), starts[None, :] + arg), grad_out)
    return gx


# ---------------------------------------------------------------------------
# relu

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


# ---------------------------------------------------------------------------
# fully connected

def fully_connected(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """W x + b for a single vector, or row-wise for a (rows, d_in) batch."""
    if weights.ndim != 2 or bias.ndim != 1 or weights.shape[0] != bias.shape[0]:
        raise ShapeError(f"fully_connected expects w(d_out,d_in), b(d_out); got {weights.shape}, {bias.shape}")
    if x.shape[-1] != weights.shape[1]:
        raise ShapeError(f"fully_connected input dim {x.shape[-1]} != weight d_in {weights.shape[1]}")
    return x @ weights.T + bias


def fully_connected_backward(x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray):
    gx = grad_out @ weights
    if x.ndim == 1:
        gw = np.outer(grad_out, x)
        gb = grad_out.copy()
    else:
        gw = grad_out.T @ x
        gb = grad_out.sum(axis=0)
    return gx, gw, gb


# ---------------------------------------------------------------------------
# GraphSAGE (mean aggregator, full neighborhood)

def graphsage_layer(node_feats: np.ndarray, graph: MandiGraph, weights: np.ndarray,
                    bias: np.ndarray) -> np.ndarray:
    """out_v = W . concat(h_v, mean of neighbor h) + b; zero aggregate if isolated."""
    v, d_in = node_feats.shape
    if v != graph.node_count:
        raise ShapeError(f"{v} feature rows for a graph with {graph.node_count} nodes")
    if weights.ndim != 2 or weights.shape[1] != 2 * d_in:
        raise ShapeError(f"graphsage weights must be (d_out, {2 * d_in}), got {weights.shape}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"graphsage bias {bias.shape} != (d_out,)")
    agg = graph.mean_aggregation_matrix() @ node_feats
    concat = np.concatenate([node_feats, agg], axis=1)
    return concat @ weights.T + bias


def graphsage_backward(node_feats: np.ndarray, graph: MandiGraph, weights: np.ndarray,
                       grad_out: np.ndarray):
    d_in = node_feats.shape[1]
    a = graph.mean_aggregation_matrix()
    concat = np.concatenate([node_feats, a @ node_feats], axis=1)
    gw = grad_out.T @ concat
    gb = grad_out.sum(axis=0)
    g_concat = grad_out @ weights
    gx = g_concat[:, :d_in] + a.T @ g_concat[:, d_in:]
    return gx, gw, gb


# ---------------------------------------------------------------------------
# loss and update

def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape or pred.ndim != 1:
        raise ShapeError(f"mse_loss expects equal 1-D shapes, got {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ShapeError("mse_loss on empty vectors")
    diff = pred - target
    return float(diff @ diff / pred.size)


def mse_loss_backward(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return 2.0 * (pred - target) / pred.size


def sgd_step(params: dict[str, Param], learning_rate: float) -> None:
    """Plain gradient descent: p -= lr * grad, then gradients are zeroed."""
    if learning_rate <= 0:
        raise ValueError(f"learning_rate must be positive, got {learning_rate}")
    for p in params.values():
        p.value -= learning_rate * p.grad
        p.grad[...] = 0.0


# ---------------------------------------------------------------------------
# finite-difference oracle

def grad_check(forward, backward, inputs: list[np.ndarray], step: float = 1e-5,
               seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``forward(*inputs)`` returns an array; ``backward(*inputs, grad_out)``
    returns one gradient per input (None to skip an input).  The output is
    scalarized with a fixed random projection so a single backward call
    yields all analytic gradients.  Relative error is per input tensor:
    max |a - n| / max(max|a|, max|n|, 1e-12).
    """
    if not 1e-5 <= step <= 1e-3:
        raise ValueError(f"step {step} outside [1e-5, 1e-3]")
    rng = np.random.default_rng(seed)
    out = forward(*inputs)
    if not np.all(np.isfinite(out)):
        raise ValueError("forward produced non-finite values")
    proj = rng.standard_normal(out.shape)

    def scalar(*args) -> float:
        return float(np.sum(forward(*args) * proj))

    analytic = backward(*inputs, proj)
    worst = 0.0
    for which, grad_a in enumerate(analytic):
        if grad_a is None:
            continue
        base = inputs[which]
        grad_n = np.zeros_like(base)
        flat = base.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi = scalar(*inputs)
            flat[j] = orig - step
            lo = scalar(*inputs)
            flat[j] = orig
            grad_n.reshape(-1)[j] = (hi - lo) / (2.0 * step)
        if not (np.all(np.isfinite(grad_a)) and np.all(np.isfinite(grad_n))):
            raise ValueError("non-finite gradient encountered")
        denom = max(np.abs(grad_a).max(), np.abs(grad_n).max(), 1e-12)
        worst = max(worst, float(np.abs(grad_a - grad_n).max() / denom))
    return worst
