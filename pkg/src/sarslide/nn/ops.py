"""Layer primitives on NHWC arrays. Every op works in whatever float dtype it is given.

Matrix products run per sample through stacked ``matmul`` so a sample's
result does not depend on what else is in the batch.
"""
from __future__ import annotations

import numpy as np

PROB_CLAMP = 1e-7


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad):
    return np.where(x > 0, grad, 0).astype(grad.dtype)


def softmax(logits):
    """Row-wise softmax over the last axis with max-shift."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def scc_loss(probs, labels):
    """Sparse categorical cross-entropy.

    Returns ``(loss, grad_logits)`` where the gradient is that of the fused
    softmax + cross-entropy with respect to the pre-softmax logits.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    n, k = probs.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    labels = labels.astype(np.intp)
    picked = np.clip(probs[np.arange(n), labels], PROB_CLAMP, 1.0)
    loss = float(-np.mean(np.log(picked.astype(np.float64))))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    return loss, grad / n


def _im2col(x):
    """(n, h, w, c) -> (n, h*w, 9*c) with zero 'same' padding; column order (dy, dx, c)."""
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.concatenate([xp[:, dy:dy + h, dx:dx + w, :] for dy in range(3) for dx in range(3)], axis=-1)
    return cols.reshape(n, h * w, 9 * c)


def _check_conv(x, weights, bias):
    if x.ndim != 4:
        raise ValueError(f"conv input must be (n, h, w, c), got {x.shape}")
    if weights.shape[:2] != (3, 3) or weights.ndim != 4 or weights.shape[2] != x.shape[3]:
        raise ValueError(f"weights {weights.shape} do not fit input channels {x.shape[3]}")
    if bias is not None and bias.shape != (weights.shape[3],):
        raise ValueError(f"bias {bias.shape} does not match {weights.shape[3]} filters")


def conv3x3_forward(x, weights, bias):
    """Same-padded 3x3 cross-correlation. weights: (3, 3, c_in, c_out)."""
    _check_conv(x, weights, bias)
    n, h, w, _ = x.shape
    c_out = weights.shape[3]
    y = _im2col(x) @ weights.reshape(-1, c_out)
    y += bias
    return y.reshape(n, h, w, c_out)


def conv3x3_backward(x, weights, grad):
    """Returns ``(grad_x, grad_w, grad_b)``."""
    _check_conv(x, weights, None)
    n, h, w, c_in = x.shape
    c_out = weights.shape[3]
    if grad.shape != (n, h, w, c_out):
        raise ValueError(f"upstream grad {grad.shape} does not match output {(n, h, w, c_out)}")
    g = grad.reshape(n * h * w, c_out)
    cols = _im2col(x).reshape(n * h * w, 9 * c_in)
    grad_w = (cols.T @ g).reshape(weights.shape)
    grad_b = g.sum(axis=0)
    gcols = (grad.reshape(n, h * w, c_out) @ weights.reshape(-1, c_out).T).reshape(n, h, w, 3, 3, c_in)
    gxp = np.zeros((n, h + 2, w + 2, c_in), dtype=grad.dtype)
    for dy in range(3):
        for dx in range(3):
            gxp[:, dy:dy + h, dx:dx + w, :] += gcols[:, :, :, dy, dx, :]
    return gxp[:, 1:-1, 1:-1, :], grad_w, grad_b


def maxpool2x2(x):
    """2x2/stride-2 max pool. Returns ``(y, argmax)`` where argmax indexes the
    window in row-major order (0..3); ties go to the first occurrence."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool needs even spatial dims, got {h}x{w}")
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, idx


def maxpool2x2_backward(grad, argmax):
    n, h2, w2, c = grad.shape
    win = np.zeros((n, h2, w2, c, 4), dtype=grad.dtype)
    np.put_along_axis(win, argmax[..., None], grad[..., None], axis=-1)
    return win.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)


def dropout_mask(shape, rate, rng, dtype=np.float32):
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if rate == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return (keep / (1.0 - rate)).astype(dtype)


def dropout(x, rate, training, rng=None):
    """Returns ``(y, mask)``; mask is None in inference mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return x, None
    mask = dropout_mask(x.shape, rate, rng, x.dtype)
    return x * mask, mask


def dense_forward(x, weights, bias):
    """``y = x W + b`` for x of shape (n, d), W (d, u)."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ValueError(f"dense input {x.shape} does not fit weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ValueError(f"bias {bias.shape} does not match {weights.shape[1]} units")
    return (x[:, None, :] @ weights)[:, 0, :] + bias


def dense_backward(x, weights, grad):
    """Returns ``(grad_x, grad_w, grad_b)``."""
    if grad.shape != (x.shape[0], weights.shape[1]):
        raise ValueError(f"upstream grad {grad.shape} does not match output {(x.shape[0], weights.shape[1])}")
    grad_x = (grad[:, None, :] @ weights.T)[:, 0, :]
    return grad_x, x.T @ grad, grad.sum(axis=0)
