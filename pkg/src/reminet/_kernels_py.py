"""Pure-numpy implementations of the fused hot kernels.

Used when the compiled ``_kernels`` extension is unavailable, and as the
reference the compiled versions are benchmarked and tested against.
"""

import numpy as np


def pair_message_forward(edge_pre, node_pre):
    """Average pair messages over all other nodes.

    ``edge_pre`` has shape ``(n*n, h)`` with row ``i*n + j`` holding the edge
    contribution for the ordered pair (i, j); ``node_pre`` has shape ``(n, h)``.
    Returns ``(out, a, b)`` where ``a[i, j] = tanh(edge_pre[i, j] + node_pre[i])``
    and ``b[i, j] = tanh(edge_pre[i, j] + node_pre[j])``; both caches are kept
    for the backward pass.
    """
    n, h = node_pre.shape
    ep = edge_pre.reshape(n, n, h)
    a = np.tanh(ep + node_pre[:, None, :])
    b = np.tanh(ep + node_pre[None, :, :])
    prod = a * b
    idx = np.arange(n)
    prod[idx, idx, :] = 0.0
    if n > 1:
        out = prod.sum(axis=1) / (n - 1)
    else:
        out = np.zeros((n, h))
    return out, a.reshape(n * n, h), b.reshape(n * n, h)


def pair_message_backward(grad_out, a, b):
    n, h = grad_out.shape
    a = a.reshape(n, n, h)
    b = b.reshape(n, n, h)
    if n < 2:
        return np.zeros((n * n, h)), np.zeros((n, h))
    g = grad_out[:, None, :] / (n - 1)
    da = g * b * (1.0 - a * a)
    db = g * a * (1.0 - b * b)
    idx = np.arange(n)
    da[idx, idx, :] = 0.0
    db[idx, idx, :] = 0.0
    grad_edge = (da + db).reshape(n * n, h)
    grad_node = da.sum(axis=1) + db.sum(axis=0)
    return grad_edge, grad_node


def pairwise_l1_forward(x):
    """``out[i, j] = sum_k |x[i, k] - x[j, k]|``."""
    diff = x[:, None, :] - x[None, :, :]
    return np.abs(diff).sum(axis=2)


def pairwise_l1_backward(grad_out, x):
    sign = np.sign(x[:, None, :] - x[None, :, :])
    g = (grad_out + grad_out.T)[:, :, None] * sign
    return g.sum(axis=1)
