"""Adam optimizer over named parameter tensors."""

from __future__ import annotations

import numpy as np

from .tensor import NumericError


class AdamState:
    """Per-parameter first/second moment buffers plus the shared step counter.

    Moments are zero-initialized on first sight of a parameter; the step
    counter increases by exactly one per ``adam_step``.
    """

    def __init__(self, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {}
        self.v = {}

    def state_arrays(self):
        """Flat view of moment buffers for checkpointing."""
        out = {}
        for name, buf in self.m.items():
            out["adam.m." + name] = buf
        for name, buf in self.v.items():
            out["adam.v." + name] = buf
        return out


def adam_step(named_params, state: AdamState):
    """Bias-corrected Adam update applied in place to each parameter's data.

    Parameters with no gradient buffer are skipped. A non-finite gradient
    raises ``NumericError`` naming the offending parameter.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in named_params:
        if p.grad is None:
            continue
        g = p.grad
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_grad_norm(named_params, max_norm):
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    grads = []
    for _, p in named_params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
            grads.append(p.grad)
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm
