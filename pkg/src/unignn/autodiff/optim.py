"""Adam with L2 weight decay folded into the gradient."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Sequence[Tensor], state: AdamState, lr: float,
              weight_decay: float | Sequence[float] = 0.0) -> None:
    """One bias-corrected Adam update, in place.

    ``weight_decay`` is either one coefficient or one per parameter; it is
    applied as ``grad += wd * param`` before the moment update. Moments are
    keyed by position in ``params``, so pass the same ordering every step.
    """
    if np.isscalar(weight_decay):
        weight_decay = [float(weight_decay)] * len(params)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, (p, wd) in enumerate(zip(params, weight_decay)):
        g = p.grad
        if wd:
            g = g + wd * p.data
        if k not in state.m:
            state.m[k] = np.zeros_like(p.data)
            state.v[k] = np.zeros_like(p.data)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
