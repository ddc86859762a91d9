"""Adam with bias correction.

Moments are stored float32 so a checkpoint round-trip is lossless; the
update arithmetic runs in float64 but always starts from the stored
float32 values, which keeps an interrupted-and-resumed run bit-identical
to an uninterrupted one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .net import NetParams


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam_state(params: NetParams) -> AdamState:
    return AdamState(
        m=[np.zeros_like(t) for t in params.tensors()],
        v=[np.zeros_like(t) for t in params.tensors()],
    )


def adam_step(params: NetParams, grads: list[np.ndarray], state: AdamState):
    """One optimizer step; t increments first, then bias-corrected update.

    Returns (params, state) with fresh tensors; inputs are not mutated.
    """
    tensors = params.tensors()
    if len(grads) != len(tensors):
        raise ValueError(f"expected {len(tensors)} gradient tensors, got {len(grads)}")
    for g, p in zip(grads, tensors):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")

    t = state.t + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(tensors, grads, state.m, state.v):
        g64 = g.astype(np.float64)
        m32 = (state.beta1 * m.astype(np.float64) + (1.0 - state.beta1) * g64).astype(np.float32)
        v32 = (state.beta2 * v.astype(np.float64) + (1.0 - state.beta2) * g64 * g64).astype(np.float32)
        m_hat = m32.astype(np.float64) / bc1
        v_hat = v32.astype(np.float64) / bc2
        step = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_p.append((p.astype(np.float64) - step).astype(np.float32))
        new_m.append(m32)
        new_v.append(v32)

    return NetParams.from_tensors(new_p), AdamState(
        m=new_m, v=new_v, t=t, lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps
    )
