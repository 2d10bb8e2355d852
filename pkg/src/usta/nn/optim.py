"""Xavier initialisation and the Adam optimiser."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


def fans(shape):
    if len(shape) < 2:
        raise ValueError(f"cannot derive fan-in/fan-out from shape {shape}")
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    return shape[1] * receptive, shape[0] * receptive


def xavier_init(shape, rng: np.random.Generator, name=None) -> Tensor:
    """Glorot-uniform draw on +-sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = fans(tuple(shape))
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class OptimizerStateError(RuntimeError):
    pass


def adam_step(params, state: AdamState):
    """One bias-corrected Adam update; moments are keyed by parameter identity."""
    params = list(params)
    missing = [p.name or repr(p) for p in params if p.grad is None]
    if missing:
        raise OptimizerStateError(f"no gradient for {len(missing)} parameter(s): {missing[:3]}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p in params:
        key = id(p)
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        v = state.v[key]
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def zero_grad(params):
    for p in params:
        p.grad = None
