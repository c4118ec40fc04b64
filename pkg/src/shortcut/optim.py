"""AdamW with decoupled weight decay, plus an EMA shadow of the weights."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ContractError, ShapeError
from .net import Params


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.1

    @classmethod
    def zeros_like(cls, params: Params, **hyper) -> "AdamWState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
            **hyper,
        )


def adamw_step(
    state: AdamWState, params: Params, grads: Mapping[str, np.ndarray]
) -> tuple[AdamWState, Params]:
    """One bias-corrected Adam update with decoupled decay.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
    """
    missing = [k for k in params if k not in grads]
    if missing:
        raise ContractError(f"no gradient for parameters {missing}")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    lr, wd = state.lr, state.weight_decay
    new_m, new_v, new_p = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {k} has shape {g.shape}, parameter {p.shape}")
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_p[k] = (p - lr * update - lr * wd * p).astype(p.dtype, copy=False)
        new_m[k] = m.astype(p.dtype, copy=False)
        new_v[k] = v.astype(p.dtype, copy=False)
    new_state = AdamWState(new_m, new_v, step, lr, b1, b2, state.eps, wd)
    return new_state, new_p


@dataclass
class EmaState:
    shadow: dict[str, np.ndarray]
    ema_ratio: float = 0.999

    @classmethod
    def copy_of(cls, params: Params, ema_ratio: float = 0.999) -> "EmaState":
        return cls({k: v.copy() for k, v in params.items()}, ema_ratio)


def ema_update(ema: EmaState, params: Params) -> EmaState:
    r = ema.ema_ratio
    shadow = {}
    for k, s in ema.shadow.items():
        p = params[k]
        if p.shape != s.shape:
            raise ShapeError(f"ema_update: {k} shadow {s.shape} vs params {p.shape}")
        shadow[k] = (r * s + (1 - r) * p).astype(s.dtype, copy=False)
    return EmaState(shadow, r)


@dataclass
class TrainState:
    """Live parameters, optimizer moments, EMA shadow, and the update count."""

    params: Params
    opt: AdamWState
    ema: EmaState
    step: int = 0
    extras: dict = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        params: Params,
        lr: float = 1e-4,
        weight_decay: float = 0.1,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        ema_ratio: float = 0.999,
    ) -> "TrainState":
        opt = AdamWState.zeros_like(
            params, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay
        )
        return cls(params, opt, EmaState.copy_of(params, ema_ratio), 0)

    def apply_gradients(self, grads: Mapping[str, np.ndarray]) -> "TrainState":
        opt, params = adamw_step(self.opt, self.params, grads)
        ema = ema_update(self.ema, params)
        return TrainState(params, opt, ema, self.step + 1, self.extras)


def swap_in_ema(state: TrainState) -> Params:
    """Parameter set used for evaluation and bootstrap targets."""
    return state.ema.shadow
