"""Adam with bias correction and the warmup / inverse-sqrt decay schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericError, Parameter


@dataclass
class AdamState:
    """Per-parameter moment estimates; ``step`` counts completed updates."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_parameter(
        cls,
        param: Parameter,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> "AdamState":
        return cls(
            m=np.zeros_like(param.data),
            v=np.zeros_like(param.data),
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(param: Parameter, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update in place; the grad is left intact."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    g = param.grad
    if g is None:
        raise ValueError(f"parameter {param.name!r} has no gradient")
    if g.shape != param.data.shape:
        raise ValueError(
            f"gradient shape {g.shape} does not match parameter shape "
            f"{param.data.shape} for {param.name!r}"
        )
    state.step += 1
    t = state.step
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1**t)
    v_hat = state.v / (1.0 - state.beta2**t)
    update = lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    if not np.isfinite(update.sum(dtype=np.float64)):
        raise NumericError(f"non-finite Adam update for {param.name!r} at step {t}")
    param.data = param.data - update.astype(param.data.dtype, copy=False)


@dataclass
class Adam:
    """Drives one AdamState per parameter of a model."""

    params: list[Parameter]
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    states: dict[str, AdamState] = field(init=False)

    def __post_init__(self) -> None:
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        self.states = {
            p.name: AdamState.for_parameter(p, self.beta1, self.beta2, self.epsilon)
            for p in self.params
        }

    def step(self, lr: float) -> None:
        for p in self.params:
            if p.grad is None:  # parameter not touched by this loss
                continue
            adam_step(p, self.states[p.name], lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def lr_at(step: int, base_lr: float, warmup: int) -> float:
    """Linear warmup to ``base_lr`` then inverse square-root decay."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    if warmup < 1:
        raise ValueError(f"warmup must be >= 1, got {warmup}")
    if step <= warmup:
        return base_lr * step / warmup
    return base_lr * math.sqrt(warmup / step)
