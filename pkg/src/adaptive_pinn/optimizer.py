"""Adam with global-norm clipping and a slice-indexed learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net import MLP, ParamGrad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, mlp: MLP, beta1=0.9, beta2=0.999, epsilon=1e-8) -> "AdamState":
        n = mlp.n_params
        return cls(np.zeros(n), np.zeros(n), 0, beta1, beta2, epsilon)


def clip_gradient(grad: ParamGrad, max_norm: float) -> ParamGrad:
    """Rescale so the global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be > 0")
    norm = grad.norm()
    if norm > max_norm:
        return grad.scaled(max_norm / norm)
    return grad


def adam_step(mlp: MLP, grad: ParamGrad, state: AdamState, lr: float):
    """One bias-corrected Adam update.  Returns ``(new_mlp, new_state)``."""
    if lr <= 0:
        raise ValueError("learning rate must be > 0")
    g = grad.flat()
    if g.shape != state.m.shape:
        raise ValueError("gradient and optimizer state shapes differ")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    b1, b2 = state.beta1, state.beta2
    step = state.step_count + 1
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** step)
    v_hat = v / (1.0 - b2 ** step)
    theta = mlp.flat() - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return mlp.with_flat(theta), AdamState(m, v, step, b1, b2, state.epsilon)


@dataclass(frozen=True)
class LrSchedule:
    """Piecewise-constant rates: slice time s uses the first threshold >= s."""

    steps: tuple[tuple[float, float], ...]

    def __post_init__(self):
        steps = tuple((float(a), float(b)) for a, b in self.steps)
        object.__setattr__(self, "steps", steps)
        if not steps:
            raise ValueError("empty learning-rate schedule")
        thresholds = [a for a, _ in steps]
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("schedule thresholds must be strictly increasing")
        if any(r <= 0 for _, r in steps):
            raise ValueError("learning rates must be > 0")

    def to_list(self) -> list[list[float]]:
        return [list(s) for s in self.steps]


# 1e-3 for slices ending at .1/.2, then a drop at .3, .5, .7 and .9.
EXAMPLE1_SCHEDULE = LrSchedule(((0.2, 1e-3), (0.4, 5e-4), (0.6, 1e-4), (0.8, 5e-5), (1.0, 1e-5)))


def lr_for_slice(schedule: LrSchedule, slice_final_time: float, tol: float = 1e-9) -> float:
    if not schedule.steps:
        raise ValueError("empty learning-rate schedule")
    for threshold, rate in schedule.steps:
        if slice_final_time <= threshold + tol:
            return rate
    return schedule.steps[-1][1]
