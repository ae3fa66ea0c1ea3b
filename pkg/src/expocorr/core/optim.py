"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    """Raised when an update would consume a NaN or infinite gradient."""


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, param: np.ndarray, **hyper) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), **hyper)


def adam_update(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """Apply one Adam step to ``params`` in place and return it.

    ``state`` is advanced in place as well. A non-finite gradient leaves both
    untouched and raises :class:`NonFiniteGradientError`.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not (params.shape == grads.shape == state.first_moment.shape == state.second_moment.shape):
        raise ValueError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"moments {state.first_moment.shape}/{state.second_moment.shape}"
        )
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradientError("non-finite gradient; Adam update rejected")

    b1, b2 = state.beta1, state.beta2
    state.step_count += 1
    t = state.step_count
    state.first_moment *= b1
    state.first_moment += (1.0 - b1) * grads
    state.second_moment *= b2
    state.second_moment += (1.0 - b2) * grads * grads
    m_hat = state.first_moment / (1.0 - b1**t)
    v_hat = state.second_moment / (1.0 - b2**t)
    params -= (lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(params.dtype, copy=False)
    return params


@dataclass
class Adam:
    """Adam over a named parameter collection."""

    params: Mapping[str, Tensor]
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            if name not in self.states:
                self.states[name] = AdamState.zeros_like(
                    p.data, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon
                )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        # validate everything first so a bad gradient leaves all parameters untouched
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        for name, p in self.params.items():
            if p.grad is None:
                continue
            adam_update(p.data, p.grad, self.states[name], self.lr)
