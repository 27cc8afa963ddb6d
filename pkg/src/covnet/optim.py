"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray | None], state: AdamState
) -> list[np.ndarray]:
    """Return updated copies of ``params``; ``state`` advances by one step.

    A ``None`` gradient is treated as zero.
    """
    params = [np.asarray(p) for p in params]
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    elif len(state.m) != len(params):
        raise ShapeError(f"optimizer state tracks {len(state.m)} parameters, got {len(params)}")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    # fold both bias corrections into the step size
    step_size = state.learning_rate * np.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    eps_hat = state.epsilon * np.sqrt(1.0 - b2**t)

    updated = []
    for i, (p, g) in enumerate(zip(params, grads)):
        m, v = state.m[i], state.v[i]
        if m.shape != p.shape or (g is not None and g.shape != p.shape):
            raise ShapeError(f"parameter {i}: shape {p.shape}, gradient {None if g is None else g.shape}, moments {m.shape}")
        # moments are owned by the state, so update them in place
        m *= b1
        v *= b2
        if g is not None:
            m += (1.0 - b1) * g
            v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v, out=np.empty_like(v))
        denom += eps_hat
        np.divide(m, denom, out=denom)
        denom *= step_size
        updated.append(np.asarray(np.subtract(p, denom, dtype=p.dtype)))
    return updated


class Adam:
    """Optimizer over a fixed list of leaf tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(learning_rate=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        new = adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)
        for p, value in zip(self.params, new):
            p.assign_(value)
