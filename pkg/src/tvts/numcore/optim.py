"""Named parameters and a two-group AdamW optimizer."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from tvts.errors import ContractError
from tvts.numcore.tensor import Tensor

GROUPS = ("inherited", "new")


@dataclass(eq=False)
class Parameter:
    name: str
    tensor: Tensor
    group: str = "inherited"
    frozen: bool = False

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"parameter group must be one of {GROUPS}, got {self.group!r}")
        self.tensor.name = self.name
        self.tensor.requires_grad = not self.frozen

    def freeze(self, frozen: bool = True) -> None:
        self.frozen = frozen
        self.tensor.requires_grad = not frozen

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad


@dataclass
class OptimizerState:
    lr_new: float = 1e-4
    lr_inherited: float = 1e-7
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def lr_for(self, group: str) -> float:
        return self.lr_new if group == "new" else self.lr_inherited


def zero_grad(params: Iterable[Parameter]) -> None:
    """Reset gradients to explicit zeros; frozen parameters get ``None``."""
    for p in params:
        p.tensor.grad = None if p.frozen else np.zeros_like(p.tensor.data)


def adamw_step(params: list[Parameter], state: OptimizerState, lr_scale: float = 1.0) -> None:
    """One decoupled-weight-decay Adam update, in place.

    ``lr_scale`` multiplies both group learning rates (schedules live in the
    training loop). Frozen parameters are skipped entirely.
    """
    live = [p for p in params if not p.frozen]
    for p in live:
        if p.tensor.grad is None:
            raise ContractError(f"parameter {p.name!r} is trainable but has no gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in live:
        theta = p.tensor.data
        g = p.tensor.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(theta)
            state.v[p.name] = np.zeros_like(theta)
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        lr = state.lr_for(p.group) * lr_scale
        if state.weight_decay:
            theta *= 1.0 - lr * state.weight_decay
        theta -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(theta.dtype, copy=False)
