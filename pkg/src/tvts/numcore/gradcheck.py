"""Central finite-difference verification of the gradient tape."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from tvts.numcore.optim import Parameter
from tvts.numcore.tensor import Tensor


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter] | Sequence[Tensor],
    epsilon: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    per_param: bool = False,
):
    """Compare analytic gradients of the scalar ``f()`` with central differences.

    ``f`` must be deterministic and read the parameters' current values. At
    most ``max_coords`` coordinates are probed per tensor (all when ``None``).
    Returns the max of ``|analytic - numeric| / max(1, |analytic|)``; with
    ``per_param`` a ``{name: error}`` dict is returned as well.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    tensors = [p.tensor if isinstance(p, Parameter) else p for p in params]
    names = [p.name if isinstance(p, Parameter) else (p.name or f"t{i}") for i, p in enumerate(params)]
    for t in tensors:
        t.grad = None
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    errors: dict[str, float] = {}
    for name, t, ga in zip(names, tensors, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + epsilon
            up = f().item()
            flat[c] = orig - epsilon
            down = f().item()
            flat[c] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = ga.reshape(-1)[c]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
        errors[name] = float(worst)
    overall = max(errors.values(), default=0.0)
    return (overall, errors) if per_param else overall
