"""Transformer building blocks shared by the encoders and the sorting head."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from tvts import numcore as nc
from tvts.numcore import Parameter, Tensor

INIT_STD = 0.02
# residual-branch output projections start small so deep stacks begin near identity
RESIDUAL_STD = 0.02


class Module:
    """Container of named parameters and child modules.

    Parameter names are dotted paths fixed at construction time, so a module
    must be built with the prefix it will live under.
    """

    def __init__(self, prefix: str = ""):
        self.prefix = prefix
        self._params: dict[str, Parameter] = {}
        self._children: dict[str, Module] = {}

    def _path(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def add_param(self, name: str, array: np.ndarray, group: str = "inherited") -> Parameter:
        p = Parameter(self._path(name), Tensor(np.asarray(array, dtype=nc.get_dtype())), group=group)
        self._params[name] = p
        return p

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        for p in self._params.values():
            yield p.name, p
        for child in self._children.values():
            yield from child.named_parameters()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy arrays into parameters by name; returns the names that were loaded."""
        loaded = []
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            if missing:
                raise KeyError(f"state is missing parameters: {missing[:5]}")
        for name, p in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.tensor.data = arr.astype(p.data.dtype, copy=True)
            loaded.append(name)
        return loaded

    def set_group(self, group: str) -> None:
        for p in self.parameters():
            p.group = group


def normal(rng: np.random.Generator, *shape: int, std: float = INIT_STD) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Linear(Module):
    def __init__(self, prefix: str, d_in: int, d_out: int, rng: np.random.Generator,
                 group: str = "inherited", zero: bool = False, std: float | None = None):
        super().__init__(prefix)
        # fan-in scaling keeps activations O(1) at small widths
        std = d_in ** -0.5 if std is None else std
        w = np.zeros((d_in, d_out)) if zero else normal(rng, d_in, d_out, std=std)
        self.weight = self.add_param("weight", w, group)
        self.bias = self.add_param("bias", np.zeros(d_out), group)

    def __call__(self, x: Tensor) -> Tensor:
        return nc.linear(x, self.weight.tensor, self.bias.tensor)


class LayerNorm(Module):
    def __init__(self, prefix: str, dim: int, group: str = "inherited", eps: float = 1e-5):
        super().__init__(prefix)
        self.eps = eps
        self.gain = self.add_param("gain", np.ones(dim), group)
        self.bias = self.add_param("bias", np.zeros(dim), group)

    def __call__(self, x: Tensor) -> Tensor:
        return nc.layer_norm(x, self.gain.tensor, self.bias.tensor, self.eps)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., S, D] -> [..., heads, S, D/heads]."""
    *lead, s, d = x.shape
    x = x.reshape(*lead, s, heads, d // heads)
    n = len(lead)
    return x.transpose(tuple(range(n)) + (n + 1, n, n + 2))


def merge_heads(x: Tensor) -> Tensor:
    """[..., heads, S, dh] -> [..., S, heads*dh]."""
    *lead, h, s, dh = x.shape
    n = len(lead)
    x = x.transpose(tuple(range(n)) + (n + 1, n, n + 2))
    return x.reshape(*lead, s, h * dh)


class SelfAttention(Module):
    """Multi-head self-attention with fused QKV projection."""

    def __init__(self, prefix: str, dim: int, heads: int, rng: np.random.Generator,
                 group: str = "inherited", zero_out: bool = False, residual_std: float | None = RESIDUAL_STD):
        super().__init__(prefix)
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.qkv = self.add_child("qkv", Linear(self._path("qkv"), dim, 3 * dim, rng, group))
        self.out = self.add_child("out", Linear(self._path("out"), dim, dim, rng, group, zero=zero_out,
                                                std=residual_std))

    def project_qkv(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        qkv = self.qkv(x)
        d = self.dim
        return qkv[..., :d], qkv[..., d:2 * d], qkv[..., 2 * d:]

    def __call__(self, x: Tensor, causal: bool = False) -> Tensor:
        q, k, v = (split_heads(t, self.heads) for t in self.project_qkv(x))
        return self.out(merge_heads(nc.scaled_dot_attention(q, k, v, causal=causal)))


class MLP(Module):
    def __init__(self, prefix: str, dim: int, rng: np.random.Generator, ratio: int = 4,
                 group: str = "inherited", residual_std: float | None = RESIDUAL_STD):
        super().__init__(prefix)
        self.fc1 = self.add_child("fc1", Linear(self._path("fc1"), dim, ratio * dim, rng, group))
        self.fc2 = self.add_child("fc2", Linear(self._path("fc2"), ratio * dim, dim, rng, group,
                                                std=residual_std))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(nc.gelu(self.fc1(x)))


class Block(Module):
    """Pre-norm transformer block: attention then MLP, both residual."""

    def __init__(self, prefix: str, dim: int, heads: int, rng: np.random.Generator,
                 group: str = "inherited", residual_std: float | None = RESIDUAL_STD):
        """``residual_std=None`` gives the output projections plain fan-in scaling."""
        super().__init__(prefix)
        self.ln1 = self.add_child("ln1", LayerNorm(self._path("ln1"), dim, group))
        self.attn = self.add_child("attn", SelfAttention(self._path("attn"), dim, heads, rng, group,
                                                         residual_std=residual_std))
        self.ln2 = self.add_child("ln2", LayerNorm(self._path("ln2"), dim, group))
        self.mlp = self.add_child("mlp", MLP(self._path("mlp"), dim, rng, group=group, residual_std=residual_std))

    def __call__(self, x: Tensor, causal: bool = False) -> Tensor:
        x = x + self.attn(self.ln1(x), causal=causal)
        return x + self.mlp(self.ln2(x))
