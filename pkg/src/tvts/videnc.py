"""Video encoder: patch embedding, shared positional tables and divided
space-time attention blocks with zero-initialised temporal output.

Token states are kept as one sequence ``[B, 1 + T*Nv, D_V]`` with the [CLS]
state first, followed by the visible patches in frame-major order. The
attention stages regroup that sequence into tubes (same position, all
frames) or frames (same frame, all positions); [CLS] joins every group as
an extra key and itself attends to the whole sequence.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from tvts import numcore as nc
from tvts.errors import ConfigError, DimensionError
from tvts.nn import MLP, LayerNorm, Linear, Module, SelfAttention, merge_heads, normal, split_heads
from tvts.numcore import Tensor
from tvts.sampling import TubeMask, no_mask

POS_STD = 0.5


@dataclass
class VideoEncoderConfig:
    L_V: int = 4
    D_V: int = 64
    heads: int = 4
    P: int = 8
    H: int = 32
    W: int = 32
    T: int = 8
    D: int = 32

    def __post_init__(self):
        if self.H % self.P or self.W % self.P:
            raise ConfigError(f"frame {self.H}x{self.W} is not divisible into {self.P}px patches")
        if self.D_V % self.heads:
            raise ConfigError(f"D_V={self.D_V} not divisible by heads={self.heads}")

    @property
    def N(self) -> int:
        return (self.H // self.P) * (self.W // self.P)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class VideoTokens:
    cls: Tensor            # [B, D], unit norm
    tokens: Tensor         # [B, 1 + T*Nv, D_V], after the final norm
    visible_index: list[list[tuple[int, int]]]

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[1]


def patchify_pixels(frames: np.ndarray, P: int) -> np.ndarray:
    """[..., T, 3, H, W] -> [..., T, N, 3*P*P], raster order inside each frame."""
    *lead, T, C, H, W = frames.shape
    x = frames.reshape(*lead, T, C, H // P, P, W // P, P)
    n = len(lead)
    x = x.transpose(tuple(range(n)) + (n, n + 2, n + 4, n + 1, n + 3, n + 5))
    return x.reshape(*lead, T, (H // P) * (W // P), C * P * P)


def add_positional(tokens: Tensor, E_s: Tensor, E_t: Tensor) -> Tensor:
    """``tokens[..., y, x, :] + E_s[..., x, :] + E_t[y, :]``.

    ``tokens`` is ``[..., T, N', D]``; ``E_s`` holds the rows for the ``N'``
    positions present (``[N', D]`` or batched ``[B, N', D]``).
    """
    T, D = E_t.shape
    if tokens.shape[-3] != T or tokens.shape[-1] != D:
        raise DimensionError(f"tokens {tokens.shape} do not match temporal table {E_t.shape}")
    es = E_s.reshape(*E_s.shape[:-2], 1, *E_s.shape[-2:])
    return tokens + es + E_t.reshape(T, 1, D)


class DividedBlock(Module):
    """Temporal attention, then spatial attention, then MLP (all residual)."""

    def __init__(self, prefix: str, dim: int, heads: int, rng: np.random.Generator):
        super().__init__(prefix)
        self.ln_t = self.add_child("ln_t", LayerNorm(self._path("ln_t"), dim, group="new"))
        self.attn_t = self.add_child(
            "attn_t", SelfAttention(self._path("attn_t"), dim, heads, rng, group="new", zero_out=True))
        self.ln_s = self.add_child("ln_s", LayerNorm(self._path("ln_s"), dim))
        self.attn_s = self.add_child("attn_s", SelfAttention(self._path("attn_s"), dim, heads, rng))
        self.ln_m = self.add_child("ln_m", LayerNorm(self._path("ln_m"), dim))
        self.mlp = self.add_child("mlp", MLP(self._path("mlp"), dim, rng))

    def _stage(self, seq: Tensor, ln: LayerNorm, attn: SelfAttention, T: int, tube: bool) -> Tensor:
        B, S, D = seq.shape
        nv = (S - 1) // T
        heads = attn.heads
        q, k, v = attn.project_qkv(ln(seq))

        def grouped(t: Tensor) -> Tensor:
            grid = t[:, 1:].reshape(B, T, nv, D)
            return grid.transpose(0, 2, 1, 3) if tube else grid

        def with_cls(t: Tensor) -> Tensor:
            grid = grouped(t)
            G = grid.shape[1]
            cls = nc.broadcast_to(t[:, 0:1].reshape(B, 1, 1, D), (B, G, 1, D))
            return nc.concat([cls, grid], axis=2)

        o = nc.scaled_dot_attention(split_heads(grouped(q), heads),
                                    split_heads(with_cls(k), heads),
                                    split_heads(with_cls(v), heads))
        o = merge_heads(o)
        if tube:
            o = o.transpose(0, 2, 1, 3)
        o = o.reshape(B, T * nv, D)
        oc = nc.scaled_dot_attention(split_heads(q[:, 0:1], heads),
                                     split_heads(k, heads), split_heads(v, heads))
        o = nc.concat([merge_heads(oc), o], axis=1)
        return seq + attn.out(o)

    def __call__(self, seq: Tensor, T: int, temporal: bool = True) -> Tensor:
        if temporal:
            seq = self._stage(seq, self.ln_t, self.attn_t, T, tube=True)
        seq = self._stage(seq, self.ln_s, self.attn_s, T, tube=False)
        return seq + self.mlp(self.ln_m(seq))


class VideoEncoder(Module):
    def __init__(self, config: VideoEncoderConfig, rng: np.random.Generator, prefix: str = "video"):
        super().__init__(prefix)
        self.config = c = config
        self.patch_embed = self.add_child(
            "patch_embed", Linear(self._path("patch_embed"), 3 * c.P * c.P, c.D_V, rng))
        # positional tables on the scale of the patch embeddings: tiny ones leave the
        # frame index invisible after masking and TS stays at chance for hundreds of steps
        self.E_s = self.add_param("E_s", normal(rng, c.N, c.D_V, std=POS_STD))
        self.E_t = self.add_param("E_t", normal(rng, c.T, c.D_V, std=POS_STD))
        self.cls_token = self.add_param("cls", normal(rng, c.D_V))
        self.blocks = [self.add_child(f"blocks.{i}", DividedBlock(self._path(f"blocks.{i}"), c.D_V, c.heads, rng))
                       for i in range(c.L_V)]
        self.ln_final = self.add_child("ln_final", LayerNorm(self._path("ln_final"), c.D_V))
        self.proj = self.add_param("proj", normal(rng, c.D_V, c.D, std=c.D_V ** -0.5), group="new")

    # -- stages ------------------------------------------------------------
    def _check_frames(self, frames: np.ndarray) -> None:
        c = self.config
        if frames.shape[-4:] != (c.T, 3, c.H, c.W):
            raise DimensionError(f"clip shape {frames.shape[-4:]} != expected {(c.T, 3, c.H, c.W)}")

    def patchify(self, frames) -> Tensor:
        """[T, 3, H, W] (or batched) -> projected tokens [..., T*N, D_V]."""
        frames = frames.data if isinstance(frames, Tensor) else np.asarray(frames)
        self._check_frames(frames)
        pix = patchify_pixels(frames, self.config.P)
        tok = self.patch_embed(Tensor(pix.astype(nc.get_dtype(), copy=False)))
        return tok.reshape(*tok.shape[:-3], tok.shape[-3] * tok.shape[-2], tok.shape[-1])

    def embed_visible(self, frames: np.ndarray, masks: Sequence[TubeMask]) -> tuple[Tensor, np.ndarray]:
        """Patch-embed only the visible positions and add positional tables.

        Returns tokens ``[B, T, Nv, D_V]`` and the visible positions ``[B, Nv]``.
        """
        c = self.config
        B = frames.shape[0]
        for m in masks:
            if m.N != c.N or m.T != c.T:
                raise DimensionError(f"mask for N={m.N}, T={m.T} does not fit encoder N={c.N}, T={c.T}")
        counts = {m.n_visible for m in masks}
        if len(counts) != 1:
            raise DimensionError(f"masks in one batch must keep the same count, got {sorted(counts)}")
        vis = np.stack([m.visible_positions for m in masks])
        pix = patchify_pixels(frames, c.P)
        pix = pix[np.arange(B)[:, None, None], np.arange(c.T)[None, :, None], vis[:, None, :]]
        tok = self.patch_embed(Tensor(pix.astype(nc.get_dtype(), copy=False)))
        es = self.E_s.tensor[vis]
        return add_positional(tok, es, self.E_t.tensor), vis

    def forward_tokens(self, frames, masks: Sequence[TubeMask] | TubeMask | None = None,
                       temporal: bool = True) -> VideoTokens:
        frames = frames.data if isinstance(frames, Tensor) else np.asarray(frames)
        single = frames.ndim == 4
        if single:
            frames = frames[None]
            masks = [masks] if isinstance(masks, TubeMask) else masks
        self._check_frames(frames)
        c = self.config
        B = frames.shape[0]
        if masks is None:
            masks = [no_mask(c.N, c.T)] * B
        elif isinstance(masks, TubeMask):
            masks = [masks] * B
        if len(masks) != B:
            raise DimensionError(f"{len(masks)} masks for {B} clips")
        tok, vis = self.embed_visible(frames, masks)
        nv = vis.shape[1]
        seq = tok.reshape(B, c.T * nv, c.D_V)
        cls = nc.broadcast_to(self.cls_token.tensor.reshape(1, 1, c.D_V), (B, 1, c.D_V))
        seq = nc.concat([cls, seq], axis=1)
        for blk in self.blocks:
            seq = blk(seq, c.T, temporal=temporal)
        seq = self.ln_final(seq)
        v0 = nc.l2_normalize(nc.matmul(seq[:, 0], self.proj.tensor))
        index = [[(y, int(x)) for y in range(c.T) for x in row] for row in vis]
        return VideoTokens(cls=v0, tokens=seq, visible_index=index)

    __call__ = forward_tokens


def encode_video(encoder: VideoEncoder, clip, mask: TubeMask | None = None) -> VideoTokens:
    return encoder.forward_tokens(clip, mask)
