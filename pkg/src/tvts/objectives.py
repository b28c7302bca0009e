"""Training losses: transcript sorting through a disposable joint-attention
head, symmetric video-text InfoNCE, and their weighted sum."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tvts import numcore as nc
from tvts.errors import ConfigError, ContractError
from tvts.nn import Block, LayerNorm, Linear, Module, normal
from tvts.numcore import Tensor


@dataclass
class LossConfig:
    tau: float = 0.05
    lam: float = 2.0
    K: int = 4

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        if self.lam < 0:
            raise ConfigError(f"TS weight must be non-negative, got {self.lam}")


class SortHead(Module):
    """Joint attention over K text summaries and the visible video tokens.

    Training-only; every parameter is in the ``new`` group. Text slots get a
    type embedding but no position, so slot order carries no information.
    """

    def __init__(self, D: int, D_V: int, K: int, rng: np.random.Generator,
                 D_J: int | None = None, depth: int = 2, heads: int = 4, prefix: str = "sort_head"):
        super().__init__(prefix)
        D_J = D_J or D_V
        self.K = K
        self.text_in = self.add_child("text_in", Linear(self._path("text_in"), D, D_J, rng, "new"))
        self.video_in = self.add_child("video_in", Linear(self._path("video_in"), D_V, D_J, rng, "new"))
        self.type_emb = self.add_param("type_emb", normal(rng, 2, D_J), group="new")
        # shallow head: full-scale residual branches shorten the plateau before sorting is learned
        self.blocks = [self.add_child(f"blocks.{i}", Block(self._path(f"blocks.{i}"), D_J, heads, rng, "new",
                                                           residual_std=None))
                       for i in range(depth)]
        self.ln_final = self.add_child("ln_final", LayerNorm(self._path("ln_final"), D_J, group="new"))
        self.classifier = self.add_child("classifier", Linear(self._path("classifier"), D_J, K, rng, "new", std=0.02))

    def __call__(self, text_cls: Tensor, video_tokens: Tensor) -> Tensor:
        """``text_cls [B, K, D]``, ``video_tokens [B, S, D_V]`` -> logits ``[B, K, K]``.

        Callers are responsible for detaching ``text_cls``; see ``ts_loss``.
        """
        K = text_cls.shape[-2]
        if K != self.K:
            raise ContractError(f"head was built for K={self.K}, got {K} text slots")
        t = self.text_in(text_cls) + self.type_emb.tensor[0]
        v = self.video_in(video_tokens) + self.type_emb.tensor[1]
        x = nc.concat([t, v], axis=1)
        for blk in self.blocks:
            x = blk(x)
        return self.classifier(self.ln_final(x[:, :K]))


def _as_batch(text_cls: Tensor, tokens: Tensor, order) -> tuple[Tensor, Tensor, np.ndarray]:
    order = np.asarray(order, dtype=np.int64)
    if text_cls.ndim == 2:
        text_cls = text_cls.reshape(1, *text_cls.shape)
        tokens = tokens.reshape(1, *tokens.shape)
        order = order.reshape(1, -1)
    if order.shape != text_cls.shape[:2]:
        raise ContractError(f"order {order.shape} does not match {text_cls.shape[1]} text slots")
    K = text_cls.shape[1]
    for row in order:
        if sorted(row.tolist()) != list(range(1, K + 1)):
            raise ContractError(f"order {row.tolist()} is not a permutation of 1..{K}")
    return text_cls, tokens, order


def ts_logits(text_cls: Tensor, video_tokens: Tensor, head: SortHead) -> Tensor:
    return head(nc.stop_gradient(text_cls), video_tokens)


def ts_loss_from_logits(logits: Tensor, order) -> Tensor:
    """Mean over samples and slots of the K-way cross-entropy; ``order`` is 1-based."""
    order = np.asarray(order, dtype=np.int64).reshape(-1)
    B, K, _ = logits.shape
    return nc.cross_entropy_logits(logits.reshape(B * K, K), order - 1)


def ts_loss(text_cls: Tensor, video_tokens, order, head: SortHead, return_logits: bool = False):
    """Transcript-sorting loss with the text summaries detached.

    ``text_cls`` is ``[K, D]`` or ``[B, K, D]``; ``video_tokens`` is a
    ``VideoTokens`` or its token tensor; ``order[i]`` is the 1-based
    chronological rank of slot ``i``.
    """
    tokens = getattr(video_tokens, "tokens", video_tokens)
    text_cls, tokens, order = _as_batch(text_cls, tokens, order)
    logits = ts_logits(text_cls, tokens, head)
    loss = ts_loss_from_logits(logits, order)
    return (loss, logits) if return_logits else loss


def ts_accuracy(logits: Tensor | np.ndarray, order) -> float:
    """Fraction of slots whose argmax matches the chronological rank."""
    lg = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    order = np.asarray(order).reshape(lg.shape[:-1])
    return float(np.mean(lg.argmax(axis=-1) == order - 1))


def check_unit_rows(x: Tensor, what: str, tol: float = 1e-3) -> None:
    norms = np.linalg.norm(x.data, axis=-1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ContractError(f"{what} rows must be L2-normalised; norms range "
                            f"[{norms.min():.4f}, {norms.max():.4f}]")


def vtc_loss(v0: Tensor, tbar: Tensor, tau: float) -> Tensor:
    """Symmetric InfoNCE with in-batch negatives: NCE(t, v) + NCE(v, t)."""
    if v0.shape != tbar.shape or v0.ndim != 2:
        raise ContractError(f"embedding batches disagree: {v0.shape} vs {tbar.shape}")
    check_unit_rows(v0, "video embedding")
    check_unit_rows(tbar, "text embedding")
    B = v0.shape[0]
    logits = nc.matmul(v0, tbar.transpose()) * (1.0 / tau)
    target = np.arange(B)
    return (nc.cross_entropy_logits(logits.transpose(), target)
            + nc.cross_entropy_logits(logits, target))


def mean_text_summary(text_cls: Tensor) -> Tensor:
    """Average the K segment summaries ``[..., K, D]`` and re-normalise."""
    return nc.l2_normalize(text_cls.mean(axis=-2))


def total_loss(l_vtc: Tensor, l_ts: Tensor | None, config: LossConfig) -> Tensor:
    if l_ts is None or config.lam == 0:
        return l_vtc
    return l_vtc + l_ts * config.lam
