"""Causal text transformer, toy word-level tokenizer and the partial-freeze
schedule for the text tower."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from tvts import numcore as nc
from tvts.errors import ConfigError, ContractError
from tvts.nn import Block, LayerNorm, Module, normal
from tvts.numcore import Parameter, Tensor

PAD, UNK, EOS = 0, 1, 2
RESERVED = ("<pad>", "<unk>", "<eos>")


class Vocabulary:
    """Dense word ids; ids 0-2 are reserved for PAD, UNK and EOS."""

    def __init__(self, words: Iterable[str]):
        self.words: list[str] = list(RESERVED)
        for w in words:
            w = w.lower()
            if w not in self.words:
                self.words.append(w)
        self._ids = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.words == other.words

    def id(self, word: str) -> int:
        return self._ids.get(word.lower(), UNK)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.words) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:3]) != RESERVED:
            raise ConfigError(f"{path}: vocabulary must start with {RESERVED}")
        return cls(lines[3:])


def tokenize(text: str | Sequence[str], vocab: Vocabulary, context_len: int) -> np.ndarray:
    """Lowercased whitespace words -> ids, EOS appended, PAD to ``context_len``.

    Long inputs lose trailing words, never the EOS.
    """
    words = text.lower().split() if isinstance(text, str) else [w.lower() for w in text]
    ids = [vocab.id(w) for w in words[:context_len - 1]] + [EOS]
    out = np.full(context_len, PAD, dtype=np.int64)
    out[:len(ids)] = ids
    return out


@dataclass
class TextEncoderConfig:
    L_T: int = 4
    D_T: int = 64
    heads: int = 4
    vocab_size: int = 64
    context_len: int = 16
    D: int = 32
    L_tune: int = 1

    def __post_init__(self):
        if not 0 <= self.L_tune <= self.L_T:
            raise ConfigError(f"L_tune={self.L_tune} outside [0, {self.L_T}]")
        if self.D_T % self.heads:
            raise ConfigError(f"D_T={self.D_T} not divisible by heads={self.heads}")

    def to_dict(self) -> dict:
        return asdict(self)


def eos_positions(tokens: np.ndarray) -> np.ndarray:
    is_eos = tokens == EOS
    if not np.all(is_eos.any(axis=-1)):
        bad = np.flatnonzero(~is_eos.any(axis=-1))
        raise ContractError(f"token rows {bad.tolist()} contain no EOS")
    return is_eos.argmax(axis=-1)


class TextEncoder(Module):
    def __init__(self, config: TextEncoderConfig, rng: np.random.Generator, prefix: str = "text"):
        super().__init__(prefix)
        self.config = c = config
        self.tok_emb = self.add_param("tok_emb", normal(rng, c.vocab_size, c.D_T))
        self.pos_emb = self.add_param("pos_emb", normal(rng, c.context_len, c.D_T, std=0.01))
        self.blocks = [self.add_child(f"blocks.{i}", Block(self._path(f"blocks.{i}"), c.D_T, c.heads, rng))
                       for i in range(c.L_T)]
        self.ln_final = self.add_child("ln_final", LayerNorm(self._path("ln_final"), c.D_T))
        self.proj = self.add_param("proj", normal(rng, c.D_T, c.D, std=c.D_T ** -0.5))

    def __call__(self, tokens: np.ndarray) -> Tensor:
        """Token ids ``[n, context_len]`` -> unit-norm summaries ``[n, D]``."""
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        if tokens.shape[-1] != self.config.context_len:
            raise ContractError(f"expected sequences of length {self.config.context_len}, got {tokens.shape}")
        eos = eos_positions(tokens)
        # causal attention: nothing after the last needed EOS can matter
        width = int(eos.max()) + 1
        tokens = tokens[:, :width]
        x = self.tok_emb.tensor[tokens] + self.pos_emb.tensor[:width]
        for blk in self.blocks:
            x = blk(x, causal=True)
        t0 = x[np.arange(tokens.shape[0]), eos]
        return nc.l2_normalize(nc.matmul(self.ln_final(t0), self.proj.tensor))

    def trainable_blocks(self) -> list[int]:
        return [i for i, b in enumerate(self.blocks) if not any(p.frozen for p in b.parameters())]


def encode_text(encoder: TextEncoder, tokens: np.ndarray) -> Tensor:
    return encoder(tokens)


def freeze_partition(encoder: TextEncoder, L_tune: int) -> tuple[list[Parameter], list[Parameter]]:
    """Split text parameters into (frozen, trainable) for ``L_tune`` tunable top blocks."""
    L_T = encoder.config.L_T
    if not 0 <= L_tune <= L_T:
        raise ConfigError(f"L_tune={L_tune} outside [0, {L_T}]")
    n_frozen = L_T - L_tune
    frozen: list[Parameter] = []
    if n_frozen > 0:
        frozen += [encoder.tok_emb, encoder.pos_emb]
    for blk in encoder.blocks[:n_frozen]:
        frozen += blk.parameters()
    if L_tune == 0:
        frozen += encoder.ln_final.parameters() + [encoder.proj]
    ids = {id(p) for p in frozen}
    trainable = [p for p in encoder.parameters() if id(p) not in ids]
    return frozen, trainable


def apply_freeze(encoder: TextEncoder, L_tune: int) -> TextEncoder:
    """Freeze embeddings and the bottom ``L_T - L_tune`` blocks.

    ``L_tune == L_T`` trains everything; ``L_tune == 0`` also freezes the final
    norm and the projection.
    """
    frozen, trainable = freeze_partition(encoder, L_tune)
    for p in frozen:
        p.freeze(True)
    for p in trainable:
        p.freeze(False)
    encoder.config.L_tune = L_tune
    return encoder
