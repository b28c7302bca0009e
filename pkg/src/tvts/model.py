"""The two-tower model plus its training-only sorting head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tvts import numcore as nc
from tvts.nn import Module
from tvts.numcore import Parameter, Tensor
from tvts.objectives import SortHead
from tvts.textenc import TextEncoder, TextEncoderConfig, Vocabulary, apply_freeze
from tvts.videnc import VideoEncoder, VideoEncoderConfig


@dataclass
class ModelConfig:
    video: VideoEncoderConfig
    text: TextEncoderConfig
    K: int = 4
    head_depth: int = 2


class TVTSModel(Module):
    def __init__(self, config: ModelConfig, vocab: Vocabulary, seed: int = 0):
        super().__init__("")
        self.config = config
        self.vocab = vocab
        rng = np.random.default_rng(seed)
        self.video = self.add_child("video", VideoEncoder(config.video, rng))
        self.text = self.add_child("text", TextEncoder(config.text, rng))
        self.head = self.add_child(
            "sort_head", SortHead(config.video.D, config.video.D_V, config.K, rng, depth=config.head_depth))
        apply_freeze(self.text, config.text.L_tune)

    def trainable(self) -> list[Parameter]:
        return [p for p in self.parameters() if not p.frozen]

    def encode_texts(self, tokens: np.ndarray) -> Tensor:
        return self.text(tokens)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}


def build_model(run, vocab: Vocabulary) -> TVTSModel:
    """Model for a ``RunConfig``; parameters are created in the run's dtype."""
    with nc.precision(run.dtype):
        cfg = ModelConfig(run.video_config(), run.text_config(len(vocab)), run.K, run.head_depth)
        return TVTSModel(cfg, vocab, seed=run.seed)
