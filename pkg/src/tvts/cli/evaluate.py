"""Embedding a split with a frozen model and computing the metric report."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tvts import numcore as nc
from tvts.cli.config import RunConfig
from tvts.cli.train import build_batch, forward_batch
from tvts.evalkit import dsl, linear_probe, multi_choice, recall_and_rank, similarity, zero_shot_classify
from tvts.model import TVTSModel
from tvts.synthdata import SHAPES, Sample, dominant_shape
from tvts.textenc import tokenize


@dataclass
class Embedded:
    video: np.ndarray        # [G, D]
    text: np.ndarray         # [G, D]
    ts_logits: np.ndarray    # [n_ts, K, K]
    order: np.ndarray        # [n_ts, K]
    labels: np.ndarray       # dominant shape of the shown frames


def embed_split(model: TVTSModel, samples: list[Sample], cfg: RunConfig, chunk: int = 16) -> Embedded:
    """Encode every sample with rho=0 and midpoint frames; no tape is built."""
    vids, txts, logits, orders, labels = [], [], [], [], []
    loss_cfg = cfg.loss_config()
    with nc.precision(cfg.dtype), nc.no_grad():
        for start in range(0, len(samples), chunk):
            part = samples[start:start + chunk]
            batch = build_batch(part, cfg, model.vocab, None, 0.0)
            out = forward_batch(model, batch, loss_cfg)
            vids.append(out.v0.data.copy())
            txts.append(out.tbar.data.copy())
            if out.ts_logits is not None:
                logits.append(out.ts_logits.data.copy())
                orders.append(batch.order)
            labels += [dominant_shape(s.transcript, t, s.fps) for s, t in zip(part, batch.times)]
    K = cfg.K
    return Embedded(
        video=np.concatenate(vids),
        text=np.concatenate(txts),
        ts_logits=np.concatenate(logits) if logits else np.zeros((0, K, K)),
        order=np.concatenate(orders) if orders else np.zeros((0, K), np.int64),
        labels=np.asarray(labels, dtype=np.int64),
    )


def encode_prompts(model: TVTSModel, cfg: RunConfig):
    def encode(texts: list[str]) -> np.ndarray:
        toks = np.stack([tokenize(t, model.vocab, cfg.context_len) for t in texts])
        with nc.precision(cfg.dtype), nc.no_grad():
            return model.text(toks).data.copy()
    return encode


def multi_choice_candidates(text: np.ndarray, n_candidates: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """True text plus distractors drawn from the other items, at a random slot."""
    G = len(text)
    C = min(n_candidates, G)
    rng = np.random.default_rng(seed)
    cands = np.empty((G, C, text.shape[1]), dtype=text.dtype)
    true_index = rng.integers(0, C, size=G)
    for g in range(G):
        others = rng.choice(np.delete(np.arange(G), g), size=C - 1, replace=False)
        rows = list(others)
        rows.insert(int(true_index[g]), g)
        cands[g] = text[rows]
    return cands, true_index


def evaluate(model: TVTSModel, samples: list[Sample], cfg: RunConfig, use_dsl: bool = False,
             use_multi_choice: bool = False, use_zero_shot: bool = False,
             probe_samples: list[Sample] | None = None) -> dict[str, float]:
    """Metric report for ``samples`` (truncated to ``cfg.eval_size`` items)."""
    samples = samples[: cfg.eval_size] if cfg.eval_size else samples
    emb = embed_split(model, samples, cfg)
    metrics: dict[str, float] = {}
    if len(emb.ts_logits):
        metrics["ts_accuracy"] = float(np.mean(emb.ts_logits.argmax(-1) == emb.order - 1))
    S = similarity(emb.text, emb.video)
    metrics.update(recall_and_rank(S).as_dict())
    if use_dsl:
        metrics.update(recall_and_rank(dsl(S, cfg.dsl_inv_temp)).as_dict("dsl_"))
        metrics.pop("dsl_MMS")
    if use_multi_choice:
        cands, true_index = multi_choice_candidates(emb.text, cfg.mc_candidates, cfg.eval_seed)
        metrics[f"mc{cands.shape[1]}_accuracy"] = multi_choice(emb.video, cands, true_index)
    if use_zero_shot:
        pred = zero_shot_classify(emb.video, SHAPES, encode_prompts(model, cfg))
        metrics["zero_shot_top1"] = 100.0 * float(np.mean(pred == emb.labels))
    if probe_samples:
        ptr = embed_split(model, probe_samples, cfg)
        res = linear_probe(ptr.video, ptr.labels, emb.video, emb.labels, n_classes=len(SHAPES))
        metrics["probe_top1"] = res.top1
        metrics["probe_top5"] = res.top5
    return metrics


def heldout_eval(model: TVTSModel, samples: list[Sample], cfg: RunConfig) -> dict[str, float]:
    """Periodic evaluation used during training: TS accuracy and retrieval."""
    return evaluate(model, samples, cfg)
