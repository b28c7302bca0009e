"""Batch construction, the training loop and run artefacts."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from tvts import numcore as nc
from tvts.cli.checkpoint import load_checkpoint, save_checkpoint
from tvts.cli.config import RunConfig
from tvts.errors import ConfigError, FormatError, NumericError
from tvts.evalkit import write_curve, write_metrics
from tvts.model import TVTSModel, build_model
from tvts.numcore import OptimizerState, Tensor
from tvts.objectives import (LossConfig, mean_text_summary, total_loss, ts_accuracy, ts_loss,
                             vtc_loss)
from tvts.sampling import TubeMask, no_mask, sample_segments, sample_tube_mask, tsn_frames
from tvts.synthdata import Sample, load_sample, read_manifest, sample_seed
from tvts.textenc import Vocabulary, tokenize

log = logging.getLogger("tvts")


# -- data -------------------------------------------------------------------------
def dataset_paths(data_dir: str | Path) -> dict[str, Path]:
    root = Path(data_dir)
    return {"root": root, "train": root / "train" / "manifest.tsv",
            "heldout": root / "heldout" / "manifest.tsv", "vocab": root / "vocab.txt"}


def load_split(data_dir: str | Path, split: str, fps: int) -> list[Sample]:
    path = dataset_paths(data_dir)[split]
    if not path.exists():
        raise FormatError(f"missing manifest {path}; run `tvts generate-data` first")
    return [load_sample(r, fps=fps) for r in read_manifest(path)]


def load_vocab(data_dir: str | Path) -> Vocabulary:
    path = dataset_paths(data_dir)["vocab"]
    if not path.exists():
        raise FormatError(f"missing vocabulary {path}")
    return Vocabulary.load(path)


@dataclass
class Batch:
    frames: np.ndarray                 # [B, T, 3, H, W]
    masks: list[TubeMask]
    ts_index: np.ndarray               # samples with timestamped transcripts
    seg_tokens: np.ndarray             # [n_ts, K, context_len]
    order: np.ndarray                  # [n_ts, K], 1-based
    cap_index: np.ndarray              # caption-only samples
    cap_tokens: np.ndarray             # [n_cap, context_len]
    times: list[np.ndarray] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.frames.shape[0]


def build_batch(samples: list[Sample], cfg: RunConfig, vocab: Vocabulary,
                rngs: list[np.random.Generator] | None, rho: float) -> Batch:
    """Sample segments, frames and masks for each sample.

    ``rngs=None`` is evaluation mode: per-sample generators seeded from
    ``cfg.eval_seed`` choose the segments, frames sit at sub-interval
    midpoints and nothing is masked.
    """
    N = (cfg.H // cfg.P) * (cfg.W // cfg.P)
    frames, masks, times = [], [], []
    ts_index, seg_tokens, order, cap_index, cap_tokens = [], [], [], [], []
    for i, s in enumerate(samples):
        rng = rngs[i] if rngs is not None else np.random.default_rng(
            sample_seed(cfg.eval_seed, s.record.sample_id))
        segs = sample_segments(s.transcript, cfg.K, cfg.l, rng)
        plan = tsn_frames(segs.interval, cfg.T, rng if rngs is not None else None)
        frames.append(s.frames_at(plan.times))
        times.append(plan.times)
        masks.append(sample_tube_mask(N, cfg.T, rho, rng) if rho > 0 else no_mask(N, cfg.T))
        if s.has_timestamps:
            ts_index.append(i)
            seg_tokens.append(np.stack([tokenize(w, vocab, cfg.context_len) for w in segs.segments]))
            order.append(segs.order)
        else:
            cap_index.append(i)
            cap_tokens.append(tokenize(s.caption, vocab, cfg.context_len))
    ctx = cfg.context_len
    return Batch(
        frames=np.stack(frames),
        masks=masks,
        ts_index=np.asarray(ts_index, dtype=np.int64),
        seg_tokens=np.stack(seg_tokens) if seg_tokens else np.zeros((0, cfg.K, ctx), np.int64),
        order=np.asarray(order, dtype=np.int64).reshape(-1, cfg.K),
        cap_index=np.asarray(cap_index, dtype=np.int64),
        cap_tokens=np.stack(cap_tokens) if cap_tokens else np.zeros((0, ctx), np.int64),
        times=times,
    )


# -- forward ----------------------------------------------------------------------
@dataclass
class StepOutput:
    loss: Tensor
    vtc: Tensor
    ts: Tensor | None
    ts_logits: Tensor | None
    v0: Tensor
    tbar: Tensor
    seg_emb: Tensor | None
    ts_accuracy: float = float("nan")


def forward_batch(model: TVTSModel, batch: Batch, loss_cfg: LossConfig, with_ts: bool = True) -> StepOutput:
    vt = model.video(batch.frames, batch.masks)
    n_ts, K = len(batch.ts_index), loss_cfg.K
    tokens = np.concatenate([batch.seg_tokens.reshape(-1, batch.cap_tokens.shape[-1]), batch.cap_tokens])
    emb = model.text(tokens)
    D = emb.shape[-1]
    parts, index = [], []
    seg_emb = None
    if n_ts:
        seg_emb = emb[: n_ts * K].reshape(n_ts, K, D)
        parts.append(mean_text_summary(seg_emb))
        index.append(batch.ts_index)
    if len(batch.cap_index):
        parts.append(emb[n_ts * K:])
        index.append(batch.cap_index)
    tbar = nc.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    where = np.concatenate(index)
    if not np.array_equal(where, np.arange(batch.size)):
        tbar = tbar[np.argsort(where)]
    l_vtc = vtc_loss(vt.cls, tbar, loss_cfg.tau)

    l_ts = logits = None
    acc = float("nan")
    if with_ts and n_ts:
        vid = vt.tokens if n_ts == batch.size else vt.tokens[batch.ts_index]
        l_ts, logits = ts_loss(seg_emb, vid, batch.order, model.head, return_logits=True)
        acc = ts_accuracy(logits, batch.order)
    return StepOutput(total_loss(l_vtc, l_ts, loss_cfg), l_vtc, l_ts, logits, vt.cls, tbar, seg_emb, acc)


def lr_scale(step: int, cfg: RunConfig) -> float:
    """Linear warm-up, then constant or cosine decay; ``step`` is 1-based."""
    if cfg.warmup and step <= cfg.warmup:
        return step / cfg.warmup
    if cfg.schedule == "constant":
        return 1.0
    span = max(1, cfg.steps - cfg.warmup)
    progress = min(1.0, (step - cfg.warmup) / span)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


# -- loop -------------------------------------------------------------------------
@dataclass
class TrainResult:
    model: TVTSModel
    final_loss: float
    curve: list[tuple]
    evals: list[dict]
    out_dir: Path | None
    seconds: float


def _step_rngs(cfg: RunConfig, step: int, batch_size: int) -> tuple[np.random.Generator, list[np.random.Generator]]:
    ss = np.random.SeedSequence([cfg.seed, 0x5EED, step])
    pick, *per_sample = ss.spawn(batch_size + 1)
    return np.random.default_rng(pick), [np.random.default_rng(s) for s in per_sample]


def _make_batch(cfg: RunConfig, train: list[Sample], vocab: Vocabulary, step: int) -> Batch:
    pick, rngs = _step_rngs(cfg, step, cfg.batch_size)
    idx = pick.choice(len(train), size=min(cfg.batch_size, len(train)), replace=False)
    return build_batch([train[i] for i in idx], cfg, vocab, rngs[:len(idx)], cfg.rho)


def apply_init_checkpoint(model: TVTSModel, path: str) -> list[str]:
    tensors, _ = load_checkpoint(path)
    return model.load_state_dict(tensors, strict=False)


def train(cfg: RunConfig, out_dir: str | Path | None = None,
          evaluate_fn: Callable | None = None, progress: Callable[[str], None] | None = None,
          train_samples: list[Sample] | None = None, heldout: list[Sample] | None = None) -> TrainResult:
    """Run ``cfg.steps`` optimisation steps and write artefacts to ``out_dir``."""
    say = progress or log.info
    t0 = time.time()
    vocab = load_vocab(cfg.data_dir)
    train_samples = train_samples if train_samples is not None else load_split(cfg.data_dir, "train", cfg.fps)
    if not train_samples:
        raise ConfigError("training split is empty")
    if heldout is None and evaluate_fn is not None:
        heldout = load_split(cfg.data_dir, "heldout", cfg.fps)

    with nc.precision(cfg.dtype):
        model = build_model(cfg, vocab)
        if cfg.init_checkpoint:
            loaded = apply_init_checkpoint(model, cfg.init_checkpoint)
            say(f"initialised {len(loaded)} tensors from {cfg.init_checkpoint}")
        params = model.trainable()
        state = OptimizerState(lr_new=cfg.lr_new, lr_inherited=cfg.lr_inherited,
                               weight_decay=cfg.weight_decay)
        loss_cfg = cfg.loss_config()
        curve: list[tuple] = []
        evals: list[dict] = []
        final = float("nan")

        pool = ThreadPoolExecutor(max_workers=cfg.workers - 1) if cfg.workers > 1 else None
        pending = {}

        def batch_for(step):
            if pool is None:
                return _make_batch(cfg, train_samples, vocab, step)
            for s in range(step, min(step + cfg.workers, cfg.steps + 1)):
                if s not in pending:
                    pending[s] = pool.submit(_make_batch, cfg, train_samples, vocab, s)
            return pending.pop(step).result()

        try:
            for step in range(1, cfg.steps + 1):
                batch = batch_for(step)
                out = forward_batch(model, batch, loss_cfg)
                final = out.loss.item()
                if not np.isfinite(final):
                    ts_val = out.ts.item() if out.ts is not None else float("nan")
                    raise NumericError(f"non-finite loss at step {step}: total={final} "
                                       f"vtc={out.vtc.item()} ts={ts_val}")
                nc.zero_grad(params)
                out.loss.backward()
                nc.adamw_step(params, state, lr_scale(step, cfg))
                curve.append((step, round(final, 6), round(out.ts_accuracy, 4)))
                if step % 50 == 0 or step == 1:
                    say(f"step {step:5d}  loss {final:.4f}  vtc {out.vtc.item():.4f}  "
                        f"ts {out.ts.item() if out.ts is not None else float('nan'):.4f}  "
                        f"ts_acc {out.ts_accuracy:.3f}  {time.time() - t0:.0f}s")
                if evaluate_fn is not None and cfg.eval_interval and (
                        step % cfg.eval_interval == 0 or step == cfg.steps):
                    metrics = evaluate_fn(model, heldout, cfg)
                    metrics["step"] = step
                    evals.append(metrics)
                    say("eval " + "  ".join(f"{k} {v:.3f}" for k, v in metrics.items()
                                            if k in ("step", "ts_accuracy", "R@1", "R@5", "MMS")))
        finally:
            if pool is not None:
                pool.shutdown(wait=False, cancel_futures=True)

    result = TrainResult(model, final, curve, evals, Path(out_dir) if out_dir else None, time.time() - t0)
    if out_dir is not None:
        write_run(result, cfg, vocab)
    return result


def write_run(result: TrainResult, cfg: RunConfig, vocab: Vocabulary) -> None:
    out = result.out_dir
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.tvc", result.model.state_dict(), cfg.to_text())
    vocab.save(out / "vocab.txt")
    (out / "run_manifest.txt").write_text(cfg.to_text(), encoding="utf-8")
    write_curve(result.curve, out / "curve.tsv")
    summary = {"final_loss": result.final_loss, "steps": float(cfg.steps), "seconds": result.seconds}
    if result.evals:
        summary.update({k: float(v) for k, v in result.evals[-1].items()})
    write_metrics(summary, out / "train_report.txt", out / "train_metrics.tsv", title="training summary")
