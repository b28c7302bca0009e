"""Out-of-the-box evaluation: retrieval metrics, dual-softmax re-scoring,
zero-shot classification, multi-choice and a linear probe."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from tvts import numcore as nc
from tvts.errors import ConfigError, ContractError
from tvts.numcore import Tensor


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


@dataclass
class SimilarityMatrix:
    S: np.ndarray
    row_ids: list = field(default_factory=list)
    col_ids: list = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.S.shape


@dataclass
class RetrievalMetrics:
    r_at: dict[int, float]
    mdr: float
    mms: float
    ranks: np.ndarray

    def as_dict(self, prefix: str = "") -> dict[str, float]:
        out = {f"{prefix}R@{k}": v for k, v in self.r_at.items()}
        out[f"{prefix}MdR"] = self.mdr
        out[f"{prefix}MMS"] = self.mms
        return out


def similarity(text_emb, video_emb, tol: float = 1e-3) -> SimilarityMatrix:
    """Cosine similarity of unit-norm rows: ``text_emb @ video_emb.T``."""
    t, v = _array(text_emb), _array(video_emb)
    for name, x in (("text", t), ("video", v)):
        norms = np.linalg.norm(x, axis=-1)
        if np.any(np.abs(norms - 1.0) > tol):
            raise ContractError(f"{name} embeddings must be L2-normalised (norms in "
                                f"[{norms.min():.4f}, {norms.max():.4f}])")
    return SimilarityMatrix(t @ v.T, list(range(len(t))), list(range(len(v))))


def true_ranks(S: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """1-based rank of each query's true item; equal scores rank lower indices first."""
    S = np.asarray(S)
    gt = np.asarray(gt, dtype=np.int64)
    q = np.arange(S.shape[0])
    true = S[q, gt][:, None]
    ahead = (S > true).sum(axis=1)
    cols = np.arange(S.shape[1])[None, :]
    ties_before = ((S == true) & (cols < gt[:, None])).sum(axis=1)
    return 1 + ahead + ties_before


def recall_and_rank(S, ground_truth=None, ks: Sequence[int] = (1, 5, 10)) -> RetrievalMetrics:
    """R@K (percent), median rank and mean matched similarity.

    ``ground_truth[q]`` is the gallery column of query ``q``'s match
    (defaults to the diagonal).
    """
    S = S.S if isinstance(S, SimilarityMatrix) else _array(S)
    gt = np.arange(S.shape[0]) if ground_truth is None else np.asarray(ground_truth, dtype=np.int64)
    ranks = true_ranks(S, gt)
    r_at = {k: 100.0 * float(np.mean(ranks <= k)) for k in ks}
    mms = float(np.mean(S[np.arange(S.shape[0]), gt]))
    return RetrievalMetrics(r_at, float(np.median(ranks)), mms, ranks)


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def dsl(S, inv_temp: float = 100.0) -> SimilarityMatrix:
    """Dual-softmax re-scoring: row softmax times column softmax."""
    m = S.S if isinstance(S, SimilarityMatrix) else _array(S)
    scaled = inv_temp * np.asarray(m, dtype=np.float64)
    out = _softmax(scaled, axis=1) * _softmax(scaled, axis=0)
    if isinstance(S, SimilarityMatrix):
        return SimilarityMatrix(out, S.row_ids, S.col_ids)
    return SimilarityMatrix(out)


def prompt(class_name: str, template: str = "a clip showing {}") -> str:
    return template.format(class_name)


def zero_shot_classify(video_emb, class_names: Sequence[str], encode: Callable[[list[str]], object],
                       template: str = "a clip showing {}") -> np.ndarray:
    """Label each video with the class whose prompt embedding is most similar."""
    if not class_names:
        raise ConfigError("zero-shot classification needs at least one class")
    cls_emb = _array(encode([prompt(c, template) for c in class_names]))
    return np.argmax(_array(video_emb) @ cls_emb.T, axis=1)


def multi_choice(video_emb, candidates, true_index) -> float:
    """Percent of videos whose true candidate scores highest.

    ``candidates`` is ``[G, C, D]``; ties go to the lower candidate index.
    """
    v = _array(video_emb)
    c = _array(candidates)
    scores = np.einsum("gd,gcd->gc", v, c)
    return 100.0 * float(np.mean(np.argmax(scores, axis=1) == np.asarray(true_index)))


@dataclass
class ProbeResult:
    top1: float
    top5: float
    weight: np.ndarray
    bias: np.ndarray


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    k = min(k, logits.shape[1])
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return 100.0 * float(np.mean((top == np.asarray(labels)[:, None]).any(axis=1)))


def linear_probe(features, labels, val_features, val_labels, n_classes: int | None = None,
                 epochs: int = 100, lr: float = 0.1, batch_size: int = 512, seed: int = 0) -> ProbeResult:
    """Train one linear layer on frozen features with plain minibatch SGD."""
    x = np.asarray(_array(features), dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    xv = np.asarray(_array(val_features), dtype=np.float64)
    yv = np.asarray(val_labels, dtype=np.int64)
    n_classes = int(max(y.max(), yv.max()) + 1) if n_classes is None else n_classes
    missing = sorted(set(range(n_classes)) - set(y.tolist()))
    if missing:
        raise ConfigError(f"classes {missing} have no training examples")
    rng = np.random.default_rng(seed)
    with nc.precision("f64"):
        w = Tensor(np.zeros((x.shape[1], n_classes)), requires_grad=True)
        b = Tensor(np.zeros(n_classes), requires_grad=True)
        for _ in range(epochs):
            order = rng.permutation(len(x))
            for start in range(0, len(x), batch_size):
                idx = order[start:start + batch_size]
                w.grad = b.grad = None
                loss = nc.cross_entropy_logits(nc.linear(Tensor(x[idx]), w, b), y[idx])
                loss.backward()
                w.data -= lr * w.grad
                b.data -= lr * b.grad
    logits = xv @ w.data + b.data
    return ProbeResult(topk_accuracy(logits, yv, 1), topk_accuracy(logits, yv, 5), w.data, b.data)


# -- reports ----------------------------------------------------------------------
def format_report(metrics: Mapping[str, float], title: str = "evaluation") -> str:
    width = max((len(k) for k in metrics), default=0)
    lines = [title, "-" * len(title)]
    lines += [f"{k.ljust(width)}  {v:.4f}" if isinstance(v, float) else f"{k.ljust(width)}  {v}"
              for k, v in metrics.items()]
    return "\n".join(lines) + "\n"


def write_metrics(metrics: Mapping[str, float], report_path: str | Path, tsv_path: str | Path,
                  title: str = "evaluation") -> None:
    Path(report_path).write_text(format_report(metrics, title), encoding="utf-8")
    Path(tsv_path).write_text("".join(f"{k}\t{v}\n" for k, v in metrics.items()), encoding="utf-8")


def read_metrics(tsv_path: str | Path) -> dict[str, float]:
    out = {}
    for line in Path(tsv_path).read_text(encoding="utf-8").splitlines():
        k, v = line.split("\t")
        out[k] = float(v)
    return out


def write_curve(rows: Sequence[tuple], path: str | Path, header: Sequence[str] = ("step", "loss", "ts_accuracy")) -> None:
    text = "\t".join(header) + "\n" + "".join("\t".join(str(c) for c in r) + "\n" for r in rows)
    Path(path).write_text(text, encoding="utf-8")
