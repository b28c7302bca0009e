"""``tvts`` command line: generate-data, train, evaluate, gradcheck, sweep.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 IO or
format error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from tvts import numcore as nc
from tvts.cli.checkpoint import load_checkpoint
from tvts.cli.config import RunConfig, load_config, parse_config_text
from tvts.cli.evaluate import evaluate, heldout_eval
from tvts.cli.train import Batch, dataset_paths, forward_batch, load_split, load_vocab, train
from tvts.errors import (ConfigError, ContractError, DimensionError, FormatError, NumericError,
                         SampleError, ValidationError)
from tvts.evalkit import format_report, write_metrics
from tvts.model import build_model
from tvts.sampling import sample_tube_mask, segment_span
from tvts.synthdata import DatasetSpec, generate_dataset, vocabulary_words
from tvts.textenc import EOS, Vocabulary

log = logging.getLogger("tvts")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
GRADCHECK_THRESHOLD = 1e-6
SWEEP_AXES = {"rho": ("rho", (0.0, 0.25, 0.5, 0.7)), "l_tune": ("L_tune", None)}


def _overrides(pairs: list[str] | None) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args) -> RunConfig:
    return load_config(args.config, _overrides(args.set))


# -- verbs ------------------------------------------------------------------------
def cmd_generate_data(args) -> int:
    cfg = _config(args)
    need = segment_span(cfg.K, cfg.l)
    if cfg.duration < need:
        raise ConfigError(f"duration {cfg.duration}s is below the {need}s required for K={cfg.K}, l={cfg.l}")
    root = Path(args.out or cfg.data_dir)
    common = dict(seed=cfg.data_seed, duration=cfg.duration, fps=cfg.fps, H=cfg.H, W=cfg.W,
                  K=cfg.K, l=cfg.l, caption_fraction=cfg.caption_fraction)
    try:
        generate_dataset(root / "train", DatasetSpec(n=cfg.n_train, prefix="s", **common))
        generate_dataset(root / "heldout", DatasetSpec(n=cfg.n_heldout, prefix="h", **common))
        Vocabulary(vocabulary_words()).save(root / "vocab.txt")
    except OSError as exc:
        raise FormatError(f"cannot write dataset under {root}: {exc}") from exc
    print(f"wrote {cfg.n_train} train and {cfg.n_heldout} held-out samples to {root}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg.out_dir)
    res = train(cfg, out, evaluate_fn=heldout_eval if cfg.eval_interval else None, progress=print)
    print(f"final loss {res.final_loss:.6f} after {cfg.steps} steps ({res.seconds:.0f}s); artefacts in {out}")
    if res.evals:
        print(format_report({k: float(v) for k, v in res.evals[-1].items()}, "held-out"), end="")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    tensors, snapshot = load_checkpoint(args.checkpoint)
    values = parse_config_text(snapshot, args.checkpoint)
    values.update(_overrides(args.set))
    cfg = RunConfig.from_mapping(values)
    vocab_path = Path(args.checkpoint).parent / "vocab.txt"
    vocab = Vocabulary.load(vocab_path) if vocab_path.exists() else load_vocab(cfg.data_dir)
    model = build_model(cfg, vocab)
    model.load_state_dict(tensors, strict=True)
    samples = load_split(cfg.data_dir, args.split, cfg.fps)
    probe = load_split(cfg.data_dir, "train", cfg.fps)[: args.probe] if args.probe else None
    metrics = evaluate(model, samples, cfg, use_dsl=args.dsl, use_multi_choice=args.multi_choice,
                       use_zero_shot=args.zero_shot, probe_samples=probe)
    print(format_report(metrics, f"evaluation ({args.split})"), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics(metrics, out / "eval_report.txt", out / "eval_metrics.tsv", f"evaluation ({args.split})")
    return EXIT_OK


def minimized_config(**changes) -> RunConfig:
    """Smallest model exercising every code path: one block per tower, N=4, T=2, K=2."""
    base = dict(L_V=1, L_T=1, D=8, D_V=8, D_T=8, heads=2, text_heads=2, T=2, H=16, W=16, P=8,
                K=2, l=1.0, batch_size=2, context_len=6, rho=0.5, L_tune=1, dtype="f64",
                head_depth=1)
    base.update(changes)
    return RunConfig(**base)


def gradcheck_problem(cfg: RunConfig, seed: int = 0):
    """Model plus ``(parameters, loss closure)`` pairs on fixed random inputs.

    Finite differences see straight through the stop-gradient, so text
    parameters are checked against the contrastive term alone while video
    and sorting-head parameters are checked against the full loss.
    """
    rng = np.random.default_rng(seed)
    vocab = Vocabulary(vocabulary_words())
    with nc.precision("f64"):
        model = build_model(cfg, vocab)
        # move every weight off its init so zero-initialised paths carry gradient
        for p in model.parameters():
            p.data[...] += rng.normal(0.0, 0.2, size=p.data.shape)
    B, K, ctx, N = cfg.batch_size, cfg.K, cfg.context_len, (cfg.H // cfg.P) * (cfg.W // cfg.P)
    seg = rng.integers(3, len(vocab), size=(B, K, ctx))
    eos_at = rng.integers(1, ctx, size=(B, K))
    for b in range(B):
        for k in range(K):
            seg[b, k, eos_at[b, k]] = EOS
            seg[b, k, eos_at[b, k] + 1:] = 0
    batch = Batch(
        frames=rng.random((B, cfg.T, 3, cfg.H, cfg.W)),
        masks=[sample_tube_mask(N, cfg.T, cfg.rho, rng) for _ in range(B)],
        ts_index=np.arange(B),
        seg_tokens=seg,
        order=np.stack([rng.permutation(K) + 1 for _ in range(B)]),
        cap_index=np.zeros(0, np.int64),
        cap_tokens=np.zeros((0, ctx), np.int64),
    )
    loss_cfg = cfg.loss_config()

    def full():
        return forward_batch(model, batch, loss_cfg).loss

    def contrastive():
        return forward_batch(model, batch, loss_cfg, with_ts=False).vtc

    trainable = model.trainable()
    text = [p for p in trainable if p.name.startswith("text.")]
    rest = [p for p in trainable if not p.name.startswith("text.")]
    return model, [(rest, full), (text, contrastive)]


def cmd_gradcheck(args) -> int:
    t0 = time.time()
    cfg = RunConfig.from_mapping(_overrides(args.set), base=minimized_config())
    _, groups = gradcheck_problem(cfg, args.seed)
    per: dict[str, float] = {}
    with nc.precision("f64"):
        for params, loss in groups:
            _, errs = nc.grad_check(loss, params, epsilon=args.epsilon, max_coords=args.max_coords or None,
                                    rng=np.random.default_rng(args.seed), per_param=True)
            per.update(errs)
    worst = max(per.values())
    blocks: dict[str, float] = {}
    for name, err in per.items():
        parts = name.split(".")
        key = ".".join(parts[:3] if "blocks" in parts else parts[:2])
        blocks[key] = max(blocks.get(key, 0.0), err)
    width = max(len(k) for k in blocks)
    for k, v in blocks.items():
        print(f"{k.ljust(width)}  {v:.3e}")
    ok = worst < args.threshold
    print(f"max relative error {worst:.3e} over {len(per)} tensors "
          f"({time.time() - t0:.1f}s): {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def sweep_values(axis: str, cfg: RunConfig, values: list[str] | None) -> list:
    key, default = SWEEP_AXES[axis]
    if values:
        return [float(v) if key == "rho" else int(v) for v in values]
    return list(default) if default is not None else list(range(cfg.L_T + 1))


def cmd_sweep(args) -> int:
    cfg = _config(args)
    key, _ = SWEEP_AXES[args.axis]
    root = Path(args.out or cfg.out_dir)
    train_samples = load_split(cfg.data_dir, "train", cfg.fps)
    heldout = load_split(cfg.data_dir, "heldout", cfg.fps)
    rows = []
    for value in sweep_values(args.axis, cfg, args.values):
        run = cfg.replace(**{key: value})
        run.validate()
        res = train(run, root / f"{args.axis}_{value}", evaluate_fn=heldout_eval, progress=log.info,
                    train_samples=train_samples, heldout=heldout)
        m = res.evals[-1] if res.evals else heldout_eval(res.model, heldout, run)
        rows.append((value, m["R@1"], m.get("ts_accuracy", float("nan")), res.final_loss))
        print(f"{args.axis}={value}  R@1 {m['R@1']:.2f}  ts_acc {rows[-1][2]:.3f}", flush=True)
    table = f"{args.axis}\tR@1\tts_accuracy\tfinal_loss\n" + "".join(
        f"{v}\t{r:.4f}\t{a:.4f}\t{l:.6f}\n" for v, r, a, l in rows)
    root.mkdir(parents=True, exist_ok=True)
    (root / f"sweep_{args.axis}.tsv").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tvts", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
        sp.add_argument("--out", help="output directory")

    g = sub.add_parser("generate-data", help="write the synthetic dataset")
    common(g)
    g.set_defaults(fn=cmd_generate_data)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    common(t)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--split", default="heldout", choices=("heldout", "train"))
    e.add_argument("--dsl", action="store_true", help="add the dual-softmax metric block")
    e.add_argument("--multi-choice", action="store_true")
    e.add_argument("--zero-shot", action="store_true")
    e.add_argument("--probe", type=int, default=0, metavar="N",
                   help="linear probe trained on the first N training samples")
    e.add_argument("--set", action="append", metavar="KEY=VALUE")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_evaluate)

    c = sub.add_parser("gradcheck", help="finite-difference check of the minimized model")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--epsilon", type=float, default=1e-5)
    c.add_argument("--max-coords", type=int, default=24, help="coordinates probed per tensor (0: all)")
    c.add_argument("--threshold", type=float, default=GRADCHECK_THRESHOLD)
    c.add_argument("--set", action="append", metavar="KEY=VALUE")
    c.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("sweep", help="train one model per value of an ablation axis")
    common(s)
    s.add_argument("axis", choices=sorted(SWEEP_AXES))
    s.add_argument("--values", nargs="+")
    s.set_defaults(fn=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, SampleError, ValidationError, DimensionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ContractError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
