"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The training criteria (9, 10) build the default dataset and train three
full-size models; they take tens of minutes on one core and are marked
``slow``.
"""
import hashlib
import io
import math
import time
from contextlib import redirect_stdout

import numpy as np
import pytest

from tvts import numcore as nc
from tvts.cli.checkpoint import load_checkpoint
from tvts.cli.config import RunConfig, parse_config_text
from tvts.cli.evaluate import heldout_eval
from tvts.cli.main import main
from tvts.cli.train import _make_batch, forward_batch, load_split, load_vocab, train
from tvts.evalkit import multi_choice, read_metrics, recall_and_rank
from tvts.model import build_model
from tvts.numcore import Tensor
from tvts.objectives import ts_loss_from_logits, vtc_loss
from tvts.sampling import TranscriptTrack, masked_count, sample_segments, sample_tube_mask
from tvts.videnc import VideoEncoder, VideoEncoderConfig

SMALL_DATA = ["n_train=48", "n_heldout=16"]


def sets(*pairs):
    out = []
    for p in pairs:
        out += ["--set", p]
    return out


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("acc_small")
    assert main(["generate-data", "--out", str(root)] + sets(*SMALL_DATA)) == 0
    return root


# -- 1 ----------------------------------------------------------------------------
def test_criterion_01_gradcheck(record):
    buf = io.StringIO()
    t0 = time.time()
    with redirect_stdout(buf):
        code = main(["gradcheck", "--epsilon", "1e-5"])
    seconds = time.time() - t0
    last = buf.getvalue().strip().splitlines()[-1]
    err = float(last.split("max relative error ")[1].split()[0])
    ok = code == 0 and err < 1e-6 and seconds < 60
    record(1, ok, f"max rel err {err:.2e} (< 1e-6), {seconds:.1f}s (< 60s)")
    assert ok, buf.getvalue()


# -- 2 ----------------------------------------------------------------------------
def test_criterion_02_zero_temporal_init(record):
    cfg = RunConfig()
    enc = VideoEncoder(cfg.video_config(), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    N = cfg.video_config().N
    worst = 0.0
    for _ in range(10):     # 10 batches of 10 clips
        clips = rng.random((10, cfg.T, 3, cfg.H, cfg.W)).astype(np.float32)
        masks = [sample_tube_mask(N, cfg.T, cfg.rho, rng) for _ in range(10)]
        with nc.no_grad():
            a, b = enc(clips, masks), enc(clips, masks, temporal=False)
        worst = max(worst, float(np.max(np.abs(a.tokens.data - b.tokens.data))),
                    float(np.max(np.abs(a.cls.data - b.cls.data))))
    ok = worst <= 1e-6
    record(2, ok, f"max abs diff {worst:.2e} over 100 clips (<= 1e-6)")
    assert ok


# -- 3 ----------------------------------------------------------------------------
def test_criterion_03_stop_gradient(small_data, record):
    cfg = RunConfig(data_dir=str(small_data), regime="FT", batch_size=8, L_V=2, D_V=32, T=4)
    vocab = load_vocab(small_data)
    samples = load_split(small_data, "train", cfg.fps)
    model = build_model(cfg, vocab)
    text = [p for p in model.parameters() if p.name.startswith("text.")]
    video = [p for p in model.parameters() if p.name.startswith("video.")]
    assert all(not p.frozen for p in text)
    nonzero_text, video_hit = 0, 0
    for step in range(1, 21):
        out = forward_batch(model, _make_batch(cfg, samples, vocab, step), cfg.loss_config())
        nc.zero_grad(model.parameters())
        (out.ts * cfg.lam).backward()
        nonzero_text += sum(p.grad is not None and bool(np.any(p.grad)) for p in text)
        video_hit += any(p.grad is not None and bool(np.any(p.grad)) for p in video)
    ok = nonzero_text == 0 and video_hit == 20
    record(3, ok, f"{nonzero_text} nonzero text grads over 20 batches; video grads nonzero in {video_hit}/20")
    assert ok


# -- 4 ----------------------------------------------------------------------------
def test_criterion_04_freeze(small_data, tmp_path, record):
    cfg = RunConfig(data_dir=str(small_data), regime="PF", L_T=4, L_tune=1, steps=100, eval_interval=0,
                    batch_size=4, L_V=1, D_V=16, heads=2, T=4, head_depth=1)
    vocab = load_vocab(small_data)
    before = build_model(cfg, vocab).snapshot()
    res = train(cfg, progress=lambda s: None)
    after = res.model.snapshot()
    frozen = [k for k in before if k.startswith(("text.blocks.0.", "text.blocks.1.", "text.blocks.2.",
                                                  "text.tok_emb", "text.pos_emb"))]
    tuned = [k for k in before if k.startswith("text.blocks.3.")]
    moved_frozen = [k for k in frozen if before[k].tobytes() != after[k].tobytes()]
    moved_tuned = [k for k in tuned if before[k].tobytes() != after[k].tobytes()]
    ok = not moved_frozen and len(moved_tuned) == len(tuned)
    record(4, ok, f"{len(frozen) - len(moved_frozen)}/{len(frozen)} frozen tensors bitwise unchanged; "
                  f"{len(moved_tuned)}/{len(tuned)} block-4 tensors changed")
    assert ok, (moved_frozen, sorted(set(tuned) - set(moved_tuned)))


# -- 5 ----------------------------------------------------------------------------
def test_criterion_05_masking_budget(record):
    cfg = VideoEncoderConfig(L_V=1, D_V=8, heads=2, T=8, H=32, W=32, P=8, D=8)
    enc = VideoEncoder(cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    N, T = cfg.N, cfg.T
    bad = 0
    for rho in (0.0, 0.25, 0.5, 0.7):
        want = T * (N - round(rho * N))
        masks = [sample_tube_mask(N, T, rho, rng) for _ in range(1000)]
        for m in masks:
            rows = [m.frame_mask(t) for t in range(T)]
            tube = all(np.array_equal(rows[0], r) for r in rows)
            bad += (m.n_visible_tokens != want) or not tube or masked_count(N, rho) != round(rho * N)
        # count the tokens the encoder actually emits, 100 clips at a time
        for i in range(0, 1000, 100):
            with nc.no_grad():
                out = enc(np.zeros((100, T, 3, cfg.H, cfg.W), np.float32), masks[i:i + 100])
            bad += 100 * (out.tokens.shape[1] - 1 != want)
    ok = bad == 0
    record(5, ok, f"{bad} violations over 4x1000 masks (visible = T(N - round(rho N)), tube property)")
    assert ok


# -- 6 ----------------------------------------------------------------------------
def _brute_window(words, start, l):
    return [w for w, a in words if start <= a <= start + l]


def test_criterion_06_segment_sampling(record):
    rng = np.random.default_rng(0)
    bad = 0
    for _ in range(10_000):
        K = int(rng.integers(1, 7))
        l = float(rng.choice([1.0, 2.0, 2.5, 5.0, 7.0]))
        span = K * (l + 1) - 1
        duration = span + float(rng.uniform(0, 15))
        times = rng.uniform(0, duration, size=int(rng.integers(0, 60)))
        # every other track uses an integer start and words on integer and half seconds,
        # so window edges are hit exactly
        L_start = None
        if rng.random() < 0.5:
            L_start = float(rng.integers(0, int(duration - span) + 1))
            times = np.concatenate([times, np.arange(0.0, duration, 0.5)])
        times = np.sort(times)
        words = [(f"w{i}", float(a)) for i, a in enumerate(times)]
        track = TranscriptTrack(words, duration)
        s = sample_segments(track, K, l, rng, L_start=L_start)
        starts = s.starts
        bad += not np.allclose(starts, s.L_start + np.arange(K) * (l + 1), rtol=0, atol=1e-12)
        bad += not 0.0 <= s.L_start <= duration - span + 1e-12
        # disjoint closed windows: each ends strictly before the next begins
        bad += any(starts[k] + l >= starts[k + 1] for k in range(K - 1))
        for k in range(K):
            bad += s.chronological[k] != _brute_window(words, starts[k], l)
        for i in range(K):
            bad += s.segments[i] != s.chronological[s.order[i] - 1]
        bad += sorted(s.order) != list(range(1, K + 1))
    ok = bad == 0
    record(6, ok, f"{bad} violations over 10^4 random tracks (L_k, disjointness, word assignment)")
    assert ok


# -- 7 ----------------------------------------------------------------------------
def test_criterion_07_loss_anchors(record):
    rng = np.random.default_rng(0)
    errs = []
    with nc.precision("f64"):
        for K in (2, 4, 6):
            order = np.stack([rng.permutation(K) + 1 for _ in range(5)])
            errs.append(abs(ts_loss_from_logits(Tensor(np.zeros((5, K, K))), order).item() - math.log(K)))
        for B in (2, 4, 16):
            e = rng.normal(size=(1, 32))
            e = np.tile(e / np.linalg.norm(e), (B, 1))
            errs.append(abs(vtc_loss(Tensor(e), Tensor(e), 0.05).item() - 2 * math.log(B)))
        e = rng.normal(size=(1, 32))
        e /= np.linalg.norm(e)
        single = vtc_loss(Tensor(e), Tensor(e), 0.05).item()
    ok = max(errs) < 1e-4 and single == 0.0
    record(7, ok, f"max anchor error {max(errs):.1e} (< 1e-4); B=1 VTC "
                  f"{'exactly 0' if single == 0.0 else repr(single)}")
    assert ok


# -- 8 ----------------------------------------------------------------------------
def _oracle_ranks(S, gt):
    out = []
    for q in range(S.shape[0]):
        order = sorted(range(S.shape[1]), key=lambda j: (-S[q, j], j))
        out.append(order.index(gt[q]) + 1)
    return np.array(out)


def test_criterion_08_metric_oracles(record):
    rng = np.random.default_rng(0)
    t0 = time.time()
    bad = 0
    for i in range(1000):
        n = int(rng.integers(1, 65))
        S = rng.normal(size=(n, n)) if i % 2 else rng.integers(0, 4, size=(n, n)).astype(float)
        gt = rng.permutation(n)
        m = recall_and_rank(S, gt)
        ranks = _oracle_ranks(S, gt)
        bad += not np.array_equal(m.ranks, ranks)
        for k in (1, 5, 10):
            bad += m.r_at[k] != 100.0 * np.mean(ranks <= k)
        bad += m.mdr != float(np.median(ranks))
        # multi-choice: n videos, C candidates each
        C = int(rng.integers(1, 65))
        v = rng.normal(size=(n, 4)) if i % 2 else rng.integers(-1, 2, size=(n, 4)).astype(float)
        c = rng.normal(size=(n, C, 4)) if i % 2 else rng.integers(-1, 2, size=(n, C, 4)).astype(float)
        true = rng.integers(0, C, size=n)
        hits = [int(max(range(C), key=lambda j: (float(v[g] @ c[g, j]), -j)) == true[g]) for g in range(n)]
        bad += multi_choice(v, c, true) != 100.0 * np.mean(hits)
    seconds = time.time() - t0
    ok = bad == 0 and seconds < 30
    record(8, ok, f"{bad} mismatches over 1000 matrices up to 64x64, {seconds:.1f}s (< 30s)")
    assert ok


# -- 9, 10 --------------------------------------------------------------------------
@pytest.fixture(scope="module")
def default_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("acc_default")
    assert main(["generate-data", "--out", str(root)]) == 0
    return root


@pytest.fixture(scope="module")
def regime_runs(default_data, tmp_path_factory):
    """Default-config training in each regime, same seed and budget."""
    base = RunConfig(data_dir=str(default_data), eval_interval=RunConfig().steps)
    train_samples = load_split(default_data, "train", base.fps)
    heldout = load_split(default_data, "heldout", base.fps)
    runs = {}
    for regime in ("PF", "FF", "FT"):
        cfg = base.replace(regime=regime)
        res = train(cfg, tmp_path_factory.mktemp(f"run_{regime}"), evaluate_fn=heldout_eval,
                    progress=lambda s: None, train_samples=train_samples, heldout=heldout)
        runs[regime] = (cfg, res)
    return runs


@pytest.mark.slow
def test_criterion_09_learnability(regime_runs, record):
    cfg, res = regime_runs["PF"]
    m = res.evals[-1]
    ok = (cfg.steps <= 2000 and m["ts_accuracy"] >= 0.90 and m["R@1"] >= 40.0
          and res.seconds <= 30 * 60)
    record(9, ok, f"TS acc {m['ts_accuracy']:.3f} (>= 0.90), R@1 {m['R@1']:.1f}% (>= 40) on "
                  f"{cfg.eval_size} held-out items after {cfg.steps} steps, {res.seconds / 60:.1f} min (<= 30)")
    assert ok


@pytest.mark.slow
def test_criterion_10_regime_direction(regime_runs, record):
    r1 = {k: res.evals[-1]["R@1"] for k, (_, res) in regime_runs.items()}
    ok = r1["PF"] >= r1["FF"] - 5.0
    record(10, ok, f"R@1 PF {r1['PF']:.1f}  FF {r1['FF']:.1f}  FT {r1['FT']:.1f} "
                   f"(gate: PF >= FF - 5; FT reported only)")
    assert ok


# -- 11 -----------------------------------------------------------------------------
def test_criterion_11_determinism_and_persistence(small_data, tmp_path, record, capsys):
    common = ["L_V=1", "D_V=16", "heads=2", "T=4", "batch_size=4", "steps=8", "eval_interval=0",
              "eval_size=8", f"data_dir={small_data}"]
    run_a = tmp_path / "a"
    assert main(["train", "--out", str(run_a)] + sets(*common)) == 0
    run_b = tmp_path / "b"
    assert main(["train", "--config", str(run_a / "run_manifest.txt"), "--out", str(run_b)]) == 0
    la = read_metrics(run_a / "train_metrics.tsv")["final_loss"]
    lb = read_metrics(run_b / "train_metrics.tsv")["final_loss"]
    rerun_ok = abs(la - lb) <= 1e-6

    # checkpoint round trip, bitwise
    tensors, cfg_text = load_checkpoint(run_a / "checkpoint.tvc")
    cfg = RunConfig.from_mapping(parse_config_text(cfg_text))
    model = build_model(cfg, load_vocab(small_data))
    model.load_state_dict(tensors)
    back = model.state_dict()
    round_ok = all(back[k].tobytes() == v.tobytes() and back[k].dtype == v.dtype for k, v in tensors.items())

    # evaluation leaves checkpoint and output identical
    ckpt = run_a / "checkpoint.tvc"
    digest = hashlib.sha256(ckpt.read_bytes()).hexdigest()
    capsys.readouterr()
    main(["evaluate", str(ckpt)])
    first = capsys.readouterr().out
    main(["evaluate", str(ckpt)])
    second = capsys.readouterr().out
    eval_ok = first == second and hashlib.sha256(ckpt.read_bytes()).hexdigest() == digest

    ok = rerun_ok and round_ok and eval_ok
    record(11, ok, f"manifest rerun |dloss| {abs(la - lb):.1e} (<= 1e-6); checkpoint round trip "
                   f"{'bitwise' if round_ok else 'DIFFERS'}; evaluate side-effect free: {eval_ok}")
    assert ok
