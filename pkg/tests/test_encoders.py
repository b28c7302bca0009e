import numpy as np
import pytest

from tvts import numcore as nc
from tvts.errors import ConfigError, ContractError, DimensionError
from tvts.sampling import no_mask, sample_tube_mask
from tvts.textenc import (EOS, PAD, UNK, TextEncoder, TextEncoderConfig, Vocabulary, apply_freeze,
                          eos_positions, freeze_partition, tokenize)
from tvts.videnc import VideoEncoder, VideoEncoderConfig, add_positional, patchify_pixels

SMALL = dict(L_V=2, D_V=16, heads=2, P=8, H=16, W=16, T=3, D=8)


def video(seed=0, **kw):
    return VideoEncoder(VideoEncoderConfig(**{**SMALL, **kw}), np.random.default_rng(seed))


# -- video ----------------------------------------------------------------------
def test_patchify_matches_loop():
    rng = np.random.default_rng(0)
    frames = rng.random((2, 3, 16, 24))
    out = patchify_pixels(frames, 8)
    assert out.shape == (2, 6, 3 * 64)
    for t in range(2):
        for n in range(6):
            y, x = divmod(n, 3)
            ref = frames[t, :, y * 8:(y + 1) * 8, x * 8:(x + 1) * 8].reshape(-1)
            np.testing.assert_array_equal(out[t, n], ref)


def test_positional_tables_are_shared():
    rng = np.random.default_rng(1)
    tok = nc.Tensor(np.zeros((2, 3, 4)))
    es, et = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
    out = add_positional(tok, nc.Tensor(es), nc.Tensor(et)).data
    for y in range(2):
        for x in range(3):
            np.testing.assert_allclose(out[y, x], es[x] + et[y])


def test_config_rejects_bad_patch_size():
    with pytest.raises(ConfigError):
        VideoEncoderConfig(H=20, W=16, P=8)


def test_temporal_output_projection_starts_at_zero():
    enc = video()
    for blk in enc.blocks:
        assert not np.any(blk.attn_t.out.weight.data) and not np.any(blk.attn_t.out.bias.data)
        assert blk.attn_t.out.weight.group == "new"
    assert enc.proj.group == "new" and enc.E_t.group == "inherited"


def test_zero_init_equals_spatial_only():
    enc = video()
    rng = np.random.default_rng(2)
    frames = rng.random((4, 3, 3, 16, 16))
    masks = [sample_tube_mask(4, 3, 0.5, rng) for _ in range(4)]
    full = enc(frames, masks)
    ref = enc(frames, masks, temporal=False)
    assert np.max(np.abs(full.tokens.data - ref.tokens.data)) <= 1e-6
    assert np.max(np.abs(full.cls.data - ref.cls.data)) <= 1e-6


def test_output_shapes_and_unit_cls():
    enc = video()
    rng = np.random.default_rng(3)
    out = enc(rng.random((2, 3, 3, 16, 16)), [sample_tube_mask(4, 3, 0.5, rng) for _ in range(2)])
    assert out.tokens.shape == (2, 1 + 3 * 2, 16)
    np.testing.assert_allclose(np.linalg.norm(out.cls.data, axis=-1), 1.0, atol=1e-5)
    assert len(out.visible_index[0]) == 6


def test_single_clip_equals_batched():
    enc = video()
    clip = np.random.default_rng(4).random((3, 3, 16, 16))
    with nc.precision("f64"):
        enc64 = video()
        a = enc64(clip).cls.data
        b = enc64(clip[None]).cls.data[0]
    np.testing.assert_allclose(a[0], b, atol=1e-12)
    assert enc(clip).cls.shape == (1, 8)


def test_masked_patches_do_not_influence_output():
    enc = video()
    rng = np.random.default_rng(5)
    clip = rng.random((1, 3, 3, 16, 16))
    m = sample_tube_mask(4, 3, 0.5, rng)
    hidden = int(m.masked_positions[0])
    y, x = divmod(hidden, 2)
    other = clip.copy()
    other[..., y * 8:(y + 1) * 8, x * 8:(x + 1) * 8] = rng.random((3, 3, 8, 8))
    np.testing.assert_array_equal(enc(clip, [m]).cls.data, enc(other, [m]).cls.data)


def test_wrong_clip_shape():
    with pytest.raises(DimensionError):
        video()(np.zeros((2, 3, 16, 16)))


def test_mixed_mask_counts_rejected():
    rng = np.random.default_rng(6)
    with pytest.raises(DimensionError):
        video()(rng.random((2, 3, 3, 16, 16)), [no_mask(4, 3), sample_tube_mask(4, 3, 0.5, rng)])


# -- text -----------------------------------------------------------------------
VOCAB = Vocabulary(["a", "clip", "showing", "circle", "left"])


def test_tokenize_pads_and_appends_eos():
    ids = tokenize("A clip showing circle", VOCAB, 8)
    assert ids.tolist() == [3, 4, 5, 6, EOS, PAD, PAD, PAD]
    assert tokenize("zebra", VOCAB, 4)[0] == UNK


def test_tokenize_truncation_keeps_eos():
    ids = tokenize(["circle"] * 10, VOCAB, 4)
    assert ids.tolist() == [6, 6, 6, EOS]


def test_vocabulary_round_trip(tmp_path):
    VOCAB.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt") == VOCAB


def test_eos_required():
    with pytest.raises(ContractError):
        eos_positions(np.array([[3, 4, 0]]))


def text_encoder(L_tune=1, seed=0):
    cfg = TextEncoderConfig(L_T=4, D_T=16, heads=2, vocab_size=len(VOCAB), context_len=8, D=8, L_tune=L_tune)
    return apply_freeze(TextEncoder(cfg, np.random.default_rng(seed)), L_tune)


def test_text_summary_ignores_tokens_after_eos():
    enc = text_encoder()
    a = tokenize("a clip", VOCAB, 8)
    b = a.copy()
    b[4:] = 7   # garbage after EOS
    np.testing.assert_allclose(enc(a[None]).data, enc(b[None]).data, atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(enc(a[None]).data), 1.0, atol=1e-5)


def test_freeze_partition_pf_ff_ft():
    enc = text_encoder(L_tune=1)
    frozen, train = freeze_partition(enc, 1)
    names = {p.name for p in frozen}
    assert "text.tok_emb" in names and "text.pos_emb" in names
    assert all(p.name.startswith(("text.blocks.3", "text.ln_final", "text.proj")) for p in train)
    _, train_ff = freeze_partition(enc, 0)
    assert train_ff == []
    frozen_ft, _ = freeze_partition(enc, 4)
    assert frozen_ft == []
    with pytest.raises(ConfigError):
        freeze_partition(enc, 5)


def test_apply_freeze_sets_flags():
    enc = text_encoder(L_tune=2)
    assert enc.trainable_blocks() == [2, 3]
    assert enc.tok_emb.frozen and not enc.proj.frozen
