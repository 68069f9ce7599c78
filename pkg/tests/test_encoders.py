import numpy as np
import pytest

from ovstad import tensor as T
from ovstad.encoders import (
    ClipError,
    DualEncoder,
    EncoderConfig,
    TokenizationError,
    VideoClip,
    Vocabulary,
    normalize_text,
    render_prompt,
    resize_position_grid,
)
from ovstad.objectives import info_nce_loss

CORPUS = ["a person running", "a person volleyball spiking", "a person run", "someone jumps over a fence",
          "the person moves left fast"]


@pytest.fixture(scope="module")
def model():
    return DualEncoder(EncoderConfig(), Vocabulary.build(CORPUS), seed=0)


def clip(seed=0, value=None):
    c = EncoderConfig()
    shape = (c.clip_length, c.channels, c.image_size, c.image_size)
    frames = np.full(shape, value) if value is not None else np.random.default_rng(seed).uniform(0, 1, shape)
    return VideoClip(frames, keyframe_index=c.clip_length // 2)


def test_shape_contract(model):
    f_g, f_v = model.video_encode(clip())
    assert f_v.shape == (2, 64, 4, 4)
    assert f_g.shape == (64,)
    assert model.text_encode("a person running").shape == (64,)
    assert model.prompt_embed("run").shape == (64,)


@pytest.mark.identity
def test_zero_clip_is_finite_and_deterministic():
    vocab = Vocabulary.build(CORPUS)
    a = DualEncoder(EncoderConfig(), vocab, seed=3).video_encode(clip(value=0.0))
    b = DualEncoder(EncoderConfig(), vocab, seed=3).video_encode(clip(value=0.0))
    assert np.all(np.isfinite(a[0].data)) and np.all(np.isfinite(a[1].data))
    assert a[0].data.tobytes() == b[0].data.tobytes()


@pytest.mark.identity
def test_video_purity(model):
    a, b = model.video_encode(clip(1)), model.video_encode(clip(1))
    assert a[0].data.tobytes() == b[0].data.tobytes()
    assert a[1].data.tobytes() == b[1].data.tobytes()


def test_brightness_shift_changes_feature_map(model):
    base = clip(2)
    shifted = VideoClip(np.clip(base.frames * 0.8 + 0.1, 0, 1), base.keyframe_index)
    assert not np.allclose(model.video_encode(base)[1].data, model.video_encode(shifted)[1].data)


def test_clip_validation(model):
    with pytest.raises(ClipError):
        VideoClip(np.zeros((8, 3, 32)), 0)
    with pytest.raises(ClipError):
        VideoClip(np.zeros((8, 3, 32, 32)), 8)
    with pytest.raises(ClipError):
        VideoClip(np.full((8, 3, 32, 32), 1.5), 0)
    with pytest.raises(ClipError, match="frames"):
        model.video_encode(VideoClip(np.zeros((4, 3, 32, 32)), 0))
    with pytest.raises(ClipError, match="channels"):
        model.video_encode(VideoClip(np.zeros((8, 1, 32, 32)), 0))


@pytest.mark.identity
def test_text_purity_and_normalization(model):
    a = model.text_encode("a person running").data
    assert a.tobytes() == model.text_encode("a person running").data.tobytes()
    assert a.tobytes() == model.text_encode("a person running ").data.tobytes()
    assert a.tobytes() == model.text_encode("A person, running!").data.tobytes()


def test_distinct_sentences_differ(model):
    assert not np.array_equal(model.text_encode("a person running").data,
                              model.text_encode("someone jumps over a fence").data)


def test_tokenization_errors(model):
    with pytest.raises(TokenizationError):
        model.text_encode("   ")
    with pytest.raises(TokenizationError):
        model.text_encode("?!")
    with pytest.raises(TokenizationError):
        model.text_encode("zebra xylophone")
    with pytest.raises(TokenizationError):
        model.prompt_embed("")


def test_normalize_text():
    assert normalize_text("A Person, RUNNING!  ") == ["a", "person", "running"]
    assert normalize_text("volleyball_spiking") == ["volleyball", "spiking"]


@pytest.mark.identity
def test_prompt_template(model):
    assert render_prompt("volleyball_spiking") == "a person volleyball spiking"
    assert render_prompt("run") == "a person run"
    for name in ["volleyball_spiking", "run", "moves_left fast", "running"]:
        assert model.prompt_embed(name).data.tobytes() == model.text_encode(render_prompt(name)).data.tobytes()


def test_batch_text_matches_single(model):
    texts = ["a person running", "someone jumps over a fence"]
    batch = model.text_encode_batch(texts).data
    for i, t in enumerate(texts):
        assert batch[i].tobytes() == model.text_encode(t).data.tobytes()


def test_vocabulary_file_round_trip(tmp_path):
    v = Vocabulary.build(CORPUS)
    v.save(tmp_path / "vocab.txt")
    w = Vocabulary.load(tmp_path / "vocab.txt")
    assert w.tokens == v.tokens
    assert w.encode("a person running") == v.encode("a person running")


def _alignment_loss(m, frames):
    f_g, _ = m.video_encode_batch(frames)
    f_t = m.text_encode_batch(["a person running", "someone jumps over a fence"])
    return info_nce_loss(f_g, f_t, m.temperature())


def _frames():
    c = EncoderConfig()
    return np.random.default_rng(5).uniform(0, 1, (2, c.clip_length, c.channels, c.image_size, c.image_size))


@pytest.mark.identity
def test_freeze_text_blocks_text_gradients():
    m = DualEncoder(EncoderConfig(), Vocabulary.build(CORPUS), seed=1)
    m.freeze("text")
    _alignment_loss(m, _frames()).backward()
    assert all(p.grad is None for p in m.tower_params("text").values())
    video = m.tower_params("video")
    assert all(p.grad is not None and np.any(p.grad != 0) for p in video.values())


@pytest.mark.identity
def test_no_freeze_both_towers_get_gradients():
    m = DualEncoder(EncoderConfig(), Vocabulary.build(CORPUS), seed=1)
    _alignment_loss(m, _frames()).backward()
    for tower in ("video", "text"):
        assert all(p.grad is not None for p in m.tower_params(tower).values())
    m.freeze("text")
    m.unfreeze("text")
    assert all(p.requires_grad for p in m.tower_params("text").values())


def test_unknown_tower():
    m = DualEncoder(EncoderConfig(), Vocabulary.build(CORPUS))
    with pytest.raises(ValueError):
        m.freeze("audio")


def test_every_parameter_participates():
    m = DualEncoder(EncoderConfig(), Vocabulary.build(CORPUS), seed=2)
    frames = _frames()
    with T.no_grad():
        base = _alignment_loss(m, frames).item()
    rng = np.random.default_rng(0)
    for name, p in m.params.items():
        old = p.data.copy()
        p.set_data(old + rng.normal(0, 0.05, old.shape))
        with T.no_grad():
            changed = _alignment_loss(m, frames).item()
        p.set_data(old)
        assert changed != base, name


def test_state_dict_round_trip():
    vocab = Vocabulary.build(CORPUS)
    a, b = DualEncoder(EncoderConfig(), vocab, seed=1), DualEncoder(EncoderConfig(), vocab, seed=2)
    b.load_state_dict(a.state_dict())
    assert a.text_encode("a person run").data.tobytes() == b.text_encode("a person run").data.tobytes()
    with pytest.raises(KeyError):
        b.load_state_dict({})


def test_position_grid_resize():
    pos = T.Tensor(np.random.default_rng(0).normal(size=(4, 4, 3)))
    assert np.array_equal(resize_position_grid(pos, 4, 4).data, pos.data.reshape(16, 3))
    const = T.Tensor(np.full((4, 4, 3), 0.25))
    assert np.allclose(resize_position_grid(const, 6, 8).data, 0.25, atol=1e-15)


def test_larger_input_resolution_runs():
    m = DualEncoder(EncoderConfig(), Vocabulary.build(CORPUS))
    frames = np.random.default_rng(0).uniform(0, 1, (1, 8, 3, 48, 64))
    f_g, f_v = m.video_encode_batch(frames)
    assert f_v.shape == (1, 2, 64, 6, 8) and f_g.shape == (1, 64)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        EncoderConfig(width=65)
    c = EncoderConfig(depth=1)
    assert EncoderConfig.from_dict({k: str(v) for k, v in c.to_dict().items()}) == c
