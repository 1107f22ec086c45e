import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsda.model import (
    ModelConfig,
    TimeFrequencyModel,
    classify,
    cross_entropy,
    load_checkpoint,
    reconstruction_loss,
    save_checkpoint,
    unit_rows,
)
from tsda.numerics import Adam, ParameterSet, grad_check, no_grad
from tsda.spectral import dft_forward, dft_inverse, smooth, to_polar, zero_pad_modes


def small(**kw):
    base = dict(channels=2, length=32, n_classes=3, modes=8, time_channels=(4, 8, 8), kernel=3, feature_len=4)
    base.update(kw)
    return ModelConfig(**base)


def cosine(T, k, channels=1):
    t = np.arange(T)
    return np.tile(np.cos(2 * np.pi * k * t / T), (channels, 1))


# -- configuration -----------------------------------------------------------------------

def test_config_rejects_too_many_modes():
    with pytest.raises(ValueError, match="modes"):
        ModelConfig(length=16, modes=10)


def test_config_rejects_short_series():
    with pytest.raises(ValueError):
        ModelConfig(length=3)


def test_config_text_round_trip():
    cfg = small(amplitude_norm="none", frequency_branch=False)
    assert ModelConfig.from_text(cfg.to_text()) == cfg


def test_default_modes_follow_length():
    assert ModelConfig(length=256).modes == 64
    assert ModelConfig(length=20).modes == 11


# -- encode ------------------------------------------------------------------------------

def test_latent_width():
    cfg = small()
    m = TimeFrequencyModel(cfg)
    z = m.encode(np.random.default_rng(0).normal(size=(5, 2, 32)))
    assert z.shape == (5, 2 * 2 * 8 + 8 * 4) == (5, cfg.latent_dim)
    lf = m.latent(z)
    assert lf.e_freq.shape == (5, 32) and lf.e_time.shape == (5, 32)


def test_encode_zero_input():
    m = TimeFrequencyModel(small())
    z = m.encode(np.zeros((3, 2, 32)), training=False).data
    np.testing.assert_array_equal(z[:, : m.config.freq_dim], 0)
    blocks = m.encode_time(np.zeros((3, 2, 32)), training=False).data
    np.testing.assert_array_equal(z[:, m.config.freq_dim :], blocks)


def test_encode_pure_cosine_matches_spectral_chain():
    cfg = small(channels=1, modes=10)
    m = TimeFrequencyModel(cfg)
    x = cosine(32, 1)
    e_f = m.encode_frequency(x[None]).data[0]
    s = to_polar(dft_forward(smooth(x))[:, :10], 32)
    np.testing.assert_allclose(e_f[:10], s.amplitude[0], atol=1e-12)
    np.testing.assert_allclose(e_f[10:], s.phase[0], atol=1e-12)
    amp = e_f[:10]
    # the Hann window spreads a mode-1 tone over modes 0..2 (DC picks up as much as mode 1)
    assert abs(amp[1] - 0.25) < 0.01
    assert np.sum(amp[3:] ** 2) < 0.01 * np.sum(amp[:3] ** 2)


@pytest.mark.parametrize("norm,gain", [("length", 1.0), ("unitary", np.sqrt(32)), ("none", 32.0)])
def test_amplitude_scaling(norm, gain):
    x = np.random.default_rng(1).normal(size=(2, 2, 32))
    ref = TimeFrequencyModel(small()).encode_frequency(x).data
    out = TimeFrequencyModel(small(amplitude_norm=norm)).encode_frequency(x).data
    k = 2 * 8
    np.testing.assert_allclose(out[:, :k], gain * ref[:, :k], rtol=1e-12)
    np.testing.assert_allclose(out[:, k:], ref[:, k:])


def test_encode_shape_error():
    with pytest.raises(ValueError, match="expected batch"):
        TimeFrequencyModel(small()).encode(np.zeros((2, 3, 32)))


def test_time_only_model():
    m = TimeFrequencyModel(small(frequency_branch=False))
    assert "enc.spec.B_re" not in m.params
    assert m.encode(np.ones((2, 2, 32))).shape == (2, 32)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_frequency_branch_lipschitz(seed):
    rng = np.random.default_rng(seed)
    m = TimeFrequencyModel(small())
    m.params["enc.spec.B_re"] = rng.normal(size=(2, 8))
    m.params["enc.spec.B_im"] = rng.normal(size=(2, 8))
    x = rng.normal(size=(1, 2, 32))
    delta = rng.normal(size=(1, 2, 32)) * 10.0 ** rng.uniform(-4, 0)
    a0 = m.encode_frequency(x).data[0, :16].reshape(2, 8)
    a1 = m.encode_frequency(x + delta).data[0, :16].reshape(2, 8)
    B = np.abs(m.params["enc.spec.B_re"].data + 1j * m.params["enc.spec.B_im"].data)
    # per channel: |d a[m]| <= ||delta_c||_1 * |B[c, m]| / T
    bound = np.abs(delta[0]).sum(axis=1, keepdims=True) * B / 32
    assert np.all(np.abs(a1 - a0) <= bound * (1 + 1e-9) + 1e-15)


def test_encode_decode_deterministic_and_finite():
    x = np.random.default_rng(2).normal(size=(4, 2, 32))
    outs = []
    for _ in range(2):
        m = TimeFrequencyModel(small(), seed=7)
        with no_grad():
            outs.append(m.decode(m.encode(x, training=False)).data)
    assert np.all(np.isfinite(outs[0]))
    np.testing.assert_array_equal(outs[0], outs[1])


def test_encoder_gradients():
    m = TimeFrequencyModel(small(length=16, modes=5, time_channels=(2, 3, 3), feature_len=2))
    x = np.random.default_rng(3).normal(size=(3, 2, 16))
    u = np.random.default_rng(4).normal(size=(3, m.config.latent_dim))
    names = ["enc.spec.B_re", "enc.spec.B_im", "enc.time.0.conv.weight", "enc.time.2.bn.weight"]
    # B_im = 0 leaves the DC term on the atan2 branch cut, where finite differences are meaningless
    m.params["enc.spec.B_re"] = np.random.default_rng(5).normal(size=(2, 5))
    m.params["enc.spec.B_im"] = np.random.default_rng(6).normal(size=(2, 5))
    sub = ParameterSet.from_arrays({k: m.params[k].data for k in names})

    def f(p):
        for k in names:
            m.params[k] = p[k]
        return (m.encode(x) * u).sum()

    assert grad_check(f, sub, max_coords=40) < 1e-5


# -- decode ------------------------------------------------------------------------------

def _zero_decoder(m):
    m.params["dec.time.weight"] = np.zeros_like(m.params["dec.time.weight"].data)
    m.params["dec.time.bias"] = np.zeros_like(m.params["dec.time.bias"].data)


@pytest.mark.parametrize("norm", ["length", "none"])
def test_decode_of_encode_is_windowed_low_pass(norm):
    m = TimeFrequencyModel(small(amplitude_norm=norm))
    _zero_decoder(m)
    x = np.random.default_rng(5).normal(size=(3, 2, 32))
    out = m.decode(m.encode(x, training=False)).data
    oracle = dft_inverse(zero_pad_modes(dft_forward(smooth(x))[..., :8], 32), 32)
    np.testing.assert_allclose(out, oracle, atol=1e-10)


def test_decode_zero_latent():
    m = TimeFrequencyModel(small())
    np.testing.assert_array_equal(m.decode(np.zeros((2, m.config.latent_dim))).data, 0)


def test_decode_width_error():
    with pytest.raises(ValueError, match="latent width"):
        TimeFrequencyModel(small()).decode(np.zeros((1, 5)))


def test_decoder_output_length_uneven_stride():
    m = TimeFrequencyModel(small(length=30, feature_len=4))
    assert m.decode(np.zeros((1, m.config.latent_dim))).shape == (1, 2, 30)


def test_autoencoder_overfits_one_sample():
    cfg = small(channels=1, length=16, modes=9, time_channels=(4, 8, 8), feature_len=4)
    m = TimeFrequencyModel(cfg, seed=0)
    x = np.sin(np.linspace(0, 3, 16))[None, None, :] + 0.3
    opt = Adam(m.params, lr=0.01)
    for _ in range(1500):
        opt.zero_grad()
        loss = reconstruction_loss(x, m.decode(m.encode(x, training=False)))
        loss.backward()
        opt.step()
    with no_grad():
        final = reconstruction_loss(x, m.decode(m.encode(x, training=False))).data
    assert final < 1e-2


# -- classifier and losses ---------------------------------------------------------------

def test_classify_examples():
    W = np.eye(3)
    np.testing.assert_allclose(classify(np.array([0, 2.0, 0]), W).data, [0, 1, 0])
    W2 = np.array([[1.0, 0, 0], [0, 1, 0]])
    np.testing.assert_allclose(classify(np.array([0, 0, 5.0]), W2).data, [0, 0])


def test_classify_matches_dot_products():
    rng = np.random.default_rng(6)
    z, W = rng.normal(size=(4, 7)), rng.normal(size=(3, 7))
    ref = np.array([[W[c] @ zi / np.linalg.norm(zi) for c in range(3)] for zi in z])
    np.testing.assert_allclose(classify(z, W).data, ref, atol=1e-12)


def test_classify_zero_vector():
    with pytest.raises(ValueError, match="zero-norm"):
        classify(np.zeros(3), np.eye(3))
    with pytest.raises(ValueError):
        unit_rows(np.zeros((2, 3)))


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 1000))
def test_classify_scale_invariant(alpha, seed):
    rng = np.random.default_rng(seed)
    z, W = rng.normal(size=5), rng.normal(size=(3, 5))
    np.testing.assert_allclose(classify(alpha * z, W).data, classify(z, W).data, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50), st.integers(0, 1000))
def test_argmax_ignores_logit_shift(c, seed):
    logits = np.random.default_rng(seed).normal(size=6)
    assert np.argmax(logits + c) == np.argmax(logits)
    # cross entropy is shift invariant as well
    assert np.isclose(cross_entropy(logits + c, 2).data, cross_entropy(logits, 2).data)


def test_cross_entropy_examples():
    assert np.isclose(cross_entropy(np.zeros(6), 3).data, np.log(6))
    assert cross_entropy(np.array([200.0, 0, 0]), 0).data < 1e-12
    with pytest.raises(ValueError, match="labels"):
        cross_entropy(np.zeros(3), 3)
    with pytest.raises(ValueError):
        cross_entropy(np.zeros(3), -1)


def test_cross_entropy_gradient():
    rng = np.random.default_rng(8)
    p = ParameterSet.from_arrays({"l": rng.normal(size=(4, 5))})
    labels = np.array([0, 4, 2, 2])
    assert grad_check(lambda p: cross_entropy(p["l"], labels), p) < 1e-6


def test_reconstruction_loss_examples():
    x = np.random.default_rng(9).normal(size=(2, 3, 4))
    assert reconstruction_loss(x, x).data == 0
    assert reconstruction_loss(np.ones(2), np.zeros(2)).data == 1
    y = np.random.default_rng(10).normal(size=(2, 3, 4))
    assert abs(reconstruction_loss(x, y).data - np.mean(np.abs(x - y))) <= 1e-12
    with pytest.raises(ValueError, match="shape"):
        reconstruction_loss(np.ones(3), np.ones(4))


# -- checkpoints -------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    m = TimeFrequencyModel(small(amplitude_norm="none"), seed=3)
    m.buffers["enc.time.1.bn.running_mean"][:] = 0.25
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m, extra_text="note=1\n")
    m2, text = load_checkpoint(path)
    assert m2.config == m.config
    assert "note=1" in text
    for k, v in m.state_arrays().items():
        np.testing.assert_array_equal(m2.state_arrays()[k], v)


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + b"\0" * 20)
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(bad)
    good = tmp_path / "m.ckpt"
    save_checkpoint(good, TimeFrequencyModel(small()))
    cut = tmp_path / "cut.ckpt"
    cut.write_bytes(good.read_bytes()[:-10])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(cut)


def test_copy_is_independent():
    m = TimeFrequencyModel(small())
    c = m.copy()
    c.params["cls.W"].data[...] = 0
    c.buffers["enc.time.0.bn.running_mean"][:] = 5
    assert np.any(m.prototypes != 0)
    assert np.all(m.buffers["enc.time.0.bn.running_mean"] == 0)
