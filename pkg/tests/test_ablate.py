"""Relevance signals, guided backprop gating, PSD overlap, pitch estimation."""

import numpy as np
import pytest

from deepvox.ablate import (RelevanceSignal, UnvoicedError, estimate_f0,
                            feature_relevance, flatten_relevance, guided_backprop,
                            mean_relevance, plain_backprop, psd, psd_overlap)
from deepvox.audio import AudioBuffer, frames_from_buffer
from deepvox.filterbank import FilterbankConfig, init_filterbank_params
from deepvox.nd import ConvSpec, Tensor

FS = 8000


def small_cfg():
    return FilterbankConfig(
        layers=(ConvSpec(1, 8, 9, dilation=1), ConvSpec(8, 8, 5, dilation=2)),
        unit_length=160,
        output_channels=8,
    )


@pytest.fixture(scope="module")
def cfg():
    return small_cfg()


@pytest.fixture(scope="module")
def params(cfg):
    return init_filterbank_params(cfg, seed=19)


@pytest.fixture(scope="module")
def frame():
    rng = np.random.default_rng(4)
    return rng.standard_normal((160, 200)).astype(np.float32)


def sine(freq, seconds=0.5, fs=FS, amp=0.5):
    t = np.arange(int(seconds * fs)) / fs
    return amp * np.sin(2 * np.pi * freq * t)


# ---- relevance signals ----

def test_relevance_signal_shape_guard():
    with pytest.raises(ValueError, match="160x200"):
        RelevanceSignal(np.zeros((160, 199)))


def test_index_validation(frame, params, cfg):
    with pytest.raises(ValueError, match="feature_index"):
        guided_backprop(frame, params, cfg, 8, 0)
    with pytest.raises(ValueError, match="unit_index"):
        guided_backprop(frame, params, cfg, 0, 200)
    with pytest.raises(ValueError, match="feature_index"):
        plain_backprop(frame, params, cfg, -1, 0)
    with pytest.raises(ValueError, match="feature_index"):
        feature_relevance(frame, params, cfg, 99)


def test_guided_backprop_is_column_local(frame, params, cfg):
    rel = guided_backprop(frame, params, cfg, feature_index=3, unit_index=57)
    assert rel.values.shape == (160, 200)
    assert rel.feature_index == 3
    mask = np.ones(200, bool)
    mask[57] = False
    assert np.all(rel.values[:, mask] == 0.0)
    assert np.any(rel.values[:, 57] != 0.0)


def test_guided_vanishes_wherever_plain_vanishes(params, cfg):
    rng = np.random.default_rng(11)
    for _ in range(3):
        fr = rng.standard_normal((160, 200)).astype(np.float32)
        for f in range(cfg.output_channels):
            g = guided_backprop(fr, params, cfg, f, 50).values
            p = plain_backprop(fr, params, cfg, f, 50).values
            assert np.all(g[p == 0.0] == 0.0)


def test_guided_equals_plain_on_all_positive_net(cfg, frame):
    # positive weights, positive bias, positive input: every pre-activation
    # and every backward gradient is positive, so the gates never trigger
    pos = {k: Tensor(np.abs(p.data) + 0.01, requires_grad=True)
           for k, p in init_filterbank_params(cfg, seed=2).items()}
    fr = np.abs(frame) + 0.1
    g = guided_backprop(fr, pos, cfg, 2, 10).values
    p = plain_backprop(fr, pos, cfg, 2, 10).values
    assert np.array_equal(g, p)
    assert np.any(g != 0.0)


def test_feature_relevance_sums_unit_passes(frame, params, cfg):
    whole = feature_relevance(frame, params, cfg, feature_index=5).values
    total = np.zeros((160, 200))
    for u in range(200):
        total += guided_backprop(frame, params, cfg, 5, u).values
    assert np.allclose(whole, total, rtol=1e-10, atol=1e-12)


def test_mean_relevance_is_feature_mean(frame, params, cfg):
    m = mean_relevance(frame, params, cfg)
    assert m.feature_index == "mean"
    total = np.zeros((160, 200))
    for f in range(cfg.output_channels):
        total += feature_relevance(frame, params, cfg, f).values
    assert np.array_equal(m.values, total / cfg.output_channels)


def test_speech_frame_input_accepted(params, cfg):
    buf = AudioBuffer(sine(220, 2.0, amp=0.4), FS)
    fr = list(frames_from_buffer(buf, source_id="s", utt_id="u"))[0]
    rel = feature_relevance(fr, params, cfg, 0)
    assert rel.values.shape == (160, 200)


# ---- flatten ----

def test_flatten_relevance_overlap_add():
    out = flatten_relevance(np.ones((160, 200)))
    assert out.shape == (16080,)
    assert np.all(out[:80] == 1.0)
    assert np.all(out[80:16000] == 2.0)
    assert np.all(out[16000:] == 1.0)
    with pytest.raises(ValueError, match="160x200"):
        flatten_relevance(np.ones((200, 160)))


def test_flatten_relevance_places_columns():
    v = np.zeros((160, 200))
    v[:, 3] = 1.0
    out = flatten_relevance(v)
    assert np.all(out[240:400] == 1.0)
    assert out[:240].sum() == 0.0 and out[400:].sum() == 0.0


# ---- spectra ----

def test_psd_peak_at_tone():
    freqs, pxx = psd(sine(1000, 1.0))
    assert freqs.shape == pxx.shape == (129,)
    assert freqs[np.argmax(pxx)] == pytest.approx(1000.0, abs=FS / 256)


def test_psd_validation():
    with pytest.raises(ValueError, match="at least"):
        psd(np.zeros(100))
    with pytest.raises(ValueError, match="1-D"):
        psd(np.zeros((2, 300)))


def test_psd_overlap_identical_vs_disjoint():
    a = sine(300, 2.01)
    same = psd_overlap(a, a)
    assert [b[:2] for b in same] == [(0.0, 500.0), (500.0, 1000.0),
                                     (1000.0, 2000.0), (2000.0, 4000.0)]
    assert same[0][2] > 0.999
    other = psd_overlap(a, sine(3000, 2.01))
    assert other[0][2] < same[0][2]
    assert 0.0 <= other[0][2] <= 1.0


def test_psd_overlap_accepts_matrix_and_signal_forms():
    rng = np.random.default_rng(8)
    mat = rng.standard_normal((160, 200))
    ref = rng.standard_normal(16080)
    from_mat = psd_overlap(ref, mat)
    from_flat = psd_overlap(ref, flatten_relevance(mat))
    from_sig = psd_overlap(ref, RelevanceSignal(mat))
    assert from_mat == from_flat == from_sig


# ---- pitch ----

def test_estimate_f0_pure_tone():
    assert estimate_f0(sine(200, 0.5)) == pytest.approx(200.0, rel=0.005)
    assert estimate_f0(sine(123, 0.5)) == pytest.approx(123.0, rel=0.005)


def test_estimate_f0_on_synthetic_voice():
    from deepvox.synth import SpeakerProfile, synth_utterance

    prof = SpeakerProfile(speaker_id="p", f0_hz=200.0,
                          formants=((500.0, 80.0), (1500.0, 120.0), (2500.0, 150.0)),
                          jitter_pct=0.3, seed=6)
    buf = synth_utterance(prof, 1.0, seed=0)
    assert estimate_f0(buf.samples) == pytest.approx(200.0, rel=0.02)


def test_estimate_f0_refines_between_integer_lags():
    f = FS / 41.5  # true period halfway between lags 41 and 42
    assert estimate_f0(sine(f, 0.5)) == pytest.approx(f, rel=0.003)


def test_estimate_f0_prefers_shortest_competitive_peak():
    # weak undertone at half the frequency: the global autocorrelation max
    # sits at the double period, but the 200 Hz peak is within 10% of it
    x = sine(200, 0.5) + 0.04 * sine(100, 0.5)
    assert estimate_f0(x) == pytest.approx(200.0, rel=0.01)


def test_estimate_f0_unvoiced_and_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(UnvoicedError, match="no autocorrelation peak"):
        estimate_f0(rng.standard_normal(4000))
    with pytest.raises(UnvoicedError, match="no energy"):
        estimate_f0(np.zeros(4000))
    with pytest.raises(ValueError, match="at least"):
        estimate_f0(np.zeros(100))
    with pytest.raises(ValueError, match="1-D"):
        estimate_f0(np.zeros((2, 4000)))


def test_psd_tone_dominance_and_noise_flatness():
    freqs, pxx = psd(sine(1000, 2.0, amp=1.0))
    peak_db = 10 * np.log10(pxx.max() / np.median(pxx))
    assert peak_db >= 20.0
    noise = np.random.default_rng(5).standard_normal(100_000)
    _, pnn = psd(noise)
    flat_db = 10 * np.log10(pnn.max() / np.median(pnn))
    assert flat_db < 10.0


def test_psd_overlap_band_limited_relevance():
    rng = np.random.default_rng(13)
    wide = sum(sine(f, 2.01) for f in (250, 750, 1500, 3000))
    wide = wide + 0.01 * rng.standard_normal(wide.size)
    band = sine(750, 2.01) + 0.6 * sine(820, 2.01)  # lives in (500, 1000)
    scores = psd_overlap(wide, band)
    by_band = {(lo, hi): s for lo, hi, s in scores}
    target = by_band[(500.0, 1000.0)]
    assert target == max(by_band.values())
    assert target > 0.5


def test_psd_overlap_disjoint_spectra_low():
    # window leakage keeps a floor in every band, and the normalized
    # correlation of a peak against a flat floor is ~1/sqrt(bins) ~ 0.25,
    # so "disjoint" lands well under the matched-band score of ~1, not at 0
    a = sine(300, 2.01) + sine(1200, 2.01)
    b = sine(700, 2.01) + sine(2600, 2.01)
    for _lo, _hi, s in psd_overlap(a, b):
        assert s < 0.35
    matched = psd_overlap(a, a)
    assert all(s > 0.999 for _lo, _hi, s in matched)
