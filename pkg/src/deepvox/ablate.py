"""Relevance analysis: which parts of the waveform drive which filters.

Guided backprop runs the usual backward pass but gates every SELU so
gradient flows only where the forward pre-activation was positive and
the incoming gradient is positive; what reaches the input is a relevance
signal over the frame.  Because the filterbank never mixes units, the
relevance of feature f at unit u lives entirely in column u, and the
per-feature relevance (summed over all units) costs one backward pass
seeded across every unit at once.

The spectral side: Welch PSDs of the input and of the flattened
relevance, band-wise normalized correlation between them, and an
autocorrelation pitch estimator used to check that relevance tracks the
speaker's fundamental.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import welch

from . import nd
from .audio import FRAME_UNITS, SAMPLE_RATE, UNIT_SAMPLES, UNIT_STRIDE, SpeechFrame
from .filterbank import unit_responses

PSD_SEGMENT = 256
DEFAULT_BANDS = ((0.0, 500.0), (500.0, 1000.0), (1000.0, 2000.0), (2000.0, 4000.0))


class UnvoicedError(ValueError):
    """No periodicity above the voicing threshold."""


@dataclass
class RelevanceSignal:
    """Input-domain relevance for one frame: same 160x200 layout."""

    values: np.ndarray
    feature_index: object = None  # int for a single feature, "mean" for the average

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (UNIT_SAMPLES, FRAME_UNITS):
            raise ValueError(
                f"relevance must be {UNIT_SAMPLES}x{FRAME_UNITS}, got {self.values.shape}"
            )


def _frame_matrix(frame):
    units = frame.units if isinstance(frame, SpeechFrame) else np.asarray(frame)
    if units.shape != (UNIT_SAMPLES, FRAME_UNITS):
        raise ValueError(f"expected a {UNIT_SAMPLES}x{FRAME_UNITS} frame, got {units.shape}")
    return units.astype(np.float64)


def _params64(params):
    return {k: nd.Tensor(p.data.astype(np.float64)) for k, p in params.items()
            if k.startswith("fb.")}


def _input_gradient(frame, params, cfg, feature_index, unit_index=None, guided=True):
    """Gradient of the selected responses w.r.t. the raw frame.

    unit_index=None seeds the feature across all units in one pass (their
    gradients cannot interact across columns)."""
    units = _frame_matrix(frame).T[:, None, :]  # [200, 1, 160]
    if unit_index is None:
        x = nd.Tensor(units, requires_grad=True)
    else:
        x = nd.Tensor(units[unit_index : unit_index + 1], requires_grad=True)
    p64 = _params64(params)
    out = unit_responses(x, p64, cfg)  # [M, C]
    seed = np.zeros(out.shape, dtype=np.float64)
    seed[:, feature_index] = 1.0
    if guided:
        with nd.guided_gradients():
            out.backward(seed=seed)
    else:
        out.backward(seed=seed)
    grad = x.grad[:, 0, :]  # [M, 160]
    values = np.zeros((UNIT_SAMPLES, FRAME_UNITS))
    if unit_index is None:
        values[:, :] = grad.T
    else:
        values[:, unit_index] = grad[0]
    return values


def guided_backprop(frame, params, cfg, feature_index, unit_index):
    """Relevance of one (feature, unit) response as a 160x200 signal
    (nonzero only in column unit_index)."""
    if not 0 <= feature_index < cfg.output_channels:
        raise ValueError(f"feature_index {feature_index} out of range [0, {cfg.output_channels})")
    if not 0 <= unit_index < FRAME_UNITS:
        raise ValueError(f"unit_index {unit_index} out of range [0, {FRAME_UNITS})")
    values = _input_gradient(frame, params, cfg, feature_index, unit_index, guided=True)
    return RelevanceSignal(values, feature_index=feature_index)


def plain_backprop(frame, params, cfg, feature_index, unit_index):
    """Ungated counterpart of guided_backprop (the comparison baseline)."""
    if not 0 <= feature_index < cfg.output_channels:
        raise ValueError(f"feature_index {feature_index} out of range [0, {cfg.output_channels})")
    if not 0 <= unit_index < FRAME_UNITS:
        raise ValueError(f"unit_index {unit_index} out of range [0, {FRAME_UNITS})")
    values = _input_gradient(frame, params, cfg, feature_index, unit_index, guided=False)
    return RelevanceSignal(values, feature_index=feature_index)


def feature_relevance(frame, params, cfg, feature_index):
    """Relevance of one feature summed over all 200 unit positions."""
    if not 0 <= feature_index < cfg.output_channels:
        raise ValueError(f"feature_index {feature_index} out of range [0, {cfg.output_channels})")
    values = _input_gradient(frame, params, cfg, feature_index, unit_index=None, guided=True)
    return RelevanceSignal(values, feature_index=feature_index)


def mean_relevance(frame, params, cfg):
    """Mean over all features of the per-feature relevance signals."""
    total = np.zeros((UNIT_SAMPLES, FRAME_UNITS))
    for f in range(cfg.output_channels):
        total += feature_relevance(frame, params, cfg, f).values
    return RelevanceSignal(total / cfg.output_channels, feature_index="mean")


def flatten_relevance(values):
    """Overlap-add frame columns back onto the clip timeline (stride 80)."""
    values = np.asarray(values)
    if values.shape != (UNIT_SAMPLES, FRAME_UNITS):
        raise ValueError(f"expected {UNIT_SAMPLES}x{FRAME_UNITS}, got {values.shape}")
    n = UNIT_STRIDE * (FRAME_UNITS - 1) + UNIT_SAMPLES
    out = np.zeros(n)
    for j in range(FRAME_UNITS):
        out[j * UNIT_STRIDE : j * UNIT_STRIDE + UNIT_SAMPLES] += values[:, j]
    return out


def psd(signal, sample_rate=SAMPLE_RATE):
    """Welch PSD: 256-sample Hamming segments, 50% overlap."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1 or signal.size < PSD_SEGMENT:
        raise ValueError(f"need a 1-D signal of at least {PSD_SEGMENT} samples, got {signal.shape}")
    freqs, pxx = welch(signal, fs=sample_rate, window="hamming",
                       nperseg=PSD_SEGMENT, noverlap=PSD_SEGMENT // 2)
    return freqs, pxx


def psd_overlap(input_signal, relevance, bands=DEFAULT_BANDS, sample_rate=SAMPLE_RATE):
    """Band-wise normalized correlation between the PSDs of an input signal
    and a relevance signal.  relevance may be a RelevanceSignal, a 160x200
    matrix, or an already-flat 1-D signal.  Returns [(lo, hi, score), ...],
    scores in [0, 1] (0 when a band is empty on either side)."""
    if isinstance(relevance, RelevanceSignal):
        rel = flatten_relevance(relevance.values)
    else:
        rel = np.asarray(relevance, dtype=np.float64)
        if rel.ndim == 2:
            rel = flatten_relevance(rel)
    freqs_a, pxx_a = psd(input_signal, sample_rate)
    freqs_b, pxx_b = psd(rel, sample_rate)
    assert np.array_equal(freqs_a, freqs_b)
    out = []
    for lo, hi in bands:
        mask = (freqs_a >= lo) & ((freqs_a < hi) if hi < sample_rate / 2 else (freqs_a <= hi))
        a, b = pxx_a[mask], pxx_b[mask]
        denom = np.sqrt((a * a).sum() * (b * b).sum())
        out.append((lo, hi, float((a * b).sum() / denom) if denom > 0 else 0.0))
    return out


def estimate_f0(signal, f_min=80.0, f_max=400.0, sample_rate=SAMPLE_RATE,
                voicing_threshold=0.3):
    """Autocorrelation pitch estimate with parabolic peak refinement.

    Searches lags sample_rate/f_max .. sample_rate/f_min; raises
    UnvoicedError when the best normalized autocorrelation peak is below
    the voicing threshold."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"need a 1-D signal, got shape {x.shape}")
    min_len = int(np.ceil(2.0 * sample_rate / f_min))
    if x.size < min_len:
        raise ValueError(f"need at least {min_len} samples ({2.0:g} periods of f_min), got {x.size}")
    x = x - x.mean()
    n = x.size
    spec = np.fft.rfft(x, 2 * n)
    r = np.fft.irfft(spec * np.conj(spec))[:n]
    if r[0] <= 0.0:
        raise UnvoicedError("signal has no energy")
    r = r / r[0]
    lag_lo = int(np.ceil(sample_rate / f_max))
    lag_hi = int(np.floor(sample_rate / f_min))
    if lag_hi >= n:
        lag_hi = n - 1
    window = r[lag_lo : lag_hi + 1]
    best = int(np.argmax(window)) + lag_lo
    if r[best] < voicing_threshold:
        raise UnvoicedError(
            f"no autocorrelation peak above {voicing_threshold} in "
            f"[{f_min:g}, {f_max:g}] Hz (best {r[best]:.3f})"
        )
    # subharmonic guard: a peak at 2 or 3 periods can edge out the true one
    # by a hair, so take the shortest local-maximum lag competitive with the
    # global peak instead of the global peak itself
    k = best
    for cand in range(lag_lo, best):
        left = r[cand - 1] if cand > 0 else -np.inf
        if r[cand] >= left and r[cand] >= r[cand + 1] and r[cand] >= 0.9 * r[best]:
            k = cand
            break
    # parabolic interpolation around the peak
    if 0 < k < n - 1:
        denom = r[k - 1] - 2.0 * r[k] + r[k + 1]
        delta = 0.5 * (r[k - 1] - r[k + 1]) / denom if denom != 0.0 else 0.0
        delta = float(np.clip(delta, -0.5, 0.5))
    else:
        delta = 0.0
    return sample_rate / (k + delta)
