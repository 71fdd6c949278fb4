"""Learned time-domain filterbank.

A stack of dilated 1-D convolutions (SELU between layers) is applied to
each 160-sample unit of a frame independently; average pooling over the
surviving time axis leaves one response per filter, so a 160x200 frame
becomes a 40x200 feature matrix.  Because the stack never mixes units,
the whole frame can be pushed through as a batch of units.

The linear part of the stack (kernels only, biases and SELUs ignored)
composes into one equivalent FIR filterbank; effective_filterbank()
materializes those impulse responses and layer_frequency_response() their
spectra, which is what the ablation tooling plots against.
"""

from dataclasses import dataclass

import numpy as np

from . import nd
from .audio import FRAME_UNITS, UNIT_SAMPLES, SpeechFrame
from .nd import ConvSpec, Tensor
from .rand import stream

DEFAULT_LAYERS = (
    ConvSpec(1, 16, 7, dilation=1),
    ConvSpec(16, 32, 5, dilation=2),
    ConvSpec(32, 40, 5, dilation=4),
    ConvSpec(40, 40, 3, dilation=2),
)


@dataclass(frozen=True)
class FilterbankConfig:
    layers: tuple = DEFAULT_LAYERS
    unit_length: int = UNIT_SAMPLES
    output_channels: int = 40

    def __post_init__(self):
        if not self.layers:
            raise ValueError("filterbank needs at least one layer")
        if self.layers[0].in_channels != 1:
            raise ValueError("first layer must take 1 input channel (raw samples)")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.in_channels != prev.out_channels:
                raise ValueError(
                    f"layer chain broken: {prev.out_channels} outputs feed "
                    f"{cur.in_channels} inputs"
                )
        if self.layers[-1].out_channels != self.output_channels:
            raise ValueError(
                f"last layer emits {self.layers[-1].out_channels} channels, "
                f"config promises {self.output_channels}"
            )
        self.final_length()  # raises if the stack eats the whole unit

    def final_length(self):
        length = self.unit_length
        for spec in self.layers:
            length = nd.backend.out_length(length, spec.kernel_size, spec.stride, spec.dilation)
        return length

    def receptive_field(self):
        return 1 + sum((s.kernel_size - 1) * s.dilation for s in self.layers)


@dataclass
class DeepVoxFeature:
    """40x200 filter responses for one frame."""

    values: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"feature must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature contains NaN or Inf")


def init_filterbank_params(cfg, seed, prefix="fb"):
    """LeCun-normal weights (SELU wants unit fan-in variance), zero biases."""
    params = {}
    for i, spec in enumerate(cfg.layers):
        rng = stream(seed, "init", prefix, i)
        std = (spec.in_channels * spec.kernel_size) ** -0.5
        w = rng.normal(0.0, std, (spec.out_channels, spec.in_channels, spec.kernel_size))
        params[f"{prefix}.l{i}.w"] = Tensor(w.astype(np.float32), requires_grad=True)
        if spec.bias:
            params[f"{prefix}.l{i}.b"] = Tensor(np.zeros(spec.out_channels, dtype=np.float32),
                                                requires_grad=True)
    return params


def unit_responses(units, params, cfg, prefix="fb"):
    """units: Tensor [M, 1, unit_length] -> Tensor [M, output_channels]."""
    x = units if isinstance(units, Tensor) else Tensor(units)
    last = len(cfg.layers) - 1
    for i, spec in enumerate(cfg.layers):
        w = params[f"{prefix}.l{i}.w"]
        b = params.get(f"{prefix}.l{i}.b")
        x = nd.conv1d(x, w, b, stride=spec.stride, dilation=spec.dilation)
        if i != last:
            x = nd.selu(x)
    x = nd.avg_pool1d(x, window=x.shape[2])
    return nd.reshape(x, (x.shape[0], x.shape[1]))


def frame_features(frames, params, cfg, prefix="fb"):
    """frames: np [B, 160, 200] -> Tensor [B, output_channels, 200]."""
    frames = np.asarray(frames)
    if frames.ndim != 3 or frames.shape[1] != cfg.unit_length or frames.shape[2] != FRAME_UNITS:
        raise ValueError(
            f"expected frames [B, {cfg.unit_length}, {FRAME_UNITS}], got {frames.shape}"
        )
    b = frames.shape[0]
    units = np.ascontiguousarray(
        frames.transpose(0, 2, 1).reshape(b * FRAME_UNITS, 1, cfg.unit_length)
    )
    r = unit_responses(Tensor(units), params, cfg, prefix)
    r = nd.reshape(r, (b, FRAME_UNITS, cfg.output_channels))
    return nd.transpose(r, (0, 2, 1))


def extract_features(frame, params, cfg, prefix="fb"):
    """SpeechFrame -> DeepVoxFeature (no gradient tracking)."""
    units = frame.units if isinstance(frame, SpeechFrame) else np.asarray(frame)
    out = frame_features(units[None].astype(np.float32), params, cfg, prefix)
    provenance = ""
    if isinstance(frame, SpeechFrame):
        provenance = f"{frame.source_id}/{frame.clip_id}"
    return DeepVoxFeature(out.data[0].copy(), provenance=provenance)


def _upsampled_taps(w, dilation):
    """Insert dilation-1 zeros between taps: [O, C, K] -> [O, C, (K-1)*d+1]."""
    o, c, k = w.shape
    up = np.zeros((o, c, (k - 1) * dilation + 1), dtype=np.float64)
    up[:, :, ::dilation] = w
    return up


def effective_filterbank(params, cfg, prefix="fb", upto=None):
    """Equivalent FIR impulse responses of the kernel cascade.

    Stacked cross-correlations compose by plain convolution of the
    dilation-upsampled taps; biases and SELUs are ignored (this describes
    the linear skeleton, not the full nonlinear map).  Returns float64
    [output_channels, receptive_field] (or the partial composition up to
    layer index `upto`).
    """
    layers = cfg.layers if upto is None else cfg.layers[: upto + 1]
    eff = None
    for i, spec in enumerate(layers):
        if spec.stride != 1:
            raise ValueError("effective_filterbank requires stride 1 throughout")
        w = params[f"{prefix}.l{i}.w"].data.astype(np.float64)
        up = _upsampled_taps(w, spec.dilation)
        if eff is None:
            eff = up
            continue
        o, mid, klen = up.shape
        new = np.zeros((o, eff.shape[1], eff.shape[2] + klen - 1))
        for oo in range(o):
            for m in range(mid):
                for c in range(eff.shape[1]):
                    new[oo, c] += np.convolve(up[oo, m], eff[m, c])
        eff = new
    return eff[:, 0, :]


def layer_frequency_response(params, cfg, layer_index, prefix="fb", n_fft=1024,
                             sample_rate=8000):
    """(freqs_hz, magnitude): summed |DFT| of the composed kernels up to and
    including layer_index, on n_fft//2+1 bins spanning 0..sample_rate/2."""
    if not 0 <= layer_index < len(cfg.layers):
        raise ValueError(f"layer_index {layer_index} out of range for {len(cfg.layers)} layers")
    eff = effective_filterbank(params, cfg, prefix=prefix, upto=layer_index)
    spectra = np.abs(np.fft.rfft(eff, n=n_fft, axis=1))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    return freqs, spectra.sum(axis=0)
