"""Audio front end: buffers, voice activity detection, clip framing, noise mixing.

Everything downstream assumes 8 kHz mono.  A clip is exactly 2 seconds
(16000 samples); a frame is a 160x200 matrix whose columns are Hamming-
windowed 20 ms units taken every 10 ms across the clip.
"""

import wave
from dataclasses import dataclass

import numpy as np

from .rand import stream

SAMPLE_RATE = 8000
CLIP_SAMPLES = 16000          # 2 s
MIN_CLIP_REMAINDER = 8000     # pad a trailing piece >= 1 s, drop shorter
UNIT_SAMPLES = 160            # 20 ms
UNIT_STRIDE = 80              # 10 ms
FRAME_UNITS = 200
VAD_WINDOW = 200              # 25 ms energy windows

NOISE_KINDS = ("white", "harmonic_babble")


@dataclass
class AudioBuffer:
    """Mono audio in [-1, 1] at a known sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"audio must be 1-D, got shape {self.samples.shape}")
        if self.samples.size == 0:
            raise ValueError("empty audio")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio contains NaN or Inf")
        peak = np.abs(self.samples).max()
        if peak > 1.0 + 1e-9:
            raise ValueError(f"audio exceeds [-1, 1] (peak {peak:.6g})")
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration_s(self):
        return self.samples.size / self.sample_rate


@dataclass
class SpeechFrame:
    """160x200 windowed unit matrix plus provenance."""

    units: np.ndarray
    source_id: str = ""
    clip_id: str = ""

    def __post_init__(self):
        self.units = np.asarray(self.units)
        if self.units.shape != (UNIT_SAMPLES, FRAME_UNITS):
            raise ValueError(
                f"frame must be {UNIT_SAMPLES}x{FRAME_UNITS}, got {self.units.shape}"
            )


@dataclass
class DegradationSpec:
    """Additive-noise recipe: noise kind plus target SNR in dB."""

    noise_kind: str
    snr_db: float

    def __post_init__(self):
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.noise_kind!r}, expected one of {NOISE_KINDS}")


def hamming_window(n):
    """w[k] = 0.54 - 0.46 cos(2 pi k / (n - 1)), k = 0..n-1."""
    if n < 2:
        raise ValueError(f"window length must be >= 2, got {n}")
    k = np.arange(n, dtype=np.float64)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def detect_voice(buf, energy_floor_db=-30.0, min_segment_ms=100.0):
    """Energy VAD: sample ranges whose 25 ms windows sit above the floor.

    The floor is relative to the median window energy (mean square), so a
    fixed level works across recordings.  Segments shorter than
    min_segment_ms are dropped.  Returns [(start, end), ...) in samples.
    """
    x = buf.samples
    n = x.size
    n_win = -(-n // VAD_WINDOW)
    energies = np.empty(n_win)
    for i in range(n_win):
        chunk = x[i * VAD_WINDOW : (i + 1) * VAD_WINDOW]
        energies[i] = np.mean(chunk * chunk)
    floor = np.median(energies) * 10.0 ** (energy_floor_db / 10.0)
    voiced = energies > floor

    min_len = int(round(min_segment_ms * buf.sample_rate / 1000.0))
    segments = []
    i = 0
    while i < n_win:
        if not voiced[i]:
            i += 1
            continue
        j = i
        while j < n_win and voiced[j]:
            j += 1
        start, end = i * VAD_WINDOW, min(j * VAD_WINDOW, n)
        if end - start >= min_len:
            segments.append((start, end))
        i = j
    return segments


def segment_clips(buf, segments):
    """Concatenate voiced ranges and cut fixed 2 s clips.

    A trailing remainder of at least 1 s is zero-padded to a full clip;
    anything shorter is dropped.
    """
    if not segments:
        return []
    voiced = np.concatenate([buf.samples[a:b] for a, b in segments])
    clips = []
    full = voiced.size // CLIP_SAMPLES
    for i in range(full):
        clips.append(AudioBuffer(voiced[i * CLIP_SAMPLES : (i + 1) * CLIP_SAMPLES], buf.sample_rate))
    rem = voiced[full * CLIP_SAMPLES :]
    if rem.size >= MIN_CLIP_REMAINDER:
        padded = np.zeros(CLIP_SAMPLES)
        padded[: rem.size] = rem
        clips.append(AudioBuffer(padded, buf.sample_rate))
    return clips


def frame_clip(clip, source_id="", clip_id=""):
    """Slice a 2 s clip into a 160x200 frame of windowed units.

    Units start every 80 samples; the clip is zero-padded by 80 samples at
    the tail so the unit count comes out at exactly 200.
    """
    x = clip.samples
    if x.size != CLIP_SAMPLES:
        raise ValueError(f"clip must have {CLIP_SAMPLES} samples, got {x.size}")
    padded = np.concatenate([x, np.zeros(UNIT_STRIDE)])
    starts = np.lib.stride_tricks.sliding_window_view(padded, UNIT_SAMPLES)[::UNIT_STRIDE]
    assert starts.shape == (FRAME_UNITS, UNIT_SAMPLES)
    units = (starts * hamming_window(UNIT_SAMPLES)).T
    return SpeechFrame(np.ascontiguousarray(units), source_id=source_id, clip_id=clip_id)


def frames_from_buffer(buf, source_id="", utt_id="", energy_floor_db=-30.0, min_segment_ms=100.0):
    """VAD -> clips -> frames for one utterance."""
    segments = detect_voice(buf, energy_floor_db, min_segment_ms)
    clips = segment_clips(buf, segments)
    return [
        frame_clip(c, source_id=source_id, clip_id=f"{utt_id}#{i}")
        for i, c in enumerate(clips)
    ]


def _babble(n, rng):
    """Speech-shaped interference: a handful of drifting harmonic voices."""
    t = np.arange(n) / SAMPLE_RATE
    out = np.zeros(n)
    for _ in range(6):
        f0 = rng.uniform(120.0, 300.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        env = 1.0 + 0.5 * np.sin(2.0 * np.pi * rng.uniform(1.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
        voice = np.zeros(n)
        for h in range(1, 13):
            if h * f0 >= SAMPLE_RATE / 2:
                break
            voice += np.sin(2.0 * np.pi * h * f0 * t + phase * h) / h
        out += env * voice
    return out - out.mean()


def mix_noise(clean, spec, seed):
    """Add noise at an exact SNR; the noise is scaled, never the speech.

    If the mix clips, both components are peak-normalized together, which
    leaves the SNR untouched.
    """
    rng = stream(seed, "mix", spec.noise_kind)
    n = clean.samples.size
    if spec.noise_kind == "white":
        noise = rng.standard_normal(n)
    else:
        noise = _babble(n, rng)
    p_clean = np.mean(clean.samples**2)
    if p_clean == 0.0:
        raise ValueError("silent reference: cannot set an SNR against zero-power audio")
    p_noise = np.mean(noise**2)
    scale = np.sqrt(p_clean / (p_noise * 10.0 ** (spec.snr_db / 10.0)))
    mixed = clean.samples + scale * noise
    peak = np.abs(mixed).max()
    if peak > 1.0:
        mixed = mixed / peak
    return AudioBuffer(mixed, clean.sample_rate)


def read_wav(path):
    """16-bit PCM mono 8 kHz WAV -> AudioBuffer.  Anything else is rejected."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit")
        if fh.getframerate() != SAMPLE_RATE:
            raise ValueError(f"{path}: expected {SAMPLE_RATE} Hz, got {fh.getframerate()} Hz")
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise ValueError(f"{path}: empty audio")
    return AudioBuffer(pcm.astype(np.float64) / 32768.0)


def write_wav(path, buf):
    """AudioBuffer -> 16-bit PCM mono 8 kHz WAV."""
    if buf.sample_rate != SAMPLE_RATE:
        raise ValueError(f"can only write {SAMPLE_RATE} Hz audio, got {buf.sample_rate} Hz")
    pcm = np.clip(np.rint(buf.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(pcm.tobytes())
