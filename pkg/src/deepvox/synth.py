"""Synthetic speakers: a source-filter voice model.

A voice is a jittered glottal impulse train driven through three two-pole
resonators (the formants).  Identity lives in the fundamental and the
formant layout; jitter and shimmer make repeated utterances of one
speaker differ without moving the identity.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .audio import SAMPLE_RATE, AudioBuffer, write_wav
from .rand import stream

F0_RANGE = (120.0, 300.0)
# disjoint center ranges keep the formants strictly increasing by construction
FORMANT_CENTER_RANGES = ((300.0, 850.0), (950.0, 1900.0), (2000.0, 3200.0))
FORMANT_BW_RANGES = ((60.0, 120.0), (80.0, 160.0), (100.0, 200.0))
PEAK_LEVEL = 0.9
MIN_UTT_SECONDS = 0.5


@dataclass(frozen=True)
class SpeakerProfile:
    """Fixed per-speaker voice parameters."""

    speaker_id: str
    f0_hz: float
    formants: tuple          # ((center_hz, bandwidth_hz), ...) strictly increasing centers
    jitter_pct: float = 1.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = F0_RANGE
        if not lo <= self.f0_hz <= hi:
            raise ValueError(f"f0 {self.f0_hz:.1f} Hz outside [{lo}, {hi}]")
        centers = [c for c, _ in self.formants]
        if len(centers) != 3:
            raise ValueError(f"expected 3 formants, got {len(centers)}")
        if any(c2 <= c1 for c1, c2 in zip(centers, centers[1:])):
            raise ValueError(f"formant centers must be strictly increasing, got {centers}")
        if centers[-1] >= SAMPLE_RATE / 2:
            raise ValueError(f"formant {centers[-1]:.0f} Hz at or above Nyquist")
        if any(bw <= 0 for _, bw in self.formants):
            raise ValueError("formant bandwidths must be positive")


def make_speaker(seed, speaker_id=None):
    """Deterministic profile for a seed; equal seeds give equal profiles."""
    rng = stream(seed, "speaker")
    f0 = rng.uniform(*F0_RANGE)
    formants = tuple(
        (rng.uniform(*c_range), rng.uniform(*bw_range))
        for c_range, bw_range in zip(FORMANT_CENTER_RANGES, FORMANT_BW_RANGES)
    )
    return SpeakerProfile(
        speaker_id=speaker_id or f"spk{seed}",
        f0_hz=f0,
        formants=formants,
        seed=seed,
    )


def make_speakers(n, master_seed, min_f0_gap_hz=5.0):
    """n distinct profiles with pairwise |f0_i - f0_j| >= min_f0_gap_hz.

    Candidates are drawn from per-index substreams of master_seed and
    rejected until the gap holds, so the result is deterministic in
    (n, master_seed).
    """
    lo, hi = F0_RANGE
    capacity = int((hi - lo) / min_f0_gap_hz) + 1
    if n > capacity:
        raise ValueError(f"cannot fit {n} speakers with {min_f0_gap_hz} Hz f0 gaps in [{lo}, {hi}]")
    profiles = []
    for i in range(n):
        for attempt in range(10000):
            cand_seed = int(stream(master_seed, "corpus", i, attempt).integers(0, 2**31 - 1))
            cand = make_speaker(cand_seed, speaker_id=f"spk{i:03d}")
            if all(abs(cand.f0_hz - p.f0_hz) >= min_f0_gap_hz for p in profiles):
                profiles.append(cand)
                break
        else:
            raise RuntimeError(f"gave up placing speaker {i} after 10000 attempts")
    return profiles


def synth_utterance(profile, duration_s, seed):
    """One utterance of a speaker: jittered impulse train -> formant cascade,
    peak-normalized to 0.9."""
    if duration_s < MIN_UTT_SECONDS:
        raise ValueError(f"utterance must be >= {MIN_UTT_SECONDS} s, got {duration_s}")
    rng = stream(profile.seed, "utt", seed)
    n = int(round(duration_s * SAMPLE_RATE))

    excitation = np.zeros(n)
    period = SAMPLE_RATE / profile.f0_hz
    pos = float(rng.uniform(0.0, period))
    while pos < n:
        amp = 1.0 + 0.05 * rng.standard_normal()
        excitation[int(pos)] = amp
        pos += period * (1.0 + profile.jitter_pct / 100.0 * rng.standard_normal())

    x = excitation
    for center, bw in profile.formants:
        r = np.exp(-np.pi * bw / SAMPLE_RATE)
        omega = 2.0 * np.pi * center / SAMPLE_RATE
        x = lfilter([1.0], [1.0, -2.0 * r * np.cos(omega), r * r], x)

    peak = np.abs(x).max()
    if peak == 0.0:
        raise RuntimeError("synthesis produced silence")
    return AudioBuffer(x * (PEAK_LEVEL / peak))


def write_corpus(out_dir, n_speakers, utts_per_speaker, duration_s, master_seed,
                 min_f0_gap_hz=5.0):
    """WAV tree + manifest.  Layout: <out>/<speaker>/<utt>.wav, manifest
    lines "relative/path.wav,speaker_id,duration_s".  Returns manifest path.
    Byte-identical for identical arguments."""
    profiles = make_speakers(n_speakers, master_seed, min_f0_gap_hz)
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for profile in profiles:
        spk_dir = os.path.join(out_dir, profile.speaker_id)
        os.makedirs(spk_dir, exist_ok=True)
        for u in range(utts_per_speaker):
            buf = synth_utterance(profile, duration_s, seed=u)
            rel = f"{profile.speaker_id}/utt{u:03d}.wav"
            write_wav(os.path.join(out_dir, rel), buf)
            lines.append(f"{rel},{profile.speaker_id},{buf.duration_s:.3f}")
    manifest = os.path.join(out_dir, "manifest.csv")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest
