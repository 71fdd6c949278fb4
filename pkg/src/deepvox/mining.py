"""Batch assembly and curriculum negative mining.

Difficulty tau ramps linearly across training.  At tau the miner picks,
for every same-subject (anchor, positive) pair, the negative sitting at
the tau-quantile of all different-subject candidates ranked by cosine
similarity to the anchor: tau=0 is the easiest negative (least similar),
tau=1 the hardest, 0.5 the median.  Raising tau can only move each
chosen negative up the similarity ranking, so mean chosen-negative
similarity is monotone in tau by construction.
"""

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MiningConfig:
    subjects_per_batch: int = 25
    samples_per_subject: int = 6
    tau_start: float = 0.4
    tau_end: float = 1.0
    ramp_epochs: int = 800

    def __post_init__(self):
        if self.subjects_per_batch < 2:
            raise ValueError("need at least 2 subjects per batch to form triplets")
        if self.samples_per_subject < 2:
            raise ValueError("need at least 2 samples per subject to form pairs")
        for name in ("tau_start", "tau_end"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.ramp_epochs < 1:
            raise ValueError("ramp_epochs must be >= 1")

    @property
    def batch_size(self):
        return self.subjects_per_batch * self.samples_per_subject


@dataclass(frozen=True)
class MinedTriplet:
    anchor_idx: int
    positive_idx: int
    negative_idx: int
    difficulty: float  # quantile actually achieved, rank / (M - 1)


def tau_schedule(epoch, cfg):
    """Linear ramp from tau_start to tau_end over ramp_epochs, clamped."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if epoch >= cfg.ramp_epochs:
        return cfg.tau_end
    return cfg.tau_start + (cfg.tau_end - cfg.tau_start) * (epoch / cfg.ramp_epochs)


def build_batch(frames_by_subject, cfg, rng):
    """Sample subjects_per_batch subjects x samples_per_subject frames.

    frames_by_subject: mapping subject -> sequence of frame indices.
    Sampling is without replacement within a subject; the assembled batch
    is shuffled.  Returns (indices int array, labels list) of length
    subjects_per_batch * samples_per_subject.
    """
    eligible, deficient = [], []
    for subject in sorted(frames_by_subject):
        if len(frames_by_subject[subject]) >= cfg.samples_per_subject:
            eligible.append(subject)
        else:
            deficient.append(subject)
    if len(eligible) < cfg.subjects_per_batch:
        raise ValueError(
            f"insufficient data: need {cfg.subjects_per_batch} subjects with "
            f">= {cfg.samples_per_subject} frames, have {len(eligible)}"
            + (f" (too few frames: {', '.join(deficient)})" if deficient else "")
        )
    chosen = rng.choice(len(eligible), size=cfg.subjects_per_batch, replace=False)
    indices, labels = [], []
    for ci in chosen:
        subject = eligible[int(ci)]
        pool = np.asarray(frames_by_subject[subject])
        take = rng.choice(pool.size, size=cfg.samples_per_subject, replace=False)
        indices.extend(int(pool[t]) for t in take)
        labels.extend(subject for _ in take)
    order = rng.permutation(len(indices))
    indices = np.asarray(indices, dtype=np.intp)[order]
    labels = [labels[int(i)] for i in order]
    return indices, labels


def mine_triplets(embeddings, labels, tau, return_similarity=False):
    """Quantile-of-similarity negative selection.

    embeddings: np [B, D]; labels: length-B sequence; tau in [0, 1].
    For each ordered same-subject (anchor, positive) pair the negative is
    the candidate at rank round(tau * (M - 1)) of the ascending cosine
    sort (ties broken toward the lower batch index).  Subjects with fewer
    than 2 samples contribute nothing and are logged.  Returns a list of
    MinedTriplet (optionally with the mean chosen-negative similarity).
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or len(labels) != emb.shape[0]:
        raise ValueError(f"embeddings [B, D] and B labels required, got {emb.shape} and {len(labels)}")
    norms = np.linalg.norm(emb, axis=1)
    if norms.min() == 0.0:
        raise ValueError("degenerate embedding: zero norm in mining batch")
    unit = emb / norms[:, None]
    sim = unit @ unit.T

    labels = list(labels)
    arr = np.asarray(labels, dtype=object)
    triplets = []
    chosen_sims = []
    for subject in sorted(set(labels), key=str):
        members = np.flatnonzero(arr == subject)
        if members.size < 2:
            log.warning("mining: subject %r has %d sample(s) in batch, skipped",
                        subject, members.size)
            continue
        others = np.flatnonzero(arr != subject)
        if others.size == 0:
            log.warning("mining: subject %r has no negative candidates, skipped", subject)
            continue
        m = others.size
        rank = int(np.floor(tau * (m - 1) + 0.5)) if m > 1 else 0
        for a in members:
            order = np.lexsort((others, sim[a, others]))  # ascending sim, ties -> low index
            neg = int(others[order[rank]])
            achieved = rank / (m - 1) if m > 1 else 0.0
            chosen_sims.append(sim[a, neg])
            for p in members:
                if p == a:
                    continue
                triplets.append(MinedTriplet(int(a), int(p), neg, achieved))
    if return_similarity:
        mean_sim = float(np.mean(chosen_sims)) if chosen_sims else float("nan")
        return triplets, mean_sim
    return triplets
