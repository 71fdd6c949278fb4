"""Verification scoring and metrics.

An utterance is scored by the cosine of the mean frame embeddings of the
two sides of a trial.  All metrics sweep the same operating-point set:
one threshold per distinct score, ascending, plus one virtual threshold
above the maximum (the reject-everything point).  At threshold t a trial
is accepted iff score >= t, so

    FMR(t)  = #(impostor >= t) / n_impostor      (false match)
    FNMR(t) = #(genuine  <  t) / n_genuine       (false non-match)

EER interpolates linearly between the two operating points where
FNMR - FMR changes sign.  All rates are exact ratios of counts, which
makes every metric invariant under strictly monotone score transforms.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .training import embed_frames_batched

TRIAL_LABELS = ("genuine", "impostor")


@dataclass
class Trial:
    enroll_id: str
    probe_id: str
    label: str
    score: float = None

    def __post_init__(self):
        if self.label not in TRIAL_LABELS:
            raise ValueError(f"trial label must be one of {TRIAL_LABELS}, got {self.label!r}")
        if self.score is not None:
            self.score = float(self.score)
            if not np.isfinite(self.score):
                raise ValueError("trial score must be finite")
            if not -1.0 - 1e-9 <= self.score <= 1.0 + 1e-9:
                raise ValueError(f"trial score {self.score} outside cosine range [-1, 1]")


def split_scores(trials):
    if any(t.score is None for t in trials):
        raise ValueError("unscored trial in metric input")
    gen = np.array([t.score for t in trials if t.label == "genuine"], dtype=np.float64)
    imp = np.array([t.score for t in trials if t.label == "impostor"], dtype=np.float64)
    if gen.size == 0 or imp.size == 0:
        raise ValueError(
            f"need both genuine and impostor trials, got {gen.size} genuine / {imp.size} impostor"
        )
    return gen, imp


def _operating_points(genuine, impostor):
    """(thresholds, fmr, fnmr) over distinct scores plus a reject-all point."""
    gen = np.sort(np.asarray(genuine, dtype=np.float64))
    imp = np.sort(np.asarray(impostor, dtype=np.float64))
    if gen.size == 0 or imp.size == 0:
        raise ValueError("need at least one score in each class")
    thresholds = np.unique(np.concatenate([gen, imp]))
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)
    fmr = (imp.size - np.searchsorted(imp, thresholds, side="left")) / imp.size
    fnmr = np.searchsorted(gen, thresholds, side="left") / gen.size
    return thresholds, fmr, fnmr


def compute_eer(genuine, impostor, interpolate=True):
    """(eer_percent, threshold).

    interpolate=False picks the operating point minimizing |FNMR - FMR|
    and averages the two rates there (step-function convention).
    """
    thresholds, fmr, fnmr = _operating_points(genuine, impostor)
    diff = fnmr - fmr
    if not interpolate:
        i = int(np.argmin(np.abs(diff)))
        return 100.0 * 0.5 * (fmr[i] + fnmr[i]), float(thresholds[i])
    i = int(np.argmax(diff >= 0.0))  # first crossing; diff[0] = -1 always
    if diff[i] == 0.0:
        return 100.0 * fmr[i], float(thresholds[i])
    lam = -diff[i - 1] / (diff[i] - diff[i - 1])
    eer = fmr[i - 1] + lam * (fmr[i] - fmr[i - 1])
    thr = thresholds[i - 1] + lam * (thresholds[i] - thresholds[i - 1])
    return 100.0 * eer, float(thr)


def tmr_at_fmr(genuine, impostor, fmr_target):
    """True-match rate at the loosest threshold whose FMR <= target.

    The finest achievable FMR resolution is 1/n_impostor; asking for less
    is a data problem, not a zero."""
    imp = np.asarray(impostor, dtype=np.float64)
    if fmr_target < 1.0 / imp.size:
        raise ValueError(
            f"fmr_target {fmr_target} below resolution 1/{imp.size} of the impostor set"
        )
    thresholds, fmr, fnmr = _operating_points(genuine, imp)
    i = int(np.argmax(fmr <= fmr_target))  # fmr is non-increasing in threshold
    return 1.0 - fnmr[i]


def min_dcf(genuine, impostor, p_target, c_miss=1.0, c_fa=1.0):
    """(raw, normalized) minimum detection cost.

    raw = min over thresholds of c_miss*FNMR*p_target + c_fa*FMR*(1-p_target);
    normalized divides by the best trivial system min(c_miss*p_target,
    c_fa*(1-p_target))."""
    if not 0.0 < p_target < 1.0:
        raise ValueError(f"p_target must be in (0, 1), got {p_target}")
    if c_miss <= 0 or c_fa <= 0:
        raise ValueError("costs must be positive")
    _, fmr, fnmr = _operating_points(genuine, impostor)
    dcf = c_miss * fnmr * p_target + c_fa * fmr * (1.0 - p_target)
    raw = float(dcf.min())
    floor = min(c_miss * p_target, c_fa * (1.0 - p_target))
    return raw, raw / floor


def det_points(genuine, impostor):
    """DET curve: dict of arrays (threshold, p_fa, p_miss, probit_fa,
    probit_miss), one row per operating point, ascending threshold.
    Probits of exact 0/1 are -inf/+inf by convention."""
    thresholds, fmr, fnmr = _operating_points(genuine, impostor)
    with np.errstate(divide="ignore"):
        probit_fa = norm.ppf(fmr)
        probit_miss = norm.ppf(fnmr)
    return {
        "threshold": thresholds,
        "p_fa": fmr,
        "p_miss": fnmr,
        "probit_fa": probit_fa,
        "probit_miss": probit_miss,
    }


@dataclass
class MetricsReport:
    n_genuine: int
    n_impostor: int
    eer_pct: float
    eer_threshold: float
    tmr: dict           # fmr_target -> tmr
    dcf: dict           # p_target -> (raw, normalized)
    det: dict           # det_points arrays

    def lines(self):
        out = [
            f"n_genuine={self.n_genuine}",
            f"n_impostor={self.n_impostor}",
            f"eer_pct={self.eer_pct:.2f}",
            f"eer_threshold={self.eer_threshold:.6f}",
        ]
        for target in sorted(self.tmr):
            out.append(f"tmr_at_fmr_{_pct_tag(target)}={self.tmr[target]:.4f}")
        for p_tar in sorted(self.dcf):
            raw, normed = self.dcf[p_tar]
            out.append(f"min_dcf_raw_ptar_{p_tar:g}={raw:.6f}")
            out.append(f"min_dcf_norm_ptar_{p_tar:g}={normed:.6f}")
        return out


def _pct_tag(fraction):
    pct = 100.0 * fraction
    return f"{pct:g}pct".replace(".", "_")


DEFAULT_TMR_TARGETS = (0.01, 0.10)
DEFAULT_DCF_PTARGETS = (0.01, 0.001)


def evaluate(trials, tmr_targets=DEFAULT_TMR_TARGETS, dcf_ptargets=DEFAULT_DCF_PTARGETS):
    gen, imp = split_scores(trials)
    eer, thr = compute_eer(gen, imp)
    tmr = {}
    for target in tmr_targets:
        try:
            tmr[target] = tmr_at_fmr(gen, imp, target)
        except ValueError:
            pass  # target below impostor-count resolution: omit, not fake
    dcf = {p: min_dcf(gen, imp, p) for p in dcf_ptargets}
    return MetricsReport(
        n_genuine=int(gen.size),
        n_impostor=int(imp.size),
        eer_pct=eer,
        eer_threshold=thr,
        tmr=tmr,
        dcf=dcf,
        det=det_points(gen, imp),
    )


def write_report(path, report):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(report.lines()) + "\n")


def write_det_csv(path, det):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("p_fa,p_miss,probit_fa,probit_miss\n")
        for i in range(det["p_fa"].size):
            fh.write(
                f"{det['p_fa'][i]!r},{det['p_miss'][i]!r},"
                f"{det['probit_fa'][i]!r},{det['probit_miss'][i]!r}\n"
            )


# ---- scoring pipelines ----

def utterance_embeddings(frames, frame_utts, params, fb_cfg, emb_cfg):
    """Mean frame embedding per utterance id -> {utt_id: np [D]}."""
    emb = embed_frames_batched(frames, params, fb_cfg, emb_cfg)
    by_utt = {}
    for vec, utt in zip(emb, frame_utts):
        by_utt.setdefault(utt, []).append(vec)
    return {utt: np.mean(vecs, axis=0) for utt, vecs in by_utt.items()}


def score_trials(trials, embeddings_by_id):
    """Fill trial scores with cosine(enroll, probe) of utterance embeddings.
    Missing utterances are reported together, not one at a time."""
    missing = sorted(
        {t.enroll_id for t in trials if t.enroll_id not in embeddings_by_id}
        | {t.probe_id for t in trials if t.probe_id not in embeddings_by_id}
    )
    if missing:
        raise ValueError(f"no embeddings for utterance(s): {', '.join(missing)}")
    scored = []
    for t in trials:
        u = np.asarray(embeddings_by_id[t.enroll_id], dtype=np.float64)
        v = np.asarray(embeddings_by_id[t.probe_id], dtype=np.float64)
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0.0 or nv == 0.0:
            raise ValueError(f"degenerate embedding for trial {t.enroll_id} vs {t.probe_id}")
        score = float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
        scored.append(Trial(t.enroll_id, t.probe_id, t.label, score))
    return scored


def all_pairs_trials(utts_by_speaker):
    """Exhaustive symmetric trial list from {speaker: [utt_id, ...]}:
    every unordered pair of distinct utterances, labeled by speaker match."""
    flat = [(spk, utt) for spk in sorted(utts_by_speaker) for utt in sorted(utts_by_speaker[spk])]
    trials = []
    for i in range(len(flat)):
        for j in range(i + 1, len(flat)):
            label = "genuine" if flat[i][0] == flat[j][0] else "impostor"
            trials.append(Trial(flat[i][1], flat[j][1], label))
    return trials
