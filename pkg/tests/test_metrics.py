"""Verification metrics against brute-force recounts."""

import numpy as np
import pytest

from deepvox.metrics import (MetricsReport, Trial, all_pairs_trials, compute_eer,
                             det_points, evaluate, min_dcf, score_trials,
                             split_scores, tmr_at_fmr)


def brute_rates(genuine, impostor, t):
    """Literal recount of the accept-iff-score>=t rule."""
    gen = np.asarray(genuine)
    imp = np.asarray(impostor)
    fmr = np.sum(imp >= t) / imp.size
    fnmr = np.sum(gen < t) / gen.size
    return fmr, fnmr


def brute_eer(genuine, impostor):
    """Independent EER: walk candidate thresholds, find the sign change of
    FNMR - FMR, interpolate linearly (exact when a threshold hits zero)."""
    cand = np.unique(np.concatenate([genuine, impostor]))
    cand = np.append(cand, cand[-1] + 1.0)
    pts = [brute_rates(genuine, impostor, t) for t in cand]
    diffs = [fnmr - fmr for fmr, fnmr in pts]
    for i, d in enumerate(diffs):
        if d >= 0.0:
            if d == 0.0:
                return 100.0 * pts[i][0]
            f0, f1 = pts[i - 1][0], pts[i][0]
            d0, d1 = diffs[i - 1], diffs[i]
            lam = -d0 / (d1 - d0)
            return 100.0 * (f0 + lam * (f1 - f0))
    raise AssertionError("no crossing")


# ---- trials ----

def test_trial_validation():
    Trial("a", "b", "genuine")
    Trial("a", "b", "impostor", score=0.5)
    with pytest.raises(ValueError, match="label"):
        Trial("a", "b", "same")
    with pytest.raises(ValueError, match="cosine range"):
        Trial("a", "b", "genuine", score=1.5)
    with pytest.raises(ValueError, match="finite"):
        Trial("a", "b", "genuine", score=float("nan"))


def test_split_scores():
    trials = [Trial("a", "b", "genuine", 0.9), Trial("a", "c", "impostor", 0.1)]
    gen, imp = split_scores(trials)
    assert gen.tolist() == [0.9] and imp.tolist() == [0.1]
    with pytest.raises(ValueError, match="unscored"):
        split_scores([Trial("a", "b", "genuine")])
    with pytest.raises(ValueError, match="both genuine and impostor"):
        split_scores([Trial("a", "b", "genuine", 0.5)])


# ---- EER ----

def test_eer_hand_case():
    # gen {0.9, 0.8, 0.3}, imp {0.7, 0.2, 0.1}: curves cross where one of
    # three is on the wrong side of each -> EER = 1/3
    gen = np.array([0.9, 0.8, 0.3])
    imp = np.array([0.7, 0.2, 0.1])
    eer, thr = compute_eer(gen, imp)
    assert eer == pytest.approx(100.0 / 3.0, abs=1e-9)
    assert 0.3 <= thr <= 0.7


def test_eer_perfect_separation():
    eer, thr = compute_eer([0.8, 0.9], [0.1, 0.2])
    assert eer == 0.0
    assert 0.2 < thr <= 0.8


def test_eer_matches_brute_force_random():
    rng = np.random.default_rng(0)
    for trial in range(200):
        n_g = int(rng.integers(2, 40))
        n_i = int(rng.integers(2, 40))
        # quantized scores force plenty of exact ties across classes
        gen = np.round(rng.uniform(-1, 1, n_g), 1)
        imp = np.round(rng.uniform(-1, 1, n_i), 1)
        got, _ = compute_eer(gen, imp)
        want = brute_eer(gen, imp)
        assert got == pytest.approx(want, abs=1e-12), (gen, imp)


def test_eer_monotone_transform_invariant():
    rng = np.random.default_rng(1)
    gen = rng.uniform(-1, 1, 25)
    imp = rng.uniform(-1, 1, 30)
    base, _ = compute_eer(gen, imp)
    # strictly monotone map into the cosine range
    warped, _ = compute_eer(np.tanh(2.0 * gen), np.tanh(2.0 * imp))
    assert warped == pytest.approx(base, abs=1e-12)


def test_eer_step_convention():
    gen = np.array([0.9, 0.8, 0.3])
    imp = np.array([0.7, 0.2, 0.1])
    eer, _ = compute_eer(gen, imp, interpolate=False)
    assert eer == pytest.approx(100.0 / 3.0, abs=1e-9)


# ---- TMR / DCF / DET ----

def test_tmr_at_fmr_hand_case():
    gen = np.array([0.9, 0.8, 0.6, 0.3])
    imp = np.array([0.7, 0.5, 0.2, 0.1, 0.05])
    # loosest threshold with fmr <= 0.2 is the genuine score 0.6 (only the
    # 0.7 impostor passes); genuine {0.9, 0.8, 0.6} accepted
    assert tmr_at_fmr(gen, imp, 0.2) == pytest.approx(0.75)
    # loosest with fmr <= 0.45 is 0.3: impostors {0.7, 0.5} pass (fmr 0.4),
    # every genuine is accepted
    assert tmr_at_fmr(gen, imp, 0.45) == pytest.approx(1.0)


def test_tmr_resolution_guard():
    gen = np.array([0.9, 0.8])
    imp = np.array([0.1, 0.2, 0.3, 0.4])
    with pytest.raises(ValueError, match="below resolution"):
        tmr_at_fmr(gen, imp, 0.01)
    tmr_at_fmr(gen, imp, 0.25)


def test_min_dcf_hand_case():
    gen = np.array([0.9, 0.8, 0.3])
    imp = np.array([0.7, 0.2, 0.1])
    # sweep: at threshold 0.8, fnmr=1/3, fmr=0; cost = p_target/3
    raw, normed = min_dcf(gen, imp, p_target=0.5)
    # candidates: t=0.8 -> 0.5/3; t=0.75... check a few by brute force
    costs = []
    for t in [0.05, 0.1, 0.2, 0.3, 0.7, 0.8, 0.9, 1.9]:
        fmr, fnmr = brute_rates(gen, imp, t)
        costs.append(0.5 * fnmr + 0.5 * fmr)
    assert raw == pytest.approx(min(costs), abs=1e-12)
    assert normed == pytest.approx(raw / 0.5, abs=1e-12)


def test_min_dcf_validation():
    with pytest.raises(ValueError, match="p_target"):
        min_dcf([0.5], [0.1], p_target=0.0)
    with pytest.raises(ValueError, match="costs"):
        min_dcf([0.5], [0.1], p_target=0.5, c_miss=0.0)


def test_min_dcf_trivial_bound():
    rng = np.random.default_rng(2)
    gen = rng.uniform(-1, 1, 30)
    imp = rng.uniform(-1, 1, 30)
    for p in (0.01, 0.5, 0.99):
        raw, normed = min_dcf(gen, imp, p)
        assert 0.0 <= normed <= 1.0 + 1e-12  # never worse than trivial accept/reject


def test_det_points_probit_infinities():
    gen = np.array([0.9, 0.8])
    imp = np.array([0.1, 0.2])
    det = det_points(gen, imp)
    assert det["p_fa"][0] == 1.0 and det["probit_fa"][0] == np.inf
    assert det["p_miss"][0] == 0.0 and det["probit_miss"][0] == -np.inf
    assert det["p_fa"][-1] == 0.0 and det["probit_fa"][-1] == -np.inf
    assert det["p_miss"][-1] == 1.0 and det["probit_miss"][-1] == np.inf
    assert np.all(np.diff(det["threshold"]) > 0)


# ---- report ----

def test_evaluate_report_lines():
    trials = (
        [Trial("g", f"g{i}", "genuine", s) for i, s in enumerate([0.9, 0.8, 0.3])]
        + [Trial("g", f"i{i}", "impostor", s) for i, s in enumerate([0.7, 0.2, 0.1])]
    )
    rep = evaluate(trials, tmr_targets=(0.5,), dcf_ptargets=(0.01,))
    assert isinstance(rep, MetricsReport)
    assert rep.n_genuine == 3 and rep.n_impostor == 3
    lines = rep.lines()
    assert lines[0] == "n_genuine=3"
    assert lines[1] == "n_impostor=3"
    assert lines[2] == "eer_pct=33.33"
    assert any(l.startswith("eer_threshold=") for l in lines)
    assert any(l.startswith("tmr_at_fmr_50pct=") for l in lines)
    assert any(l.startswith("min_dcf_raw_ptar_0.01=") for l in lines)
    assert any(l.startswith("min_dcf_norm_ptar_0.01=") for l in lines)


def test_evaluate_omits_unresolvable_tmr():
    trials = (
        [Trial("g", f"g{i}", "genuine", s) for i, s in enumerate([0.9, 0.3])]
        + [Trial("g", f"i{i}", "impostor", s) for i, s in enumerate([0.7, 0.2])]
    )
    rep = evaluate(trials, tmr_targets=(0.01, 0.5), dcf_ptargets=(0.5,))
    assert 0.01 not in rep.tmr  # below 1/2 resolution
    assert 0.5 in rep.tmr


# ---- scoring pipeline ----

def test_score_trials_cosine_and_missing():
    emb = {
        "u1": np.array([1.0, 0.0]),
        "u2": np.array([1.0, 1.0]),
        "u3": np.array([-2.0, 0.0]),
    }
    trials = [Trial("u1", "u2", "genuine"), Trial("u1", "u3", "impostor")]
    scored = score_trials(trials, emb)
    assert scored[0].score == pytest.approx(np.sqrt(0.5), abs=1e-12)
    assert scored[1].score == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(ValueError, match="u4, u5"):
        score_trials([Trial("u4", "u5", "genuine")], emb)
    with pytest.raises(ValueError, match="degenerate"):
        score_trials([Trial("u1", "z", "genuine")], {**emb, "z": np.zeros(2)})


def test_all_pairs_trials():
    trials = all_pairs_trials({"s1": ["a", "b"], "s2": ["c"]})
    assert len(trials) == 3
    by_pair = {(t.enroll_id, t.probe_id): t.label for t in trials}
    assert by_pair[("a", "b")] == "genuine"
    assert by_pair[("a", "c")] == "impostor"
    assert by_pair[("b", "c")] == "impostor"
