import math
import random

import mpmath
import pytest

from avbench.alignkit import (DegenerateCorrelationError, NoEligiblePairsError,
                              PairOutcome, Side, UndefinedWinRatioError, WinTally,
                              alignment_report, human_consensus, metric_verdict,
                              minmax_report, model_win_ratios, outcomes_from_judgments,
                              pearson, twoafc_accuracy, win_ratio)
from avbench.scorekit import ScoreRecord


def outcome(pair_id, model_a, model_b, prompt="p0", dimension="AV",
            human=None, a=None, b=None):
    metric = None if a is None or b is None else {"a": a, "b": b}
    return PairOutcome(pair_id=pair_id, dimension=dimension,
                       side_a=Side(model_id=model_a, prompt_id=prompt),
                       side_b=Side(model_id=model_b, prompt_id=prompt),
                       human_verdict=human, metric_values=metric)


# ---------------------------------------------------------------------------
# win_ratio


def test_win_ratio_formula():
    assert win_ratio(WinTally(3, 2, 5)) == 0.4


def test_win_ratio_all_ties():
    for n in (1, 4, 100):
        assert win_ratio(WinTally(0, n, 0)) == 0.5


def test_win_ratio_empty_tally():
    with pytest.raises(UndefinedWinRatioError):
        win_ratio(WinTally(0, 0, 0))


def test_win_ratio_complementarity():
    rng = random.Random(31)
    for _ in range(1000):
        w, t, l = rng.randrange(0, 30), rng.randrange(0, 30), rng.randrange(0, 30)
        if w + t + l == 0:
            continue
        assert win_ratio(WinTally(w, t, l)) + win_ratio(WinTally(l, t, w)) == pytest.approx(1.0)
        assert 0.0 <= win_ratio(WinTally(w, t, l)) <= 1.0


# ---------------------------------------------------------------------------
# metric_verdict


def test_metric_verdict_basic():
    assert metric_verdict(outcome("x", "m1", "m2", a=0.8, b=0.3)) == "A"
    assert metric_verdict(outcome("x", "m1", "m2", a=0.3, b=0.8)) == "B"
    assert metric_verdict(outcome("x", "m1", "m2", a=0.5, b=0.5)) == "Tie"


def test_metric_verdict_missing_values():
    with pytest.raises(ValueError):
        metric_verdict(outcome("x", "m1", "m2"))


def test_metric_verdict_monotone_transform_invariant():
    rng = random.Random(12)
    for _ in range(100):
        a, b = rng.random(), rng.random()
        o1 = outcome("x", "m1", "m2", a=a, b=b)
        o2 = outcome("x", "m1", "m2", a=math.exp(3 * a), b=math.exp(3 * b))
        assert metric_verdict(o1) == metric_verdict(o2)


def test_metric_verdict_counts_match_recount():
    rng = random.Random(7)
    outcomes = [outcome(f"x{i}", "m1", "m2",
                        a=rng.choice([0.2, 0.5, 0.9]), b=rng.choice([0.2, 0.5, 0.9]))
                for i in range(200)]
    verdicts = [metric_verdict(o) for o in outcomes]
    recount = {"A": 0, "B": 0, "Tie": 0}
    for o in outcomes:
        va, vb = o.metric_values["a"], o.metric_values["b"]
        recount["A" if va > vb else ("B" if vb > va else "Tie")] += 1
    assert {v: verdicts.count(v) for v in recount} == recount


# ---------------------------------------------------------------------------
# model_win_ratios


def test_model_win_ratios_single_pair():
    ratios, _ = model_win_ratios([outcome("x", "mA", "mB", human="A")], "human", "AV")
    assert ratios == {"mA": 1.0, "mB": 0.0}


def test_model_win_ratios_all_tie_table():
    outcomes = [outcome(f"x{i}", "mA", "mB", human="Tie") for i in range(6)]
    ratios, _ = model_win_ratios(outcomes, "human", "AV")
    assert ratios == {"mA": 0.5, "mB": 0.5}


def test_model_win_ratios_tournament_matches_bruteforce():
    rng = random.Random(23)
    models = ["m1", "m2", "m3", "m4"]
    outcomes = []
    for i in range(200):
        a, b = rng.sample(models, 2)
        outcomes.append(outcome(f"x{i}", a, b, prompt=f"p{i}",
                                human=rng.choice(["A", "B", "Tie"])))
    ratios, _ = model_win_ratios(outcomes, "human", "AV")

    tallies = {m: [0, 0, 0] for m in models}  # W, T, L
    for o in outcomes:
        v = o.human_verdict
        if v == "A":
            tallies[o.side_a.model_id][0] += 1
            tallies[o.side_b.model_id][2] += 1
        elif v == "B":
            tallies[o.side_a.model_id][2] += 1
            tallies[o.side_b.model_id][0] += 1
        else:
            tallies[o.side_a.model_id][1] += 1
            tallies[o.side_b.model_id][1] += 1
    for m, (w, t, l) in tallies.items():
        assert ratios[m] == pytest.approx((w + 0.5 * t) / (w + t + l))


def test_model_win_ratios_excludes_unscored_model():
    outcomes = [outcome("x0", "mA", "mB", human="A"),
                outcome("x1", "mA", "mC")]  # no verdict for the mC pair
    ratios, notes = model_win_ratios(outcomes, "human", "AV")
    assert "mC" not in ratios
    assert any("mC" in n for n in notes)


def test_model_win_ratios_metric_source():
    outcomes = [outcome("x0", "mA", "mB", a=0.9, b=0.2),
                outcome("x1", "mA", "mB", a=0.1, b=0.7)]
    ratios, _ = model_win_ratios(outcomes, "metric", "AV")
    assert ratios == {"mA": 0.5, "mB": 0.5}


# ---------------------------------------------------------------------------
# pearson


def test_pearson_exact_linear():
    assert pearson([1, 2, 3], [2, 4, 6]) == 1.0
    assert pearson([1, 2, 3], [3, 2, 1]) == -1.0


def test_pearson_affine_invariance_and_symmetry():
    rng = random.Random(10)
    x = [rng.random() for _ in range(8)]
    y = [rng.random() for _ in range(8)]
    base = pearson(x, y)
    assert pearson(y, x) == pytest.approx(base, abs=1e-15)
    shifted = pearson([3.5 * xi - 2.0 for xi in x], [0.25 * yi + 11.0 for yi in y])
    assert abs(shifted - base) < 1e-12
    assert pearson(x, [2.0 * xi + 1.0 for xi in x]) == pytest.approx(1.0, abs=1e-12)


def _pearson_reference(x, y):
    with mpmath.workdps(60):
        xs = [mpmath.mpf(v) for v in x]
        ys = [mpmath.mpf(v) for v in y]
        n = len(xs)
        mx = mpmath.fsum(xs) / n
        my = mpmath.fsum(ys) / n
        num = mpmath.fsum((a - mx) * (b - my) for a, b in zip(xs, ys))
        den = mpmath.sqrt(mpmath.fsum((a - mx) ** 2 for a in xs)
                          * mpmath.fsum((b - my) ** 2 for b in ys))
        return float(num / den)


def test_pearson_matches_high_precision_reference():
    rng = random.Random(2)
    for _ in range(100):
        n = rng.choice([4, 5, 8])
        x = [rng.uniform(-5, 5) for _ in range(n)]
        y = [rng.uniform(-5, 5) for _ in range(n)]
        assert abs(pearson(x, y) - _pearson_reference(x, y)) < 1e-12


def test_pearson_degenerate():
    with pytest.raises(DegenerateCorrelationError):
        pearson([1.0, 1.0, 1.0], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1.0], [2.0])


# ---------------------------------------------------------------------------
# 2AFC accuracy


def test_twoafc_denominator_excludes_human_ties():
    outcomes = []
    for i in range(8):  # metric agrees
        outcomes.append(outcome(f"a{i}", "m1", "m2", human="A", a=0.9, b=0.1))
    outcomes.append(outcome("wrong", "m1", "m2", human="A", a=0.1, b=0.9))
    outcomes.append(outcome("tie", "m1", "m2", human="Tie", a=0.9, b=0.1))
    assert twoafc_accuracy(outcomes, "AV") == pytest.approx(8 / 9)


def test_twoafc_metric_tie_counts_incorrect():
    outcomes = [outcome("x", "m1", "m2", human="A", a=0.5, b=0.5)]
    assert twoafc_accuracy(outcomes, "AV") == 0.0


def test_twoafc_no_eligible_pairs():
    with pytest.raises(NoEligiblePairsError):
        twoafc_accuracy([outcome("x", "m1", "m2", human="Tie", a=1, b=0)], "AV")
    with pytest.raises(NoEligiblePairsError):
        twoafc_accuracy([outcome("x", "m1", "m2", human="A")], "AV")


def test_twoafc_matches_recount_on_synthetic_tables():
    rng = random.Random(55)
    for trial in range(50):
        outcomes = []
        for i in range(rng.randrange(3, 25)):
            human = rng.choice(["A", "B", "Tie", None])
            has_metric = rng.random() < 0.9
            a, b = (round(rng.random(), 2), round(rng.random(), 2)) if has_metric else (None, None)
            outcomes.append(outcome(f"t{trial}x{i}", "m1", "m2", human=human, a=a, b=b))
        eligible = [o for o in outcomes
                    if o.human_verdict in ("A", "B") and o.metric_values is not None]
        if not eligible:
            with pytest.raises(NoEligiblePairsError):
                twoafc_accuracy(outcomes, "AV")
            continue
        correct = 0
        for o in eligible:
            va, vb = o.metric_values["a"], o.metric_values["b"]
            pred = "A" if va > vb else ("B" if vb > va else "Tie")
            correct += pred == o.human_verdict
        assert twoafc_accuracy(outcomes, "AV") == pytest.approx(correct / len(eligible))


def test_twoafc_invariant_under_increasing_transform():
    rng = random.Random(9)
    outcomes = [outcome(f"x{i}", "m1", "m2", human=rng.choice(["A", "B"]),
                        a=rng.random(), b=rng.random()) for i in range(40)]
    base = twoafc_accuracy(outcomes, "AV")
    transformed = [outcome(o.pair_id, "m1", "m2", human=o.human_verdict,
                           a=math.tanh(2 * o.metric_values["a"]) + 5,
                           b=math.tanh(2 * o.metric_values["b"]) + 5)
                   for o in outcomes]
    assert twoafc_accuracy(transformed, "AV") == base


# ---------------------------------------------------------------------------
# min-max report


NISQA_NORMAL = {  # per-model audio-quality MOS means, normal split
    "Sora 2": 2.3784,
    "Veo 3 Fast": 2.8191,
    "Wan 2.6": 3.0289,
    "Kling 2.6": 3.3141,
    "Seedance 1.5 Pro": 3.6411,
}


def _records_from_column(column, dimension="AudioQuality", split="normal"):
    tier_of = {}
    records = []
    for i, (model, value) in enumerate(column.items()):
        pid = f"bench{i}"
        tier_of[pid] = split
        records.append(ScoreRecord(model_id=model, prompt_id=pid, dimension=dimension,
                                   value=value, scale="mos_1_5", backend="table"))
    return records, tier_of


def test_minmax_endpoints_on_published_column():
    records, tier_of = _records_from_column(NISQA_NORMAL)
    report = minmax_report(records, "normal", tier_of)
    models = report["dimensions"]["AudioQuality"]["models"]
    assert models["Sora 2"] == 0.0
    assert models["Seedance 1.5 Pro"] == 1.0
    assert all(0.0 <= v <= 1.0 for v in models.values())


def test_minmax_interior_values_match_recomputation():
    records, tier_of = _records_from_column(NISQA_NORMAL)
    report = minmax_report(records, "normal", tier_of)
    models = report["dimensions"]["AudioQuality"]["models"]
    lo = min(NISQA_NORMAL.values())
    hi = max(NISQA_NORMAL.values())
    for model, value in NISQA_NORMAL.items():
        assert abs(models[model] - (value - lo) / (hi - lo)) < 1e-12


def test_minmax_degenerate_dimension_flagged():
    records, tier_of = _records_from_column({"m1": 2.0, "m2": 2.0})
    report = minmax_report(records, "normal", tier_of)
    entry = report["dimensions"]["AudioQuality"]
    assert entry["degenerate"] is True
    assert all(v is None for v in entry["models"].values())


def test_minmax_split_isolation():
    records, tier_of = _records_from_column(NISQA_NORMAL)
    other = ScoreRecord(model_id="Sora 2", prompt_id="hard0", dimension="AudioQuality",
                        value=99.0, scale="mos_1_5", backend="table")
    tier_of["hard0"] = "hard"
    report = minmax_report(records + [other], "normal", tier_of)
    assert report["dimensions"]["AudioQuality"]["max"] == max(NISQA_NORMAL.values())


# ---------------------------------------------------------------------------
# consensus and assembly


def test_human_consensus_majority_and_split():
    assert human_consensus(["A", "A", "B", "Tie"]) == "Tie"  # no strict majority
    assert human_consensus(["A", "A", "A", "B"]) == "A"
    assert human_consensus(["B", "B", "A"]) == "B"
    assert human_consensus(["Tie", "Tie"]) == "Tie"


def test_outcomes_from_judgments_joins_scores():
    pairs = [{"pair_id": "x0", "prompt_id": "p0",
              "side_a": {"model_id": "m1", "media": "a.mp4"},
              "side_b": {"model_id": "m2", "media": "b.mp4"}}]
    judgments = [{"pair_id": "x0", "dimension": "AV", "verdict": "A"},
                 {"pair_id": "x0", "dimension": "AV", "verdict": "A"},
                 {"pair_id": "x0", "dimension": "AV", "verdict": "B"}]
    scores = [ScoreRecord("m1", "p0", "AV", 0.9, "unit_interval", "stub"),
              ScoreRecord("m2", "p0", "AV", 0.4, "unit_interval", "stub")]
    outcomes = outcomes_from_judgments(pairs, judgments, scores)
    assert len(outcomes) == 1
    assert outcomes[0].human_verdict == "A"
    assert outcomes[0].metric_values == {"a": 0.9, "b": 0.4}


def test_alignment_report_bundle_shape():
    rng = random.Random(3)
    models = ["m1", "m2", "m3"]
    outcomes = []
    scores = []
    tier_of = {}
    k = 0
    for i in range(30):
        pid = f"p{i}"
        tier_of[pid] = "normal" if i % 2 else "hard"
        a, b = rng.sample(models, 2)
        va, vb = rng.random(), rng.random()
        outcomes.append(outcome(f"x{k}", a, b, prompt=pid, dimension="AV",
                                human=rng.choice(["A", "B", "Tie"]), a=va, b=vb))
        scores.append(ScoreRecord(a, pid, "AV", va, "unit_interval", "stub"))
        scores.append(ScoreRecord(b, pid, "AV", vb, "unit_interval", "stub"))
        k += 1
    report = alignment_report(outcomes, scores, tier_of)
    assert set(report) == {"win_ratios", "pearson", "twoafc", "radar"}
    assert "AV" in report["win_ratios"]
    assert set(report["radar"]) == {"hard", "normal"}
