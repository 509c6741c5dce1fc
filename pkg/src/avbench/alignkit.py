"""Human-alignment statistics: pairwise win ratios, model-level Pearson
correlation between human and metric preferences, instance-level 2AFC
prediction accuracy and per-split min-max normalized summaries."""

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from avbench import manifest
from avbench.scorekit import ScoreRecord


class UndefinedWinRatioError(ValueError):
    code = "undefined_win_ratio"


class DegenerateCorrelationError(ValueError):
    code = "degenerate_correlation"


class NoEligiblePairsError(ValueError):
    code = "no_eligible_pairs"


@dataclass
class Side:
    model_id: str
    prompt_id: str


@dataclass
class PairOutcome:
    """One pairwise comparison: two models' outputs for the same prompt, an
    optional human verdict and optional metric values per side."""

    pair_id: str
    dimension: str
    side_a: Side
    side_b: Side
    human_verdict: Optional[str] = None  # A | B | Tie | None
    metric_values: Optional[Dict[str, float]] = None  # {"a": ..., "b": ...}

    def __post_init__(self):
        if self.side_a.prompt_id != self.side_b.prompt_id:
            raise ValueError(f"{self.pair_id}: sides must share a prompt")
        if self.side_a.model_id == self.side_b.model_id:
            raise ValueError(f"{self.pair_id}: sides must come from different models")
        if self.human_verdict not in (None, "A", "B", "Tie"):
            raise ValueError(f"{self.pair_id}: bad verdict {self.human_verdict!r}")

    def to_dict(self) -> dict:
        return {"pair_id": self.pair_id, "dimension": self.dimension,
                "side_a": {"model_id": self.side_a.model_id, "prompt_id": self.side_a.prompt_id},
                "side_b": {"model_id": self.side_b.model_id, "prompt_id": self.side_b.prompt_id},
                "human_verdict": self.human_verdict, "metric_values": self.metric_values}

    @classmethod
    def from_dict(cls, d: dict) -> "PairOutcome":
        return cls(pair_id=d["pair_id"], dimension=d["dimension"],
                   side_a=Side(**d["side_a"]), side_b=Side(**d["side_b"]),
                   human_verdict=d.get("human_verdict"),
                   metric_values=d.get("metric_values"))


@dataclass
class WinTally:
    W: int = 0
    T: int = 0
    L: int = 0

    def add(self, outcome: str) -> None:
        if outcome == "W":
            self.W += 1
        elif outcome == "T":
            self.T += 1
        elif outcome == "L":
            self.L += 1
        else:
            raise ValueError(f"bad tally outcome {outcome!r}")


def win_ratio(tally: WinTally) -> float:
    """(W + 0.5*T) / (W + T + L)."""
    total = tally.W + tally.T + tally.L
    if total == 0:
        raise UndefinedWinRatioError("win ratio undefined for an empty tally")
    return (tally.W + 0.5 * tally.T) / total


def metric_verdict(outcome: PairOutcome, epsilon: float = 0.0) -> str:
    """A iff a > b, B iff b > a, Tie at exact equality (stored precision).

    epsilon widens the tie band when explicitly requested; the default is 0.
    """
    if outcome.metric_values is None:
        raise ValueError(f"{outcome.pair_id}: metric values missing")
    a, b = outcome.metric_values.get("a"), outcome.metric_values.get("b")
    if a is None or b is None or not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"{outcome.pair_id}: metric values must be finite")
    if a - b > epsilon:
        return "A"
    if b - a > epsilon:
        return "B"
    return "Tie"


def human_consensus(verdicts: Sequence[str]) -> str:
    """Majority vote over annotator verdicts; any split without a strict
    majority resolves to Tie."""
    counts = Counter(verdicts)
    for v in counts:
        if v not in ("A", "B", "Tie"):
            raise ValueError(f"bad verdict {v!r}")
    a, b = counts.get("A", 0), counts.get("B", 0)
    if a > len(verdicts) / 2:
        return "A"
    if b > len(verdicts) / 2:
        return "B"
    return "Tie"


def _verdict_for(outcome: PairOutcome, source: str, epsilon: float = 0.0) -> Optional[str]:
    if source == "human":
        return outcome.human_verdict
    if source == "metric":
        if outcome.metric_values is None:
            return None
        return metric_verdict(outcome, epsilon)
    raise ValueError(f"verdict source must be human or metric, got {source!r}")


def model_win_ratios(outcomes: Sequence[PairOutcome], source: str, dimension: str,
                     epsilon: float = 0.0) -> Tuple[Dict[str, float], List[str]]:
    """Per-model win ratio over all pairs involving the model for the
    dimension; a tie credits T to both models. Returns (ratios, notes) where
    notes list models excluded for having no verdict-bearing pairs."""
    tallies: Dict[str, WinTally] = {}
    seen_models = set()
    for o in outcomes:
        if o.dimension != dimension:
            continue
        seen_models.update((o.side_a.model_id, o.side_b.model_id))
        verdict = _verdict_for(o, source, epsilon)
        if verdict is None:
            continue
        ta = tallies.setdefault(o.side_a.model_id, WinTally())
        tb = tallies.setdefault(o.side_b.model_id, WinTally())
        if verdict == "A":
            ta.add("W"), tb.add("L")
        elif verdict == "B":
            ta.add("L"), tb.add("W")
        else:
            ta.add("T"), tb.add("T")

    ratios = {m: win_ratio(t) for m, t in sorted(tallies.items())}
    notes = [f"{m}: no scored pairs for {dimension}" for m in sorted(seen_models - set(ratios))]
    return ratios, notes


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Standard product-moment correlation coefficient."""
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("pearson needs two sequences of equal length >= 2")
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [xi - mx for xi in x]
    dy = [yi - my for yi in y]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateCorrelationError("zero variance in an input sequence")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def twoafc_accuracy(outcomes: Sequence[PairOutcome], dimension: str) -> float:
    """Share of human-decided pairs where the metric gives the preferred side
    a strictly higher score. Human ties leave the denominator; a metric tie
    on an eligible pair counts as incorrect."""
    eligible = 0
    correct = 0
    for o in outcomes:
        if o.dimension != dimension:
            continue
        if o.human_verdict not in ("A", "B") or o.metric_values is None:
            continue
        eligible += 1
        if metric_verdict(o) == o.human_verdict:
            correct += 1
    if eligible == 0:
        raise NoEligiblePairsError(f"no eligible outcomes for {dimension}")
    return correct / eligible


def minmax_report(scores: Sequence[ScoreRecord], split: str,
                  tier_of: Optional[Dict[str, str]] = None) -> dict:
    """Per-dimension min-max normalization of per-model means within one
    split; radar-chart-ready. Single-valued dimensions are flagged
    degenerate instead of dividing by zero."""
    relevant = [r for r in scores
                if tier_of is None or tier_of.get(r.prompt_id) == split]
    by_dim: Dict[str, Dict[str, List[float]]] = {}
    for r in relevant:
        by_dim.setdefault(r.dimension, {}).setdefault(r.model_id, []).append(r.value)

    dimensions = {}
    for dim, models in sorted(by_dim.items()):
        means = {m: sum(v) / len(v) for m, v in sorted(models.items())}
        lo, hi = min(means.values()), max(means.values())
        if lo == hi:
            dimensions[dim] = {"degenerate": True, "models": {m: None for m in means},
                               "min": lo, "max": hi}
            continue
        dimensions[dim] = {
            "degenerate": False,
            "models": {m: (v - lo) / (hi - lo) for m, v in means.items()},
            "min": lo, "max": hi,
        }
    return {"split": split, "dimensions": dimensions}


# ---------------------------------------------------------------------------
# Outcome assembly and the report bundle


def outcomes_from_judgments(pairs: Sequence[dict], judgments: Sequence[dict],
                            scores: Sequence[ScoreRecord] = (),
                            consensus: bool = True) -> List[PairOutcome]:
    """Join a pair-set file, exported judgments and score records into
    PairOutcomes, one per (pair, dimension)."""
    pair_by_id = {p["pair_id"]: p for p in pairs}
    score_by_key = {(r.model_id, r.prompt_id, r.dimension): r.value for r in scores}

    verdicts: Dict[Tuple[str, str], List[str]] = {}
    for j in judgments:
        verdicts.setdefault((j["pair_id"], j["dimension"]), []).append(j["verdict"])

    outcomes = []
    for (pair_id, dimension), vlist in sorted(verdicts.items()):
        p = pair_by_id.get(pair_id)
        if p is None:
            continue
        verdict = human_consensus(vlist) if consensus else vlist[0]
        side_a = Side(model_id=p["side_a"]["model_id"], prompt_id=p["prompt_id"])
        side_b = Side(model_id=p["side_b"]["model_id"], prompt_id=p["prompt_id"])
        metric = None
        ka = (side_a.model_id, p["prompt_id"], dimension)
        kb = (side_b.model_id, p["prompt_id"], dimension)
        if ka in score_by_key and kb in score_by_key:
            metric = {"a": score_by_key[ka], "b": score_by_key[kb]}
        outcomes.append(PairOutcome(pair_id=pair_id, dimension=dimension,
                                    side_a=side_a, side_b=side_b,
                                    human_verdict=verdict, metric_values=metric))
    return outcomes


def alignment_report(outcomes: Sequence[PairOutcome],
                     scores: Sequence[ScoreRecord] = (),
                     tier_of: Optional[Dict[str, str]] = None) -> dict:
    """The full report bundle: win ratios per source, model-level Pearson,
    2AFC accuracy, and min-max radar tables per split."""
    dimensions = sorted({o.dimension for o in outcomes})
    win_ratios: Dict[str, dict] = {}
    pearson_by_dim: Dict[str, Optional[float]] = {}
    twoafc: Dict[str, Optional[float]] = {}

    for dim in dimensions:
        human, human_notes = model_win_ratios(outcomes, "human", dim)
        metric, metric_notes = model_win_ratios(outcomes, "metric", dim)
        win_ratios[dim] = {"human": human, "metric": metric,
                           "notes": human_notes + metric_notes}
        shared = sorted(set(human) & set(metric))
        try:
            pearson_by_dim[dim] = (pearson([human[m] for m in shared],
                                           [metric[m] for m in shared])
                                   if len(shared) >= 2 else None)
        except DegenerateCorrelationError:
            pearson_by_dim[dim] = None
        try:
            twoafc[dim] = twoafc_accuracy(outcomes, dim)
        except NoEligiblePairsError:
            twoafc[dim] = None

    radar = {}
    splits = sorted(set(tier_of.values())) if tier_of else (["all"] if scores else [])
    for split in splits:
        radar[split] = minmax_report(scores, split, tier_of)

    return {"win_ratios": win_ratios, "pearson": pearson_by_dim,
            "twoafc": twoafc, "radar": radar}


def save_report_bundle(out_dir, report: dict) -> Dict[str, str]:
    import json
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in ("win_ratios", "pearson", "twoafc", "radar"):
        p = out_dir / f"{name}.json"
        p.write_text(json.dumps(report[name], indent=2, sort_keys=True) + "\n",
                     encoding="utf-8")
        paths[name] = str(p)
    return paths
