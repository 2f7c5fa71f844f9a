"""Measurement: rank correlation against human ratings, disambiguation by
SVO cosine, ensembles, bootstrap confidence intervals, nearest neighbors,
and per-verb score summaries.

All functions here are read-only over a trained model.
"""

from __future__ import annotations

import decimal
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ._rng import STREAM_BOOTSTRAP, seeded_rng
from .corpus import DisambigDataset, RatingDataset
from .errors import EvaluationError
from .model import Model

DISAMBIG_AVERAGED = "averaged"      # one point per item group, ratings averaged
DISAMBIG_PER_RATING = "per-rating"  # one point per individual judgment


def _rank_corr(rx: np.ndarray, ry: np.ndarray) -> float:
    """Pearson correlation of rank vectors.  cov/sqrt(vx*vy) keeps the
    result exactly +-1.0 when the rank vectors coincide (or oppose)."""
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    r = float(np.dot(dx, dy)) / np.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    return min(1.0, max(-1.0, r))


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks for ties."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise EvaluationError(f"need two equal-length 1-d lists, got {xs.shape} and {ys.shape}")
    if len(xs) < 2:
        raise EvaluationError(f"need at least 2 points, got {len(xs)}")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        raise EvaluationError("rank correlation is undefined for constant scores")
    return _rank_corr(rankdata(xs, method="average"), rankdata(ys, method="average"))


def format_score(x: float, places: int = 2) -> str:
    """Fixed-point display with half-up rounding (0.125 -> '0.13')."""
    quantum = decimal.Decimal(1).scaleb(-places)
    return str(decimal.Decimal(x).quantize(quantum, rounding=decimal.ROUND_HALF_UP))


@dataclass
class CompEvalResult:
    rho: float
    items: list[tuple[str, str, float, float, bool]]  # verb, object, gold, alpha, in-lexicon
    coverage: float

    def score_table(self) -> dict[str, float]:
        return {f"{v} {o}": alpha for v, o, _, alpha, _ in self.items}


def eval_compositionality(model: Model, dataset: RatingDataset) -> CompEvalResult:
    """Correlate the model's compositionality scores with averaged human
    ratings.  Every pair is scored (unknown words just fire fewer
    features); coverage reports how many pairs were fully in-lexicon."""
    if not dataset.items:
        raise EvaluationError("empty rating dataset")
    items = []
    covered = 0
    for verb, obj, ratings in dataset.items:
        alpha = model.phrase_alpha(verb, obj)
        gold = float(np.mean(ratings))
        known = verb in model.lexicon.verbs and obj in model.lexicon.nouns
        covered += known
        items.append((verb, obj, gold, alpha, known))
    rho = spearman([it[2] for it in items], [it[3] for it in items])
    return CompEvalResult(rho=rho, items=items, coverage=covered / len(items))


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b)) / (na * nb)


@dataclass
class DisambigEvalResult:
    rho: float
    groups: list[tuple[str, str, str, str, float, float]]  # verb, subj, obj, landmark, gold mean, cosine
    points: list[tuple[float, float]]  # (gold, cosine) pairs the correlation was computed on
    coverage: float
    skipped: list[tuple[str, str, str, str]]

    def score_table(self) -> dict[str, float]:
        return {f"{v} {s} {o} {l}": cos for v, s, o, l, _, cos in self.groups}


def eval_disambiguation(model: Model, dataset: DisambigDataset, mode: str = DISAMBIG_AVERAGED) -> DisambigEvalResult:
    """Cosine between the SVO embeddings of the target verb and of a
    landmark verb (same subject and object), correlated with human
    similarity ratings.  Groups with out-of-vocabulary words are skipped
    and reported, never zero-filled."""
    if mode not in (DISAMBIG_AVERAGED, DISAMBIG_PER_RATING):
        raise EvaluationError(f"unknown disambiguation mode {mode!r}")
    if not dataset.groups:
        raise EvaluationError("empty disambiguation dataset")
    lex = model.lexicon
    groups = []
    skipped = []
    gold_points: list[float] = []
    sim_points: list[float] = []
    for verb, subj, obj, landmark, ratings in dataset.groups:
        known = (verb in lex.verbs and landmark in lex.verbs
                 and subj in lex.nouns and obj in lex.nouns)
        if not known:
            skipped.append((verb, subj, obj, landmark))
            continue
        sim = _cosine(model.svo_vector(subj, verb, obj), model.svo_vector(subj, landmark, obj))
        gold_mean = float(np.mean(ratings))
        groups.append((verb, subj, obj, landmark, gold_mean, sim))
        if mode == DISAMBIG_AVERAGED:
            gold_points.append(gold_mean)
            sim_points.append(sim)
        else:
            for r in ratings:
                gold_points.append(float(r))
                sim_points.append(sim)
    if not groups:
        raise EvaluationError("no disambiguation group is fully in-vocabulary")
    rho = spearman(gold_points, sim_points)
    return DisambigEvalResult(
        rho=rho,
        groups=groups,
        points=list(zip(gold_points, sim_points)),
        coverage=len(groups) / len(dataset.groups),
        skipped=skipped,
    )


def ensemble_scores(score_tables: list[dict[str, float]]) -> tuple[dict[str, float], list[str]]:
    """Average per-key scores across runs.  Only keys present in every
    table are averaged; the dropped keys are returned for reporting."""
    if not score_tables:
        raise EvaluationError("no score tables to ensemble")
    if len(score_tables) == 1:
        return dict(score_tables[0]), []
    common = set(score_tables[0])
    union = set(score_tables[0])
    for table in score_tables[1:]:
        common &= set(table)
        union |= set(table)
    if not common:
        raise EvaluationError("score tables have no phrases in common")
    merged = {key: float(np.mean([t[key] for t in score_tables])) for key in sorted(common)}
    dropped = sorted(union - common)
    return merged, dropped


@dataclass
class BootstrapResult:
    lo: float
    hi: float
    replicates: int
    skipped: int


def bootstrap_ci(paired_scores, num_replicates: int = 10_000, level: float = 0.95,
                 seed: int = 0) -> BootstrapResult:
    """Percentile bootstrap interval for the Spearman correlation of
    (gold, predicted) pairs.  Replicates that resample a constant column
    (where the correlation is undefined) are skipped and counted."""
    pairs = np.asarray(paired_scores, dtype=np.float64)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or len(pairs) < 2:
        raise EvaluationError("need an (n, 2) array of (gold, predicted) pairs with n >= 2")
    if num_replicates < 100:
        raise EvaluationError(f"need at least 100 replicates, got {num_replicates}")
    if not 0.0 < level < 1.0:
        raise EvaluationError(f"confidence level must be in (0, 1), got {level}")
    rng = seeded_rng(seed, STREAM_BOOTSTRAP)
    n = len(pairs)
    rhos = []
    skipped = 0
    for _ in range(num_replicates):
        idx = rng.integers(0, n, size=n)
        gold = pairs[idx, 0]
        pred = pairs[idx, 1]
        if np.all(gold == gold[0]) or np.all(pred == pred[0]):
            skipped += 1
            continue
        rhos.append(_rank_corr(rankdata(gold, method="average"), rankdata(pred, method="average")))
    if not rhos:
        raise EvaluationError("every bootstrap replicate was degenerate")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(rhos, [tail, 1.0 - tail])
    return BootstrapResult(lo=float(lo), hi=float(hi), replicates=len(rhos), skipped=skipped)


def nearest_neighbors(model: Model, query: tuple[str, ...], k: int,
                      pool: list[tuple[str, ...]]) -> list[tuple[str, float]]:
    """Top-k phrases of the pool by cosine similarity to the query.

    Query and pool entries are (verb, object) or (subject, verb, object)
    word tuples; the query itself is excluded, ties break alphabetically,
    and pool entries with unknown words are dropped.
    """
    if not pool:
        raise EvaluationError("empty candidate pool")
    qvec = _embed_words(model, query)
    scored = []
    for entry in pool:
        if tuple(entry) == tuple(query):
            continue
        try:
            vec = _embed_words(model, entry)
        except LookupError:
            continue
        scored.append((" ".join(entry), _cosine(qvec, vec)))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[: max(k, 0)]


def _embed_words(model: Model, words: tuple[str, ...]) -> np.ndarray:
    if len(words) == 2:
        return model.vo_vectors(words[0], words[1]).vec
    if len(words) == 3:
        return model.svo_vector(words[0], words[1], words[2])
    raise EvaluationError(f"expected 2 (verb object) or 3 (subject verb object) words, got {len(words)}")


def per_verb_average_alpha(model: Model, min_object_types: int = 30) -> dict[str, float]:
    """Mean compositionality score per verb over its candidate phrases,
    for verbs with strictly more than ``min_object_types`` distinct
    candidate objects."""
    alphas = model.candidate_alphas()
    pairs = model.candidates.pairs
    by_verb: dict[int, list[float]] = {}
    for (v, _o), a in zip(pairs, alphas):
        by_verb.setdefault(int(v), []).append(float(a))
    out = {
        model.lexicon.verbs.decode(v): float(np.mean(scores))
        for v, scores in sorted(by_verb.items())
        if len(scores) > min_object_types
    }
    if not out:
        warnings.warn(f"no verb has more than {min_object_types} candidate object types", stacklevel=2)
    return out


def per_verb_report(averages: dict[str, float], top: int = 10) -> list[str]:
    """Two-column listing of the verbs with the highest and lowest average
    scores: ``verb<TAB>score<TAB>verb<TAB>score`` per line, 2 decimals."""
    ranked = sorted(averages.items(), key=lambda item: (-item[1], item[0]))
    top = min(top, len(ranked))
    highest = ranked[:top]
    lowest = list(reversed(ranked[-top:]))
    lines = ["# highest\t\tlowest\t"]
    for (hv, hs), (lv, ls) in zip(highest, lowest):
        lines.append(f"{hv}\t{format_score(hs)}\t{lv}\t{format_score(ls)}")
    return lines
