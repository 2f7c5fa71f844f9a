"""Negative-sampling training of the joint phrase embedding model.

The cost of one observed tuple is the log-sigmoid of its plausibility
score plus the log-sigmoids of the negated scores of three corruptions,
one per slot.  Mini-batch gradients (batch means, plus L2 on the scorer
weights) feed a sparse AdaGrad update; training stops the first time the
pseudo-disambiguation accuracy on the development split drops, returning
the snapshot from the best epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from ._rng import (
    STREAM_DEV_NEG,
    STREAM_EPOCH_NEG,
    STREAM_SHUFFLE,
    seeded_rng,
)
from .backends import numpy_backend, select_backend
from .corpus import PhraseFeatureTable, TupleCorpus
from .errors import ConfigError, EvaluationError, SamplingError
from .model import ModelParams, candidate_alpha_scores, init_params, score_alpha


@dataclass
class TrainConfig:
    dim: int = 25
    batch_size: int = 100
    learning_rate: float = 0.05
    l2_lambda: float = 1e-6
    threshold: int = 10           # candidate selection: count(VO) > threshold
    max_epochs: int = 50
    seed: int = 1
    resample_negatives: bool = True  # fresh corruptions every epoch, else frozen per run
    fix_alpha: float | None = None   # 1.0 and 0.5 reproduce the two baselines
    backend: str = "auto"

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.l2_lambda < 0.0:
            raise ConfigError(f"l2_lambda must be >= 0, got {self.l2_lambda}")
        if self.threshold < 0:
            raise ConfigError(f"threshold must be >= 0, got {self.threshold}")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.fix_alpha is not None and not 0.0 <= self.fix_alpha <= 1.0:
            raise ConfigError(f"fix_alpha must be in [0, 1], got {self.fix_alpha}")


class SvoTuple(NamedTuple):
    s: int
    v: int
    o: int


class SvopnTuple(NamedTuple):
    s: int
    v: int
    o: int
    p: int
    n: int


class NegativeSamples(NamedTuple):
    """Three corruptions of an observed tuple, one per slot."""

    pred: tuple   # predicate replaced (verb, or preposition)
    arg1: tuple   # first argument replaced (subject, or the whole SVO)
    arg2: tuple   # second argument replaced (object, or the prepositional noun)


def _draw_excluding(rng: np.random.Generator, size: int, exclude: int) -> int:
    """Uniform draw from [0, size) without ``exclude``."""
    if size < 2:
        raise SamplingError(f"cannot corrupt a slot over a vocabulary of size {size}")
    j = int(rng.integers(size - 1))
    return j + 1 if j >= exclude else j


def _vec_draw_excluding(rng: np.random.Generator, size: int, exclude: np.ndarray) -> np.ndarray:
    if size < 2:
        raise SamplingError(f"cannot corrupt a slot over a vocabulary of size {size}")
    draws = rng.integers(0, size - 1, size=len(exclude))
    return draws + (draws >= exclude)


def _draw_svo_replacement(rng: np.random.Generator, pool: np.ndarray, original) -> SvoTuple:
    if len(pool) == 0:
        raise SamplingError("no observed training SVO tuples to sample a replacement from")
    orig = np.asarray(original, dtype=np.int64)
    for _ in range(64):
        row = pool[int(rng.integers(len(pool)))]
        if not np.array_equal(row, orig):
            return SvoTuple(int(row[0]), int(row[1]), int(row[2]))
    different = np.nonzero(np.any(pool != orig, axis=1))[0]
    if len(different) == 0:
        raise SamplingError("every training SVO tuple equals the original; cannot corrupt")
    row = pool[different[int(rng.integers(len(different)))]]
    return SvoTuple(int(row[0]), int(row[1]), int(row[2]))


def sample_negatives(observed, lexicon, corpus: TupleCorpus, rng: np.random.Generator) -> NegativeSamples:
    """Corrupt each slot of an observed tuple with a uniform random
    replacement (never the original entry)."""
    if isinstance(observed, SvoTuple) or len(observed) == 3:
        s, v, o = observed
        v2 = _draw_excluding(rng, len(lexicon.verbs), v)
        s2 = _draw_excluding(rng, len(lexicon.nouns), s)
        o2 = _draw_excluding(rng, len(lexicon.nouns), o)
        return NegativeSamples(SvoTuple(s, v2, o), SvoTuple(s2, v, o), SvoTuple(s, v, o2))
    s, v, o, p, n = observed
    p2 = _draw_excluding(rng, len(lexicon.preps), p)
    svo2 = _draw_svo_replacement(rng, corpus.train_svo(), (s, v, o))
    n2 = _draw_excluding(rng, len(lexicon.nouns), n)
    return NegativeSamples(
        SvopnTuple(s, v, o, p2, n),
        SvopnTuple(svo2.s, svo2.v, svo2.o, p, n),
        SvopnTuple(s, v, o, p, n2),
    )


def _pack_rows(svo: np.ndarray, svopn: np.ndarray, svo_pool: np.ndarray,
               lexicon, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Attach sampled corruption ids to tuple arrays in backend row layout.

    Draw order is fixed (SVO: verb, subject, object; then SVOPN:
    preposition, SVO replacement, noun) so runs reproduce exactly.
    """
    n_nouns, n_verbs, n_preps = len(lexicon.nouns), len(lexicon.verbs), len(lexicon.preps)
    svo_rows = np.zeros((len(svo), 6), dtype=np.int64)
    if len(svo):
        svo_rows[:, :3] = svo
        svo_rows[:, 3] = _vec_draw_excluding(rng, n_verbs, svo[:, 1])
        svo_rows[:, 4] = _vec_draw_excluding(rng, n_nouns, svo[:, 0])
        svo_rows[:, 5] = _vec_draw_excluding(rng, n_nouns, svo[:, 2])
    svopn_rows = np.zeros((len(svopn), 10), dtype=np.int64)
    if len(svopn):
        if len(svo_pool) == 0:
            raise SamplingError("SVOPN corruption needs a non-empty training SVO pool")
        svopn_rows[:, :5] = svopn
        svopn_rows[:, 5] = _vec_draw_excluding(rng, n_preps, svopn[:, 3])
        idx = rng.integers(0, len(svo_pool), size=len(svopn))
        for _ in range(100):
            clash = np.all(svo_pool[idx] == svopn[:, :3], axis=1)
            if not clash.any():
                break
            idx[clash] = rng.integers(0, len(svo_pool), size=int(clash.sum()))
        else:
            raise SamplingError("could not sample SVO replacements differing from the originals")
        svopn_rows[:, 6:9] = svo_pool[idx]
        svopn_rows[:, 9] = _vec_draw_excluding(rng, n_nouns, svopn[:, 4])
    return svo_rows, svopn_rows


class GradientBuffer:
    """Per-batch gradient accumulators mirroring the parameter blocks, with
    touched-row flags so clearing and the AdaGrad update stay sparse."""

    def __init__(self, params: ModelParams):
        self.nouns = np.zeros_like(params.nouns)
        self.mats = np.zeros_like(params.mats)
        self.phrases = np.zeros_like(params.phrases)
        self.w = np.zeros_like(params.scorer_weights)
        self.t_nouns = np.zeros(params.nouns.shape[0], dtype=np.uint8)
        self.t_mats = np.zeros(params.mats.shape[0], dtype=np.uint8)
        self.t_phrases = np.zeros(params.phrases.shape[0], dtype=np.uint8)

    def clear(self):
        for grad, flags in ((self.nouns, self.t_nouns), (self.mats, self.t_mats), (self.phrases, self.t_phrases)):
            rows = np.nonzero(flags)[0]
            if len(rows):
                grad[rows] = 0.0
                flags[rows] = 0
        self.w[:] = 0.0


class AdaGradState:
    """Per-scalar squared-gradient accumulators."""

    def __init__(self, params: ModelParams):
        self.nouns = np.zeros_like(params.nouns)
        self.mats = np.zeros_like(params.mats)
        self.phrases = np.zeros_like(params.phrases)
        self.w = np.zeros_like(params.scorer_weights)


def _adagrad_block(param, grad, acc, rows, eps, scale):
    g = grad[rows] * scale
    nz = g != 0.0
    if not nz.any():
        return
    a = acc[rows]
    a[nz] += g[nz] ** 2
    acc[rows] = a
    step = np.zeros_like(g)
    step[nz] = eps * g[nz] / np.sqrt(a[nz])
    param[rows] -= step


def adagrad_step(params: ModelParams, buf: GradientBuffer, state: AdaGradState,
                 learning_rate: float, l2_lambda: float, batch_count: int) -> None:
    """One AdaGrad update from the summed batch gradient.

    The gradient is divided by the batch size (batch mean); the L2 term
    applies to the scorer weights only.  A scalar is updated, and its
    accumulator grown, only when its gradient entry is nonzero.
    """
    scale = 1.0 / batch_count
    _adagrad_block(params.nouns, buf.nouns, state.nouns, np.nonzero(buf.t_nouns)[0], learning_rate, scale)
    _adagrad_block(params.mats, buf.mats, state.mats, np.nonzero(buf.t_mats)[0], learning_rate, scale)
    _adagrad_block(params.phrases, buf.phrases, state.phrases, np.nonzero(buf.t_phrases)[0], learning_rate, scale)
    g = buf.w * scale
    if l2_lambda != 0.0:
        g = g + l2_lambda * params.scorer_weights
    nz = g != 0.0
    if nz.any():
        state.w[nz] += g[nz] ** 2
        params.scorer_weights[nz] -= learning_rate * g[nz] / np.sqrt(state.w[nz])


def _tuple_ids(t) -> tuple:
    return tuple(int(x) for x in t)


def tuple_cost(observed, negatives: NegativeSamples, params: ModelParams,
               features: PhraseFeatureTable, fix_alpha: float | None = None) -> float:
    """Cost of one observed tuple with its three corruptions."""
    cost = numpy_backend.single_pass(params, features, None, _tuple_ids(observed), True, fix_alpha)
    for neg in negatives:
        cost += numpy_backend.single_pass(params, features, None, _tuple_ids(neg), False, fix_alpha)
    return cost


def backward(observed, negatives: NegativeSamples, params: ModelParams,
             features: PhraseFeatureTable, buf: GradientBuffer,
             fix_alpha: float | None = None) -> float:
    """Accumulate the analytic gradient of ``tuple_cost`` into ``buf``;
    returns the cost as a byproduct."""
    cost = numpy_backend.single_pass(params, features, buf, _tuple_ids(observed), True, fix_alpha)
    for neg in negatives:
        cost += numpy_backend.single_pass(params, features, buf, _tuple_ids(neg), False, fix_alpha)
    return cost


def dev_score(params: ModelParams, features: PhraseFeatureTable, corpus: TupleCorpus,
              seed: int, fix_alpha: float | None = None, backend=None) -> float:
    """Pseudo-disambiguation accuracy on the development split: the
    fraction of (tuple, slot) pairs where the observed tuple outscores its
    corruption.  Negatives are frozen by the seed, so the score is a
    deterministic function of the parameters."""
    backend = backend if backend is not None else select_backend()
    dev_svo, dev_svopn = corpus.dev_svo(), corpus.dev_svopn()
    if len(dev_svo) + len(dev_svopn) == 0:
        raise EvaluationError("development split is empty")
    rng = seeded_rng(seed, STREAM_DEV_NEG)
    svo_rows, svopn_rows = _pack_rows(dev_svo, dev_svopn, corpus.train_svo(), corpus.lexicon, rng)
    svo_scores, svopn_scores = backend.score_rows(params, features, svo_rows, svopn_rows, fix_alpha)
    scores = np.concatenate([svo_scores, svopn_scores], axis=0)
    wins = scores[:, :1] > scores[:, 1:]
    return float(wins.mean())


def mean_candidate_alpha(params: ModelParams, features: PhraseFeatureTable,
                         fix_alpha: float | None = None) -> float:
    if fix_alpha is not None:
        return fix_alpha
    if len(features.candidates) == 0:
        return float("nan")
    return float(candidate_alpha_scores(params, features).mean())


@dataclass
class EpochStats:
    epoch: int
    train_cost: float   # mean cost per training tuple
    dev_score: float
    mean_alpha: float


@dataclass
class TrainResult:
    params: ModelParams
    log: list[EpochStats]
    best_epoch: int
    best_score: float
    stopped_early: bool
    alpha_trace: list[tuple[int, list[float]]] = field(default_factory=list)


def train(corpus: TupleCorpus, features: PhraseFeatureTable, config: TrainConfig,
          track_phrases: list[tuple[int, int]] | None = None) -> TrainResult:
    """Run the full optimization and return the best-epoch snapshot.

    Each epoch reshuffles the training stream (SVO and SVOPN tuples
    interleaved), resamples negatives (unless frozen by config), walks
    mini-batches, then scores the development split.  Training stops at the
    first strict drop of the dev score.  ``track_phrases`` (verb id,
    object id) pairs get their alpha recorded after every epoch.
    """
    backend = select_backend(config.backend)
    lexicon = corpus.lexicon
    params = init_params(lexicon, features.candidates, config.dim, config.seed)
    result = TrainResult(params=params, log=[], best_epoch=0, best_score=float("-inf"), stopped_early=False)
    if config.max_epochs == 0:
        return result

    train_svo, train_svopn = corpus.train_svo(), corpus.train_svopn()
    n_svo, n_svopn = len(train_svo), len(train_svopn)
    n_train = n_svo + n_svopn
    if n_train == 0:
        raise ConfigError("training split is empty")

    buf = GradientBuffer(params)
    state = AdaGradState(params)
    best_params = params.copy()
    prev_score = None

    for epoch in range(1, config.max_epochs + 1):
        neg_stream = epoch if config.resample_negatives else 0
        neg_rng = seeded_rng(config.seed, STREAM_EPOCH_NEG, neg_stream)
        svo_rows, svopn_rows = _pack_rows(train_svo, train_svopn, train_svo, lexicon, neg_rng)
        order = seeded_rng(config.seed, STREAM_SHUFFLE, epoch).permutation(n_train)

        cost_sum = 0.0
        for start in range(0, n_train, config.batch_size):
            chunk = order[start : start + config.batch_size]
            svo_idx = chunk[chunk < n_svo]
            svopn_idx = chunk[chunk >= n_svo] - n_svo
            cost_sum += backend.run_batch(params, features, buf,
                                          svo_rows[svo_idx], svopn_rows[svopn_idx], config.fix_alpha)
            adagrad_step(params, buf, state, config.learning_rate, config.l2_lambda, len(chunk))
            buf.clear()

        bad = params.first_nonfinite_block()
        if bad is not None:
            raise ArithmeticError(f"non-finite values in {bad} after epoch {epoch}")

        score = dev_score(params, features, corpus, config.seed, config.fix_alpha, backend)
        result.log.append(EpochStats(
            epoch=epoch,
            train_cost=cost_sum / n_train,
            dev_score=score,
            mean_alpha=mean_candidate_alpha(params, features, config.fix_alpha),
        ))
        if track_phrases:
            alphas = [score_alpha(features.phi(v, o), params.scorer_weights) for v, o in track_phrases]
            result.alpha_trace.append((epoch, alphas))

        if score > result.best_score:
            result.best_score = score
            result.best_epoch = epoch
            best_params = params.copy()
        if prev_score is not None and score < prev_score:
            result.stopped_early = True
            break
        prev_score = score

    result.params = best_params
    return result


@dataclass
class GridCell:
    learning_rate: float
    l2_lambda: float
    dev_score: float
    best_epoch: int
    epochs_run: int


@dataclass
class GridSearchResult:
    best_config: TrainConfig
    best_result: TrainResult
    cells: list[GridCell]


def grid_search(corpus: TupleCorpus, features: PhraseFeatureTable, base_config: TrainConfig,
                learning_rates, l2_lambdas) -> GridSearchResult:
    """Train every (learning rate, L2) cell with early stopping and return
    the winner by dev score; ties prefer smaller L2, then smaller rate."""
    learning_rates = list(learning_rates)
    l2_lambdas = list(l2_lambdas)
    if not learning_rates or not l2_lambdas:
        raise ConfigError("hyperparameter grid is empty")
    cells: list[GridCell] = []
    best: tuple | None = None
    best_cfg = None
    best_res = None
    for eps in learning_rates:
        for lam in l2_lambdas:
            cfg = replace(base_config, learning_rate=eps, l2_lambda=lam)
            res = train(corpus, features, cfg)
            cells.append(GridCell(
                learning_rate=eps,
                l2_lambda=lam,
                dev_score=res.best_score,
                best_epoch=res.best_epoch,
                epochs_run=len(res.log),
            ))
            key = (-res.best_score, lam, eps)
            if best is None or key < best:
                best = key
                best_cfg = cfg
                best_res = res
    return GridSearchResult(best_config=best_cfg, best_result=best_res, cells=cells)
