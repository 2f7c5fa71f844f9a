#!/usr/bin/env python3
"""Benchmark the compiled training kernel against the numpy fallback.

Builds a synthetic corpus, runs identical mini-batch work through both
backends, and reports tuples/second plus the largest gradient deviation
between the two implementations.

Usage: python benchmarks/bench_backends.py [--tuples N] [--dim D] [--epochs E]
"""

import argparse
import io
import time

import numpy as np

from phrasecomp import corpus as corpus_mod
from phrasecomp import trainer
from phrasecomp.backends import HAVE_COMPILED, available_backends, select_backend
from phrasecomp.trainer import GradientBuffer, TrainConfig


def make_corpus(n_tuples, seed):
    rng = np.random.default_rng(seed)
    n_subj, n_verb, n_obj, n_prep = 300, 40, 200, 6
    lines = []
    for _ in range(n_tuples):
        s = f"s{rng.integers(n_subj)}"
        v = f"v{rng.integers(n_verb)}"
        o = f"o{rng.integers(n_obj)}"
        if rng.random() < 0.3:
            lines.append(f"{s}\t{v}\t{o}\tp{rng.integers(n_prep)}\tn{rng.integers(n_subj)}")
        else:
            lines.append(f"{s}\t{v}\t{o}")
    corp = corpus_mod.parse_tuple_file(io.StringIO("\n".join(lines) + "\n"))
    corp = corpus_mod.split_corpus(corp, (0.9, 0.05, 0.05), seed=seed)
    corpus_mod.build_counts(corp)
    cands = corpus_mod.select_candidates(corp, 3)
    feats = corpus_mod.build_feature_table(corp.lexicon, cands)
    return corp, cands, feats


def bench_train(corp, feats, dim, epochs, backend_name):
    config = TrainConfig(dim=dim, max_epochs=epochs, seed=1, threshold=3,
                         learning_rate=0.05, l2_lambda=1e-6, backend=backend_name)
    start = time.perf_counter()
    result = trainer.train(corp, feats, config)
    elapsed = time.perf_counter() - start
    n_tuples = len(corp.train_svo()) + len(corp.train_svopn())
    visited = n_tuples * len(result.log)
    return visited / elapsed, elapsed, result


def compare_gradients(corp, feats, dim, seed):
    from phrasecomp.model import init_params

    params = init_params(corp.lexicon, feats.candidates, dim, seed)
    rng = np.random.default_rng(seed)
    params.scorer_weights[:] = rng.normal(0, 0.3, size=params.scorer_weights.shape)
    neg_rng = np.random.default_rng(seed + 1)
    svo_rows, svopn_rows = trainer._pack_rows(
        corp.train_svo()[:512], corp.train_svopn()[:256], corp.train_svo(), corp.lexicon,
        np.random.default_rng(seed + 2))
    results = {}
    for name in available_backends():
        backend = select_backend(name)
        buf = GradientBuffer(params)
        cost = backend.run_batch(params, feats, buf, svo_rows, svopn_rows, None)
        results[name] = (cost, buf)
    if len(results) < 2:
        return None
    (_, a), (_, b) = results["numpy"], results["c"]
    worst = max(
        np.abs(a.nouns - b.nouns).max(),
        np.abs(a.mats - b.mats).max(),
        np.abs(a.phrases - b.phrases).max(),
        np.abs(a.w - b.w).max(),
    )
    cost_gap = abs(results["numpy"][0] - results["c"][0])
    return worst, cost_gap


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--tuples", type=int, default=20_000)
    parser.add_argument("--dim", type=int, default=25)
    parser.add_argument("--epochs", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print(f"building corpus: {args.tuples} tuples, dim {args.dim}")
    corp, cands, feats = make_corpus(args.tuples, args.seed)
    print(f"  candidates: {len(cands)}, vocab: {len(corp.lexicon.nouns)} nouns / "
          f"{len(corp.lexicon.verbs)} verbs / {len(corp.lexicon.preps)} preps")

    agreement = compare_gradients(corp, feats, args.dim, args.seed)
    if agreement is not None:
        worst, cost_gap = agreement
        print(f"backend agreement on one batch: max |grad diff| {worst:.3e}, |cost diff| {cost_gap:.3e}")

    rates = {}
    for name in available_backends():
        rate, elapsed, result = bench_train(corp, feats, args.dim, args.epochs, name)
        rates[name] = rate
        print(f"{name:>6}: {rate:10.0f} tuples/s  ({elapsed:.2f}s for {len(result.log)} epochs, "
              f"final dev {result.log[-1].dev_score:.4f})")
    if HAVE_COMPILED and "numpy" in rates:
        print(f"speedup: {rates['c'] / rates['numpy']:.1f}x")
    else:
        print("compiled backend not built; numpy fallback only")


if __name__ == "__main__":
    main()
