import io
import os

import numpy as np
import pytest

from phrasecomp import corpus as corpus_mod
from phrasecomp import model as model_mod

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
SMOKE_TUPLES = os.path.join(DATA_DIR, "smoke_tuples.tsv")
COMP_RATINGS = os.path.join(DATA_DIR, "comp_ratings.tsv")
DISAMBIG_RATINGS = os.path.join(DATA_DIR, "disambig.tsv")


def corpus_from_lines(lines, ratios=(1.0, 0.0, 0.0), seed=0):
    corp = corpus_mod.parse_tuple_file(io.StringIO("\n".join(lines) + "\n"))
    corp = corpus_mod.split_corpus(corp, ratios, seed)
    corpus_mod.build_counts(corp)
    return corp


def build_pipeline(lines, threshold=1, ratios=(1.0, 0.0, 0.0), seed=0):
    """lines -> (corpus, candidates, features)."""
    corp = corpus_from_lines(lines, ratios, seed)
    cands = corpus_mod.select_candidates(corp, threshold)
    feats = corpus_mod.build_feature_table(corp.lexicon, cands)
    return corp, cands, feats


def random_fd_instance(seed, dim=4):
    """A small random model over a 10-noun vocabulary with a mix of
    candidate and non-candidate phrases, for gradient checking."""
    rng = np.random.default_rng(seed)
    nouns = [f"n{i}" for i in range(10)]
    verbs = [f"v{i}" for i in range(3)]
    preps = [f"p{i}" for i in range(2)]
    lines = []
    for _ in range(30):
        lines.append(f"{nouns[rng.integers(10)]}\t{verbs[rng.integers(3)]}\t{nouns[rng.integers(10)]}")
    for _ in range(15):
        lines.append(
            f"{nouns[rng.integers(10)]}\t{verbs[rng.integers(3)]}\t{nouns[rng.integers(10)]}"
            f"\t{preps[rng.integers(2)]}\t{nouns[rng.integers(10)]}"
        )
    corp, cands, feats = build_pipeline(lines, threshold=1, seed=seed)
    params = model_mod.init_params(corp.lexicon, cands, dim, seed)
    # nonzero scorer weights so alpha gradients are exercised away from 0.5
    params.scorer_weights[:] = rng.normal(0.0, 0.5, size=params.scorer_weights.shape)
    return corp, cands, feats, params


@pytest.fixture
def smoke_paths():
    return {"tuples": SMOKE_TUPLES, "comp": COMP_RATINGS, "disambig": DISAMBIG_RATINGS}
