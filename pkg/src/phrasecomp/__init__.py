"""Joint training of compositional and non-compositional verb-object
phrase embeddings, with a logistic compositionality scorer that decides,
per phrase, how much of each representation to use.

Pipeline: parse tuple corpus -> split -> count -> select candidate phrases
-> build features -> train (negative sampling + AdaGrad) -> evaluate
(rating correlation, verb disambiguation, neighbors).  See the ``cli``
module or the README for the command-line surface.
"""

__version__ = "0.1.0"

from .corpus import (
    CandidateSet,
    Counts,
    DisambigDataset,
    Lexicon,
    PhraseFeatureTable,
    RatingDataset,
    TupleCorpus,
    build_counts,
    build_feature_table,
    parse_tuple_file,
    read_disambig_file,
    read_rating_file,
    select_candidates,
    split_corpus,
    write_tuple_file,
)
from .model import (
    Model,
    ModelParams,
    PhraseVectors,
    init_params,
    load_model,
    save_model,
)
from .trainer import TrainConfig, TrainResult, grid_search, train
from .evaluation import (
    bootstrap_ci,
    ensemble_scores,
    eval_compositionality,
    eval_disambiguation,
    nearest_neighbors,
    per_verb_average_alpha,
    spearman,
)

__all__ = [
    "CandidateSet",
    "Counts",
    "DisambigDataset",
    "Lexicon",
    "Model",
    "ModelParams",
    "PhraseFeatureTable",
    "PhraseVectors",
    "RatingDataset",
    "TrainConfig",
    "TrainResult",
    "TupleCorpus",
    "bootstrap_ci",
    "build_counts",
    "build_feature_table",
    "ensemble_scores",
    "eval_compositionality",
    "eval_disambiguation",
    "grid_search",
    "init_params",
    "load_model",
    "nearest_neighbors",
    "parse_tuple_file",
    "per_verb_average_alpha",
    "read_disambig_file",
    "read_rating_file",
    "save_model",
    "select_candidates",
    "spearman",
    "split_corpus",
    "train",
    "write_tuple_file",
]
