"""Model parameters and every forward computation.

A phrase embedding is an adaptive mix of two representations: the
compositional one, built by multiplying the verb's matrix with the object's
vector, and a non-compositional one looked up directly for frequent
("candidate") phrases.  The mixing weight is the phrase's compositionality
score, a logistic regression over the sparse features of the phrase.
Phrases outside the candidate set fall back to the compositional embedding.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass

import numpy as np

from ._rng import STREAM_INIT, seeded_rng
from .corpus import CandidateSet, Counts, Interner, Lexicon, Phi, PhraseFeatureTable
from .errors import ModelIOError, UnknownTokenError


def sigmoid(x: float) -> float:
    """Numerically stable logistic function."""
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def log_sigmoid(x: float) -> float:
    """log(sigmoid(x)) without overflow for large |x|."""
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@dataclass
class ModelParams:
    """All learnable parameters.

    ``mats`` stacks verb matrices first, then preposition matrices, since
    both play the same predicate role; ``predicate_index`` maps into it.
    """

    dim: int
    n_verbs: int
    nouns: np.ndarray           # (n_nouns, dim)
    mats: np.ndarray            # (n_verbs + n_preps, dim, dim)
    phrases: np.ndarray         # (n_candidates, dim) non-compositional embeddings
    scorer_weights: np.ndarray  # (feature_table.size,)
    seed: int

    def predicate_index(self, verb_id: int = -1, prep_id: int = -1) -> int:
        if verb_id >= 0:
            return verb_id
        return self.n_verbs + prep_id

    def copy(self) -> "ModelParams":
        return ModelParams(
            dim=self.dim,
            n_verbs=self.n_verbs,
            nouns=self.nouns.copy(),
            mats=self.mats.copy(),
            phrases=self.phrases.copy(),
            scorer_weights=self.scorer_weights.copy(),
            seed=self.seed,
        )

    def blocks(self):
        yield "noun_embeddings", self.nouns
        yield "predicate_matrices", self.mats
        yield "phrase_embeddings", self.phrases
        yield "scorer_weights", self.scorer_weights

    def first_nonfinite_block(self) -> str | None:
        for name, arr in self.blocks():
            if arr.size and not np.isfinite(arr).all():
                return name
        return None


def init_params(lexicon: Lexicon, candidates: CandidateSet, dim: int, seed: int) -> ModelParams:
    """Gaussian init: embeddings with variance 1/dim, matrices with variance
    1/dim^2, scorer weights zero (so every initial alpha is exactly 0.5).

    Draw order is nouns, matrices, phrases; the first two are therefore
    unaffected by the size of the candidate set.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    rng = seeded_rng(seed, STREAM_INIT)
    n_nouns = len(lexicon.nouns)
    n_preds = len(lexicon.verbs) + len(lexicon.preps)
    n_features = len(lexicon.verbs) + n_nouns + len(candidates) + 2
    nouns = rng.normal(0.0, math.sqrt(1.0 / dim), size=(n_nouns, dim))
    mats = rng.normal(0.0, 1.0 / dim, size=(n_preds, dim, dim))
    phrases = rng.normal(0.0, math.sqrt(1.0 / dim), size=(len(candidates), dim))
    return ModelParams(
        dim=dim,
        n_verbs=len(lexicon.verbs),
        nouns=nouns,
        mats=mats,
        phrases=phrases,
        scorer_weights=np.zeros(n_features),
        seed=seed,
    )


@dataclass
class PhraseVectors:
    """Everything computed for one VO phrase."""

    alpha: float
    comp: np.ndarray             # compositional embedding
    noncomp: np.ndarray | None   # candidate phrases only
    vec: np.ndarray              # embedding used downstream
    phrase_id: int               # -1 outside the candidate set


def compose_vo(verb_mat: np.ndarray, object_vec: np.ndarray) -> np.ndarray:
    """Compositional phrase embedding: verb matrix times object vector."""
    if verb_mat.shape != (object_vec.shape[0], object_vec.shape[0]):
        raise ValueError(f"shape mismatch: matrix {verb_mat.shape} vs vector {object_vec.shape}")
    return verb_mat @ object_vec


def score_alpha(phi: Phi, weights: np.ndarray) -> float:
    """Compositionality score sigma(w . phi); 0.5 when nothing fires."""
    if len(phi.idx) == 0:
        return 0.5
    return sigmoid(float(np.dot(weights[phi.idx], phi.val)))


def blend(alpha: float, comp: np.ndarray, noncomp: np.ndarray) -> np.ndarray:
    """Convex combination of the two phrase representations."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if comp.shape != noncomp.shape:
        raise ValueError(f"shape mismatch: {comp.shape} vs {noncomp.shape}")
    return alpha * comp + (1.0 - alpha) * noncomp


def vo_embedding(verb_id: int, object_id: int, params: ModelParams,
                 features: PhraseFeatureTable, fix_alpha: float | None = None) -> PhraseVectors:
    """Phrase embedding for a VO pair of known ids.

    Candidates blend both representations; for anything else the embedding
    is the compositional vector, with alpha still reported (from whatever
    partial features fire) for diagnostics.
    """
    if not 0 <= verb_id < params.mats.shape[0] or not 0 <= object_id < params.nouns.shape[0]:
        raise UnknownTokenError(f"verb id {verb_id} / object id {object_id} out of range")
    comp = params.mats[verb_id] @ params.nouns[object_id]
    pid = features.phrase_id(verb_id, object_id)
    if fix_alpha is not None:
        alpha = fix_alpha
    else:
        alpha = score_alpha(features.phi(verb_id, object_id), params.scorer_weights)
    if pid < 0:
        return PhraseVectors(alpha=alpha, comp=comp, noncomp=None, vec=comp, phrase_id=-1)
    noncomp = params.phrases[pid]
    vec = comp if alpha == 1.0 else blend(alpha, comp, noncomp)
    return PhraseVectors(alpha=alpha, comp=comp, noncomp=noncomp, vec=vec, phrase_id=pid)


def svo_embedding(subject_vec: np.ndarray, vo_vec: np.ndarray) -> np.ndarray:
    """Element-wise product of the subject and phrase embeddings."""
    if subject_vec.shape != vo_vec.shape:
        raise ValueError(f"shape mismatch: {subject_vec.shape} vs {vo_vec.shape}")
    return subject_vec * vo_vec


def score_svo(subject_vec: np.ndarray, vo_vec: np.ndarray) -> float:
    """Plausibility of a subject for a VO phrase."""
    if subject_vec.shape != vo_vec.shape:
        raise ValueError(f"shape mismatch: {subject_vec.shape} vs {vo_vec.shape}")
    return float(np.dot(subject_vec, vo_vec))


def score_svopn(svo_vec: np.ndarray, prep_mat: np.ndarray, noun_vec: np.ndarray) -> float:
    """Plausibility of attaching (preposition, noun) to an SVO."""
    return float(np.dot(svo_vec, prep_mat @ noun_vec))


def candidate_alpha_scores(params: ModelParams, features: PhraseFeatureTable) -> np.ndarray:
    """Compositionality scores of all candidate phrases, in phrase-id order."""
    z = np.sum(params.scorer_weights[features.cand_feat_idx] * features.cand_feat_val, axis=1)
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class Model:
    """A trained (or initialized) model bundled with everything needed to
    score new text: vocabulary, counts, candidates and feature norms."""

    params: ModelParams
    lexicon: Lexicon
    candidates: CandidateSet
    features: PhraseFeatureTable

    def phrase_alpha(self, verb: str, obj: str) -> float:
        """Compositionality score for a phrase given as strings.  Unknown
        words just mean fewer firing features (all unknown -> 0.5)."""
        v = self.lexicon.verbs.get(verb)
        o = self.lexicon.nouns.get(obj)
        return score_alpha(self.features.phi(v, o), self.params.scorer_weights)

    def vo_vectors(self, verb: str, obj: str, fix_alpha: float | None = None) -> PhraseVectors:
        v = self.lexicon.verbs.get(verb)
        o = self.lexicon.nouns.get(obj)
        if v < 0:
            raise UnknownTokenError(f"unknown verb: {verb!r}")
        if o < 0:
            raise UnknownTokenError(f"unknown noun: {obj!r}")
        return vo_embedding(v, o, self.params, self.features, fix_alpha=fix_alpha)

    def svo_vector(self, subj: str, verb: str, obj: str, fix_alpha: float | None = None) -> np.ndarray:
        s = self.lexicon.nouns.get(subj)
        if s < 0:
            raise UnknownTokenError(f"unknown noun: {subj!r}")
        vo = self.vo_vectors(verb, obj, fix_alpha=fix_alpha)
        return svo_embedding(self.params.nouns[s], vo.vec)

    def candidate_alphas(self) -> np.ndarray:
        """Scores of all candidate phrases in phrase-id order."""
        return candidate_alpha_scores(self.params, self.features)


# --- serialization ----------------------------------------------------------
#
# Versioned little-endian binary.  Layout (all ints i64, floats f64):
#   magic "VOPC", u32 version, u64 payload length, payload, u32 crc32(payload)
# Payload field order: dim, seed, interners (nouns, verbs, preps), counts
# (n_verbs, n_nouns, vo pairs, count_v, count_o, total), candidate threshold
# and keys, feature norms, then the four parameter blocks.

_MAGIC = b"VOPC"
_VERSION = 1


def _pack_str_table(strings: list[str]) -> bytes:
    parts = [struct.pack("<q", len(strings))]
    for s in strings:
        b = s.encode("utf-8")
        parts.append(struct.pack("<q", len(b)))
        parts.append(b)
    return b"".join(parts)


def _pack_i64_array(arr: np.ndarray) -> bytes:
    return struct.pack("<q", arr.size) + np.ascontiguousarray(arr, dtype="<i8").tobytes()


def _pack_f64_array(arr: np.ndarray) -> bytes:
    shape = arr.shape
    parts = [struct.pack("<q", len(shape))]
    parts.extend(struct.pack("<q", s) for s in shape)
    parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelIOError("truncated model file: payload ends mid-field")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def i64(self) -> int:
        return struct.unpack("<q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def str_table(self) -> list[str]:
        n = self.i64()
        out = []
        for _ in range(n):
            size = self.i64()
            out.append(self.take(size).decode("utf-8"))
        return out

    def i64_array(self) -> np.ndarray:
        n = self.i64()
        return np.frombuffer(self.take(8 * n), dtype="<i8").astype(np.int64)

    def f64_array(self) -> np.ndarray:
        ndim = self.i64()
        shape = tuple(self.i64() for _ in range(ndim))
        n = int(np.prod(shape)) if shape else 1
        flat = np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)
        return flat.reshape(shape)


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as out:
            out.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: Model, path) -> None:
    p, lex, cand, feats = model.params, model.lexicon, model.candidates, model.features
    counts = lex.counts
    payload = b"".join([
        struct.pack("<q", p.dim),
        struct.pack("<q", p.seed),
        _pack_str_table(lex.nouns.strings),
        _pack_str_table(lex.verbs.strings),
        _pack_str_table(lex.preps.strings),
        struct.pack("<q", counts.n_verbs),
        struct.pack("<q", counts.n_nouns),
        _pack_i64_array(counts.vo_keys),
        _pack_i64_array(counts.vo_counts),
        _pack_i64_array(counts.count_v),
        _pack_i64_array(counts.count_o),
        struct.pack("<q", counts.total),
        struct.pack("<q", cand.threshold),
        _pack_i64_array(cand.keys),
        struct.pack("<d", feats.norm_freq),
        struct.pack("<d", feats.norm_pmi),
        _pack_f64_array(p.nouns),
        _pack_f64_array(p.mats),
        _pack_f64_array(p.phrases),
        _pack_f64_array(p.scorer_weights),
    ])
    blob = b"".join([
        _MAGIC,
        struct.pack("<I", _VERSION),
        struct.pack("<Q", len(payload)),
        payload,
        struct.pack("<I", zlib.crc32(payload)),
    ])
    atomic_write(path, blob)


def load_model(path) -> Model:
    with open(path, "rb") as stream:
        blob = stream.read()
    if len(blob) < 16 or blob[:4] != _MAGIC:
        raise ModelIOError(f"{path}: not a phrasecomp model file (bad magic)")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != _VERSION:
        raise ModelIOError(f"{path}: unsupported model format version {version} (expected {_VERSION})")
    (length,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + length + 4:
        raise ModelIOError(f"{path}: truncated model file ({len(blob)} bytes, need {16 + length + 4})")
    payload = blob[16 : 16 + length]
    (crc,) = struct.unpack("<I", blob[16 + length : 16 + length + 4])
    if zlib.crc32(payload) != crc:
        raise ModelIOError(f"{path}: checksum mismatch, file is corrupt")

    r = _Reader(payload)
    dim = r.i64()
    seed = r.i64()
    nouns_tab = Interner(r.str_table())
    verbs_tab = Interner(r.str_table())
    preps_tab = Interner(r.str_table())
    n_verbs, n_nouns = r.i64(), r.i64()
    counts = Counts(
        n_verbs=n_verbs,
        n_nouns=n_nouns,
        vo_keys=r.i64_array(),
        vo_counts=r.i64_array(),
        count_v=r.i64_array(),
        count_o=r.i64_array(),
        total=r.i64(),
    )
    threshold = r.i64()
    cand_keys = r.i64_array()
    norm_freq = r.f64()
    norm_pmi = r.f64()
    nouns = r.f64_array()
    mats = r.f64_array()
    phrases = r.f64_array()
    weights = r.f64_array()

    lexicon = Lexicon(nouns=nouns_tab, verbs=verbs_tab, preps=preps_tab, counts=counts)
    pairs = (
        np.stack([cand_keys // counts.n_nouns, cand_keys % counts.n_nouns], axis=1)
        if len(cand_keys)
        else np.zeros((0, 2), dtype=np.int64)
    )
    candidates = CandidateSet(pairs=pairs, keys=cand_keys, n_nouns=counts.n_nouns, threshold=threshold)
    features = PhraseFeatureTable(lexicon, candidates, norm_freq=norm_freq, norm_pmi=norm_pmi)
    params = ModelParams(
        dim=dim,
        n_verbs=len(verbs_tab),
        nouns=nouns,
        mats=mats,
        phrases=phrases,
        scorer_weights=weights,
        seed=seed,
    )
    return Model(params=params, lexicon=lexicon, candidates=candidates, features=features)


def export_text(model: Model, stream) -> None:
    """Human-readable dump: one record per parameter block,
    name<TAB>shape<TAB>space-separated values."""
    for name, arr in model.params.blocks():
        shape = "x".join(str(s) for s in arr.shape)
        values = " ".join(f"{x:.17g}" for x in arr.reshape(-1))
        stream.write(f"{name}\t{shape}\t{values}\n")
