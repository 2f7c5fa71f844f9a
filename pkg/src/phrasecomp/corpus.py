"""Tuple corpus ingestion, vocabulary and count bookkeeping, and the sparse
compositionality feature table.

Input corpora are plain UTF-8 text, one predicate-argument tuple per line,
tab separated:

    subject<TAB>verb<TAB>object
    subject<TAB>verb<TAB>object<TAB>preposition<TAB>noun

Subjects, objects and prepositional nouns share one noun vocabulary; verbs
and prepositions are kept apart.  All co-occurrence counts (and therefore
candidate selection and feature normalization) come from the training split
only, so development and test tuples can never leak into the features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ._rng import STREAM_SPLIT_SVO, STREAM_SPLIT_SVOPN, seeded_rng
from .errors import ConfigError, CorpusFormatError

SPLIT_TRAIN = 0
SPLIT_DEV = 1
SPLIT_TEST = 2


class Interner:
    """Dense string<->id table; ids are assigned in first-seen order."""

    __slots__ = ("strings", "_ids")

    def __init__(self, strings=()):
        self.strings: list[str] = []
        self._ids: dict[str, int] = {}
        for s in strings:
            self.intern(s)

    def intern(self, token: str) -> int:
        i = self._ids.get(token)
        if i is None:
            i = len(self.strings)
            self._ids[token] = i
            self.strings.append(token)
        return i

    def get(self, token: str) -> int:
        """Id of *token*, or -1 when unknown."""
        return self._ids.get(token, -1)

    def decode(self, idx: int) -> str:
        return self.strings[idx]

    def __len__(self) -> int:
        return len(self.strings)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Interner) and self.strings == other.strings


@dataclass
class Counts:
    """Verb-object co-occurrence counts over the training split.

    ``count_v`` and ``count_o`` are marginals of the verb-object
    occurrences, so ``total == count_v.sum() == count_o.sum()``.  Keys
    encode a pair as ``verb_id * n_nouns + object_id``.
    """

    n_verbs: int
    n_nouns: int
    vo_keys: np.ndarray    # int64, sorted
    vo_counts: np.ndarray  # int64, aligned with vo_keys
    count_v: np.ndarray    # int64, (n_verbs,)
    count_o: np.ndarray    # int64, (n_nouns,)
    total: int

    def count_vo(self, verb_id: int, object_id: int) -> int:
        if verb_id < 0 or object_id < 0:
            return 0
        key = verb_id * self.n_nouns + object_id
        i = int(np.searchsorted(self.vo_keys, key))
        if i < len(self.vo_keys) and self.vo_keys[i] == key:
            return int(self.vo_counts[i])
        return 0


@dataclass
class Lexicon:
    nouns: Interner
    verbs: Interner
    preps: Interner
    counts: Counts | None = None


@dataclass
class TupleCorpus:
    """Id-encoded SVO / SVOPN tuples plus their split assignment."""

    lexicon: Lexicon
    svo: np.ndarray    # (n, 3) int64: subject, verb, object
    svopn: np.ndarray  # (m, 5) int64: subject, verb, object, preposition, noun
    svo_split: np.ndarray | None = None    # uint8 per row, SPLIT_* labels
    svopn_split: np.ndarray | None = None
    malformed: int = 0
    total_lines: int = 0

    def _select(self, rows, split, label):
        if split is None:
            # Unsplit corpora count as pure training data.
            return rows if label == SPLIT_TRAIN else rows[:0]
        return rows[split == label]

    def train_svo(self) -> np.ndarray:
        return self._select(self.svo, self.svo_split, SPLIT_TRAIN)

    def dev_svo(self) -> np.ndarray:
        return self._select(self.svo, self.svo_split, SPLIT_DEV)

    def test_svo(self) -> np.ndarray:
        return self._select(self.svo, self.svo_split, SPLIT_TEST)

    def train_svopn(self) -> np.ndarray:
        return self._select(self.svopn, self.svopn_split, SPLIT_TRAIN)

    def dev_svopn(self) -> np.ndarray:
        return self._select(self.svopn, self.svopn_split, SPLIT_DEV)

    def test_svopn(self) -> np.ndarray:
        return self._select(self.svopn, self.svopn_split, SPLIT_TEST)


def parse_tuple_file(source, max_malformed_fraction: float = 0.01) -> TupleCorpus:
    """Read a tuple file (path or open text stream) into an id-encoded corpus.

    Lines that do not have exactly 3 or 5 non-empty tab-separated fields are
    counted as malformed and skipped; the parse fails outright when more
    than ``max_malformed_fraction`` of the lines are malformed.
    """
    if hasattr(source, "read"):
        stream = source
        close = False
    else:
        stream = open(source, "r", encoding="utf-8")
        close = True

    nouns, verbs, preps = Interner(), Interner(), Interner()
    svo_rows: list[tuple[int, int, int]] = []
    svopn_rows: list[tuple[int, int, int, int, int]] = []
    malformed = 0
    total = 0
    first_bad: int | None = None
    try:
        for lineno, line in enumerate(stream, start=1):
            total += 1
            fields = line.rstrip("\r\n").split("\t")
            if len(fields) not in (3, 5) or any(f == "" for f in fields):
                malformed += 1
                if first_bad is None:
                    first_bad = lineno
                continue
            s = nouns.intern(fields[0])
            v = verbs.intern(fields[1])
            o = nouns.intern(fields[2])
            if len(fields) == 3:
                svo_rows.append((s, v, o))
            else:
                p = preps.intern(fields[3])
                n = nouns.intern(fields[4])
                svopn_rows.append((s, v, o, p, n))
    finally:
        if close:
            stream.close()

    if total > 0 and malformed / total > max_malformed_fraction:
        raise CorpusFormatError(
            f"{malformed} of {total} lines malformed "
            f"(> {max_malformed_fraction:.0%} allowed); first bad line: {first_bad}"
        )

    svo = np.asarray(svo_rows, dtype=np.int64).reshape(-1, 3)
    svopn = np.asarray(svopn_rows, dtype=np.int64).reshape(-1, 5)
    return TupleCorpus(
        lexicon=Lexicon(nouns=nouns, verbs=verbs, preps=preps),
        svo=svo,
        svopn=svopn,
        malformed=malformed,
        total_lines=total,
    )


def write_tuple_file(corpus: TupleCorpus, path) -> None:
    """Serialize a corpus back to tuple-file text (SVO lines, then SVOPN)."""
    lex = corpus.lexicon
    with open(path, "w", encoding="utf-8") as out:
        for s, v, o in corpus.svo:
            out.write(f"{lex.nouns.decode(s)}\t{lex.verbs.decode(v)}\t{lex.nouns.decode(o)}\n")
        for s, v, o, p, n in corpus.svopn:
            out.write(
                f"{lex.nouns.decode(s)}\t{lex.verbs.decode(v)}\t{lex.nouns.decode(o)}"
                f"\t{lex.preps.decode(p)}\t{lex.nouns.decode(n)}\n"
            )


def _apportion(n: int, ratios) -> list[int]:
    """Integer class sizes summing to n, each within 1 of n*ratio."""
    exact = [n * r for r in ratios]
    sizes = [int(math.floor(e)) for e in exact]
    leftover = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return sizes


def _assign_split(n: int, ratios, rng: np.random.Generator) -> np.ndarray:
    sizes = _apportion(n, ratios)
    perm = rng.permutation(n)
    out = np.empty(n, dtype=np.uint8)
    start = 0
    for label, size in enumerate(sizes):
        out[perm[start : start + size]] = label
        start += size
    return out


def split_corpus(corpus: TupleCorpus, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> TupleCorpus:
    """Assign each tuple to train/dev/test; SVO and SVOPN are split
    independently, deterministically for a given seed."""
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError(f"split ratios must be three non-negative numbers, got {ratios!r}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios!r} (sum {sum(ratios)!r})")
    svo_split = _assign_split(len(corpus.svo), ratios, seeded_rng(seed, STREAM_SPLIT_SVO))
    svopn_split = _assign_split(len(corpus.svopn), ratios, seeded_rng(seed, STREAM_SPLIT_SVOPN))
    return replace(corpus, svo_split=svo_split, svopn_split=svopn_split)


def build_counts(corpus: TupleCorpus) -> Counts:
    """Count VO occurrences over the training split (SVO and SVOPN tuples
    both contribute) and attach the result to the corpus lexicon."""
    lex = corpus.lexicon
    n_verbs, n_nouns = len(lex.verbs), len(lex.nouns)
    vo = np.concatenate([corpus.train_svo()[:, 1:3], corpus.train_svopn()[:, 1:3]], axis=0)
    if len(vo):
        keys, cnts = np.unique(vo[:, 0] * n_nouns + vo[:, 1], return_counts=True)
        keys = keys.astype(np.int64)
        cnts = cnts.astype(np.int64)
    else:
        keys = np.zeros(0, dtype=np.int64)
        cnts = np.zeros(0, dtype=np.int64)
    count_v = np.zeros(n_verbs, dtype=np.int64)
    count_o = np.zeros(n_nouns, dtype=np.int64)
    np.add.at(count_v, keys // n_nouns, cnts)
    np.add.at(count_o, keys % n_nouns, cnts)
    counts = Counts(
        n_verbs=n_verbs,
        n_nouns=n_nouns,
        vo_keys=keys,
        vo_counts=cnts,
        count_v=count_v,
        count_o=count_o,
        total=int(cnts.sum()),
    )
    lex.counts = counts
    return counts


@dataclass
class CandidateSet:
    """VO pairs frequent enough to get their own non-compositional
    embedding.  Phrase ids are dense and follow sorted key order."""

    pairs: np.ndarray  # (n, 2) int64 (verb_id, object_id), sorted by key
    keys: np.ndarray   # int64, sorted, verb_id * n_nouns + object_id
    n_nouns: int
    threshold: int

    def __len__(self) -> int:
        return len(self.keys)

    def phrase_id(self, verb_id: int, object_id: int) -> int:
        """Dense candidate id, or -1 when the pair is not a candidate."""
        if verb_id < 0 or object_id < 0:
            return -1
        key = verb_id * self.n_nouns + object_id
        i = int(np.searchsorted(self.keys, key))
        if i < len(self.keys) and self.keys[i] == key:
            return i
        return -1


def select_candidates(corpus: TupleCorpus, threshold: int) -> CandidateSet:
    """All VO pairs observed strictly more than ``threshold`` times in the
    training split."""
    if threshold < 0:
        raise ConfigError(f"candidate threshold must be >= 0, got {threshold}")
    counts = corpus.lexicon.counts
    if counts is None:
        counts = build_counts(corpus)
    mask = counts.vo_counts > threshold
    keys = counts.vo_keys[mask]
    pairs = np.stack([keys // counts.n_nouns, keys % counts.n_nouns], axis=1) if len(keys) else np.zeros((0, 2), dtype=np.int64)
    return CandidateSet(pairs=pairs, keys=keys, n_nouns=counts.n_nouns, threshold=threshold)


def freq_feature(count_vo: int) -> float:
    """log count(VO).  Only defined for observed pairs."""
    if count_vo < 1:
        raise ValueError(f"frequency feature needs count >= 1, got {count_vo}")
    return math.log(count_vo)


def pmi_feature(count_vo: int, count_v: int, count_o: int, count_star: int) -> float:
    """Pointwise mutual information of a VO pair from raw counts."""
    if min(count_vo, count_v, count_o, count_star) < 1:
        raise ValueError("PMI feature needs all counts >= 1")
    return math.log(count_vo * count_star / (count_v * count_o))


@dataclass
class Phi:
    """Sparse feature vector as aligned (index, value) arrays."""

    idx: np.ndarray  # int64
    val: np.ndarray  # float64


class PhraseFeatureTable:
    """Feature layout for the compositionality scorer.

    The vector for a phrase is indicator features for its verb, its object
    and (candidates only) the phrase itself, plus normalized log-frequency
    and PMI.  The four blocks partition [0, size):

        [0, n_verbs)                       verb indicators
        [n_verbs, n_verbs + n_nouns)       object indicators
        [.., .. + n_candidates)            phrase indicators
        size-2, size-1                     frequency, PMI

    Normalization divides by the maximum absolute value over the candidate
    set, frozen at build time, so phrases outside the candidate set (or
    seen only at query time) are scored on the same scale with whatever
    partial features fire.
    """

    def __init__(self, lexicon: Lexicon, candidates: CandidateSet,
                 norm_freq: float | None = None, norm_pmi: float | None = None):
        counts = lexicon.counts
        if counts is None:
            raise ConfigError("feature table needs counts; run build_counts first")
        self.counts = counts
        self.candidates = candidates
        self.n_verbs = len(lexicon.verbs)
        self.n_nouns = len(lexicon.nouns)
        self.object_offset = self.n_verbs
        self.phrase_offset = self.n_verbs + self.n_nouns
        self.size = self.n_verbs + self.n_nouns + len(candidates) + 2
        self.freq_index = self.size - 2
        self.pmi_index = self.size - 1

        raw_freq = np.zeros(len(candidates))
        raw_pmi = np.zeros(len(candidates))
        for i, (v, o) in enumerate(candidates.pairs):
            cnt = counts.count_vo(int(v), int(o))
            raw_freq[i] = freq_feature(cnt)
            raw_pmi[i] = pmi_feature(cnt, int(counts.count_v[v]), int(counts.count_o[o]), counts.total)

        if norm_freq is None:
            norm_freq = float(np.max(np.abs(raw_freq))) if len(candidates) else 0.0
        if norm_pmi is None:
            norm_pmi = float(np.max(np.abs(raw_pmi))) if len(candidates) else 0.0
        # a degenerate all-zero feature column normalizes by 1
        self.norm_freq = norm_freq if norm_freq > 0.0 else 1.0
        self.norm_pmi = norm_pmi if norm_pmi > 0.0 else 1.0

        # Cached candidate rows, padded to 5 entries with (index 0, value 0).
        self.cand_feat_idx = np.zeros((len(candidates), 5), dtype=np.int64)
        self.cand_feat_val = np.zeros((len(candidates), 5))
        self.cand_feat_len = np.zeros(len(candidates), dtype=np.int64)
        for i, (v, o) in enumerate(candidates.pairs):
            phi = self.phi(int(v), int(o))
            self.cand_feat_idx[i, : len(phi.idx)] = phi.idx
            self.cand_feat_val[i, : len(phi.idx)] = phi.val
            self.cand_feat_len[i] = len(phi.idx)

    def phrase_id(self, verb_id: int, object_id: int) -> int:
        return self.candidates.phrase_id(verb_id, object_id)

    def phi(self, verb_id: int, object_id: int) -> Phi:
        """Feature vector for any VO pair; unknown ids (-1) and unseen pairs
        simply fire fewer features."""
        idx: list[int] = []
        val: list[float] = []
        if 0 <= verb_id < self.n_verbs:
            idx.append(verb_id)
            val.append(1.0)
        if 0 <= object_id < self.n_nouns:
            idx.append(self.object_offset + object_id)
            val.append(1.0)
        pid = self.candidates.phrase_id(verb_id, object_id)
        if pid >= 0:
            idx.append(self.phrase_offset + pid)
            val.append(1.0)
        cnt = self.counts.count_vo(verb_id, object_id)
        if cnt >= 1:
            f = freq_feature(cnt) / self.norm_freq
            if f != 0.0:
                idx.append(self.freq_index)
                val.append(f)
            p = pmi_feature(
                cnt,
                int(self.counts.count_v[verb_id]),
                int(self.counts.count_o[object_id]),
                self.counts.total,
            ) / self.norm_pmi
            if p != 0.0:
                idx.append(self.pmi_index)
                val.append(p)
        return Phi(idx=np.asarray(idx, dtype=np.int64), val=np.asarray(val, dtype=np.float64))


def build_feature_table(lexicon: Lexicon, candidates: CandidateSet) -> PhraseFeatureTable:
    return PhraseFeatureTable(lexicon, candidates)


# --- rating dataset readers -------------------------------------------------

@dataclass
class RatingDataset:
    """Human compositionality ratings: one (verb, object) item with all of
    its judgments."""

    items: list[tuple[str, str, list[float]]]
    tag: str = ""
    scale: tuple[float, float] = (1.0, 6.0)


@dataclass
class DisambigDataset:
    """Verb disambiguation judgments grouped by (verb, subject, object,
    landmark verb)."""

    groups: list[tuple[str, str, str, str, list[float]]]
    tag: str = ""


def _data_lines(path):
    with open(path, "r", encoding="utf-8") as stream:
        for lineno, line in enumerate(stream, start=1):
            stripped = line.rstrip("\r\n")
            if not stripped or stripped.startswith("#"):
                continue
            yield lineno, stripped.split("\t")


def read_rating_file(path, tag: str = "", scale=(1.0, 6.0)) -> RatingDataset:
    """3-column file: verb<TAB>object<TAB>rating, one judgment per line."""
    grouped: dict[tuple[str, str], list[float]] = {}
    order: list[tuple[str, str]] = []
    for lineno, fields in _data_lines(path):
        if len(fields) != 3:
            raise CorpusFormatError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
        verb, obj, rating_s = fields
        try:
            rating = float(rating_s)
        except ValueError:
            raise CorpusFormatError(f"{path}:{lineno}: rating {rating_s!r} is not a number") from None
        if not scale[0] <= rating <= scale[1]:
            raise CorpusFormatError(f"{path}:{lineno}: rating {rating} outside scale {scale}")
        key = (verb, obj)
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append(rating)
    return RatingDataset(items=[(v, o, grouped[(v, o)]) for v, o in order], tag=tag, scale=scale)


def read_disambig_file(path, tag: str = "") -> DisambigDataset:
    """6-column file: id<TAB>verb<TAB>subject<TAB>object<TAB>landmark<TAB>rating."""
    grouped: dict[tuple[str, str, str, str], list[float]] = {}
    order: list[tuple[str, str, str, str]] = []
    for lineno, fields in _data_lines(path):
        if len(fields) != 6:
            raise CorpusFormatError(f"{path}:{lineno}: expected 6 tab-separated fields, got {len(fields)}")
        _, verb, subj, obj, landmark, rating_s = fields
        try:
            rating = float(rating_s)
        except ValueError:
            raise CorpusFormatError(f"{path}:{lineno}: rating {rating_s!r} is not a number") from None
        key = (verb, subj, obj, landmark)
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append(rating)
    return DisambigDataset(groups=[(v, s, o, l, grouped[(v, s, o, l)]) for v, s, o, l in order], tag=tag)
