import io
import math

import numpy as np
import pytest

from phrasecomp import corpus as C
from phrasecomp import model as M
from phrasecomp.errors import ModelIOError, UnknownTokenError

from conftest import build_pipeline


@pytest.fixture
def small_world():
    lines = ["s0\tv0\tcar"] * 5 + ["s1\tv0\troad", "s0\tv1\tcar", "s1\tv1\troad\tin\ttown"]
    corp, cands, feats = build_pipeline(lines, threshold=2)
    params = M.init_params(corp.lexicon, cands, dim=4, seed=9)
    return corp, cands, feats, params


class TestInit:
    def test_scorer_zero_gives_half_alpha(self, small_world):
        corp, cands, feats, params = small_world
        for v, o in cands.pairs:
            assert M.score_alpha(feats.phi(int(v), int(o)), params.scorer_weights) == 0.5

    def test_deterministic(self, small_world):
        corp, cands, feats, _ = small_world
        a = M.init_params(corp.lexicon, cands, dim=4, seed=3)
        b = M.init_params(corp.lexicon, cands, dim=4, seed=3)
        for (_, x), (_, y) in zip(a.blocks(), b.blocks()):
            assert np.array_equal(x, y)

    def test_candidate_count_does_not_shift_other_blocks(self, small_world):
        corp, cands, feats, _ = small_world
        empty = C.CandidateSet(
            pairs=np.zeros((0, 2), dtype=np.int64),
            keys=np.zeros(0, dtype=np.int64),
            n_nouns=len(corp.lexicon.nouns),
            threshold=10**9,
        )
        a = M.init_params(corp.lexicon, cands, dim=4, seed=5)
        b = M.init_params(corp.lexicon, empty, dim=4, seed=5)
        assert np.array_equal(a.nouns, b.nouns)
        assert np.array_equal(a.mats, b.mats)

    def test_variances(self):
        lines = [f"s{i}\tv0\to{i}" for i in range(50)]
        corp, cands, feats = build_pipeline(lines, threshold=0)
        dim = 10
        # pool draws from many seeds: >= 1e5 embedding components
        emb, mat = [], []
        for seed in range(100):
            p = M.init_params(corp.lexicon, cands, dim=dim, seed=seed)
            emb.append(p.nouns.reshape(-1))
            mat.append(p.mats.reshape(-1))
        emb = np.concatenate(emb)
        mat = np.concatenate(mat)
        assert emb.size >= 10**5
        assert np.var(emb) == pytest.approx(1.0 / dim, rel=0.05)
        assert np.var(mat) == pytest.approx(1.0 / dim**2, rel=0.05)

    def test_dim_validation(self, small_world):
        corp, cands, _, _ = small_world
        with pytest.raises(ValueError):
            M.init_params(corp.lexicon, cands, dim=0, seed=0)


class TestForwardOps:
    def test_compose_identity(self):
        v = np.array([1.0, -2.0, 3.0])
        assert np.array_equal(M.compose_vo(np.eye(3), v), v)

    def test_compose_zero(self):
        assert np.array_equal(M.compose_vo(np.zeros((2, 2)), np.ones(2)), np.zeros(2))

    def test_compose_hand_value(self):
        out = M.compose_vo(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([1.0, 1.0]))
        assert out.tolist() == [3.0, 7.0]

    def test_compose_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            M.compose_vo(np.zeros((2, 3)), np.zeros(3))

    def test_score_alpha_empty_phi(self):
        phi = C.Phi(idx=np.zeros(0, dtype=np.int64), val=np.zeros(0))
        assert M.score_alpha(phi, np.zeros(5)) == 0.5

    def test_score_alpha_ln3(self):
        phi = C.Phi(idx=np.array([2], dtype=np.int64), val=np.array([math.log(3.0)]))
        w = np.zeros(4)
        w[2] = 1.0
        assert M.score_alpha(phi, w) == pytest.approx(0.75, abs=1e-12)

    def test_score_alpha_monotone_in_logit(self):
        phi = C.Phi(idx=np.array([0], dtype=np.int64), val=np.array([1.0]))
        outs = [M.score_alpha(phi, np.array([z])) for z in np.linspace(-5, 5, 21)]
        assert all(b > a for a, b in zip(outs, outs[1:]))

    def test_blend_endpoints_and_midpoint(self):
        c, n = np.array([2.0, 0.0]), np.array([0.0, 2.0])
        assert np.array_equal(M.blend(1.0, c, n), c)
        assert np.array_equal(M.blend(0.0, c, n), n)
        assert M.blend(0.5, c, n).tolist() == [1.0, 1.0]

    def test_blend_validates(self):
        with pytest.raises(ValueError):
            M.blend(1.5, np.zeros(2), np.zeros(2))
        with pytest.raises(ValueError):
            M.blend(0.5, np.zeros(2), np.zeros(3))

    def test_blend_on_segment(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            c, n = rng.normal(size=4), rng.normal(size=4)
            alpha = float(rng.uniform())
            v = M.blend(alpha, c, n)
            np.testing.assert_allclose(v - n, alpha * (c - n), rtol=0, atol=1e-14)

    def test_svo_embedding(self):
        assert M.svo_embedding(np.ones(3), np.array([1.0, 2.0, 3.0])).tolist() == [1.0, 2.0, 3.0]
        assert M.svo_embedding(np.zeros(2), np.ones(2)).tolist() == [0.0, 0.0]
        assert M.svo_embedding(np.array([1.0, 2.0]), np.array([3.0, 4.0])).tolist() == [3.0, 8.0]

    def test_score_svo(self):
        assert M.score_svo(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
        e = np.array([1.0, 0.0])
        assert M.score_svo(e, e) == 1.0
        assert M.score_svo(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0

    def test_score_svo_bilinear(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=5), rng.normal(size=5)
        assert M.score_svo(3.0 * a, b) == pytest.approx(3.0 * M.score_svo(a, b), rel=1e-12)

    def test_score_svopn(self):
        svo, n = np.array([1.0, 0.0]), np.array([5.0, 7.0])
        assert M.score_svopn(svo, np.array([[0.0, 1.0], [1.0, 0.0]]), n) == 7.0
        assert M.score_svopn(svo, np.zeros((2, 2)), n) == 0.0

    def test_score_svopn_identity_matches_svo(self):
        rng = np.random.default_rng(2)
        svo, n = rng.normal(size=6), rng.normal(size=6)
        assert M.score_svopn(svo, np.eye(6), n) == pytest.approx(M.score_svo(svo, n), rel=1e-12)

    def test_sigmoid_complement(self):
        for x in np.linspace(-30, 30, 601):
            assert abs(M.sigmoid(x) + M.sigmoid(-x) - 1.0) <= 1e-15


class TestVoEmbedding:
    def test_candidate_blends(self, small_world):
        corp, cands, feats, params = small_world
        v, o = corp.lexicon.verbs.get("v0"), corp.lexicon.nouns.get("car")
        pv = M.vo_embedding(v, o, params, feats)
        assert pv.phrase_id >= 0
        np.testing.assert_allclose(pv.vec, pv.alpha * pv.comp + (1 - pv.alpha) * pv.noncomp)

    def test_non_candidate_is_pure_compose(self, small_world):
        corp, cands, feats, params = small_world
        v, o = corp.lexicon.verbs.get("v0"), corp.lexicon.nouns.get("road")
        pv = M.vo_embedding(v, o, params, feats)
        assert pv.phrase_id == -1 and pv.noncomp is None
        assert np.array_equal(pv.vec, params.mats[v] @ params.nouns[o])
        assert 0.0 < pv.alpha < 1.0  # still reported from partial features

    def test_equal_parts_blend_to_same(self, small_world):
        corp, cands, feats, params = small_world
        v, o = corp.lexicon.verbs.get("v0"), corp.lexicon.nouns.get("car")
        pid = feats.phrase_id(v, o)
        params.phrases[pid] = params.mats[v] @ params.nouns[o]
        pv = M.vo_embedding(v, o, params, feats)
        np.testing.assert_allclose(pv.vec, pv.comp, atol=1e-15)

    def test_unknown_ids_raise(self, small_world):
        _, _, feats, params = small_world
        with pytest.raises(UnknownTokenError):
            M.vo_embedding(99, 0, params, feats)

    def test_alpha_indicator_isolation(self, small_world):
        corp, cands, feats, params = small_world
        assert len(cands) >= 1
        v, o = (int(x) for x in cands.pairs[0])
        pid = feats.phrase_id(v, o)
        before = [M.score_alpha(feats.phi(int(a), int(b)), params.scorer_weights) for a, b in cands.pairs]
        params.scorer_weights[feats.phrase_offset + pid] += 2.0
        after = [M.score_alpha(feats.phi(int(a), int(b)), params.scorer_weights) for a, b in cands.pairs]
        assert after[0] > before[0]
        assert after[1:] == before[1:]


class TestSerialization:
    def _model(self, small_world):
        corp, cands, feats, params = small_world
        rng = np.random.default_rng(0)
        params.scorer_weights[:] = rng.normal(size=params.scorer_weights.shape)
        return M.Model(params=params, lexicon=corp.lexicon, candidates=cands, features=feats)

    def test_roundtrip_bitwise(self, small_world, tmp_path):
        model = self._model(small_world)
        path = tmp_path / "model.bin"
        M.save_model(model, path)
        loaded = M.load_model(path)
        for (name, a), (_, b) in zip(model.params.blocks(), loaded.params.blocks()):
            assert np.array_equal(a, b), name
        assert loaded.lexicon.nouns == model.lexicon.nouns
        assert loaded.lexicon.verbs == model.lexicon.verbs
        assert loaded.lexicon.preps == model.lexicon.preps
        assert np.array_equal(loaded.candidates.keys, model.candidates.keys)
        assert loaded.features.norm_freq == model.features.norm_freq
        assert loaded.features.norm_pmi == model.features.norm_pmi
        assert loaded.lexicon.counts.total == model.lexicon.counts.total
        assert loaded.params.dim == model.params.dim
        assert loaded.params.seed == model.params.seed

    def test_bad_magic(self, small_world, tmp_path):
        model = self._model(small_world)
        path = tmp_path / "model.bin"
        M.save_model(model, path)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ModelIOError, match="magic"):
            M.load_model(path)

    def test_bad_version(self, small_world, tmp_path):
        model = self._model(small_world)
        path = tmp_path / "model.bin"
        M.save_model(model, path)
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(ModelIOError, match="version"):
            M.load_model(path)

    def test_truncated(self, small_world, tmp_path):
        model = self._model(small_world)
        path = tmp_path / "model.bin"
        M.save_model(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(ModelIOError, match="truncated"):
            M.load_model(path)

    def test_corrupted_payload(self, small_world, tmp_path):
        model = self._model(small_world)
        path = tmp_path / "model.bin"
        M.save_model(model, path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(ModelIOError, match="checksum"):
            M.load_model(path)

    def test_text_export(self, small_world):
        model = self._model(small_world)
        out = io.StringIO()
        M.export_text(model, out)
        lines = out.getvalue().splitlines()
        names = [line.split("\t")[0] for line in lines]
        assert names == ["noun_embeddings", "predicate_matrices", "phrase_embeddings", "scorer_weights"]
        name, shape, values = lines[0].split("\t")
        expected = model.params.nouns.shape
        assert shape == f"{expected[0]}x{expected[1]}"
        assert len(values.split()) == model.params.nouns.size
