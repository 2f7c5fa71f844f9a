"""Pure-numpy training kernels.

This is the reference implementation of the per-tuple forward/backward
pass; the compiled backend in ``_ctrain.pyx`` mirrors it operation for
operation.  Gradients are accumulated into a caller-owned buffer whose
touched-row flags make the sparse AdaGrad update cheap.

Row layouts (int64):

    svo row    s, v, o, v_neg, s_neg, o_neg
    svopn row  s, v, o, p, n, p_neg, s2, v2, o2, n_neg

Each row scores four tuples: the observed one plus the three corruptions,
in that order (predicate slot, first argument, second argument).
"""

from __future__ import annotations

import numpy as np

from ..model import log_sigmoid, sigmoid

NAME = "numpy"
COMPILED = False


class _VoCache:
    """Forward-pass values for one VO phrase, kept for the backward pass."""

    __slots__ = ("comp", "vec", "pid", "alpha", "phi_idx", "phi_val")

    def __init__(self, comp, vec, pid, alpha, phi_idx, phi_val):
        self.comp = comp
        self.vec = vec
        self.pid = pid
        self.alpha = alpha
        self.phi_idx = phi_idx
        self.phi_val = phi_val


def _vo_forward(params, features, v, o, fix_alpha):
    comp = params.mats[v] @ params.nouns[o]
    pid = features.phrase_id(v, o)
    if pid < 0 or fix_alpha == 1.0:
        # pure compositional path (non-candidate, or the alpha=1 baseline)
        return _VoCache(comp, comp, pid, 1.0, None, None)
    if fix_alpha is not None:
        return _VoCache(comp, fix_alpha * comp + (1.0 - fix_alpha) * params.phrases[pid],
                        pid, fix_alpha, None, None)
    length = features.cand_feat_len[pid]
    phi_idx = features.cand_feat_idx[pid, :length]
    phi_val = features.cand_feat_val[pid, :length]
    alpha = sigmoid(float(np.dot(params.scorer_weights[phi_idx], phi_val)))
    vec = alpha * comp + (1.0 - alpha) * params.phrases[pid]
    return _VoCache(comp, vec, pid, alpha, phi_idx, phi_val)


def _vo_backward(params, features, buf, cache, v, o, dp):
    if cache.pid >= 0 and cache.alpha != 1.0:
        alpha = cache.alpha
        buf.phrases[cache.pid] += (1.0 - alpha) * dp
        buf.t_phrases[cache.pid] = 1
        if cache.phi_idx is not None:
            dalpha = alpha * (1.0 - alpha) * float(np.dot(dp, cache.comp - params.phrases[cache.pid]))
            buf.w[cache.phi_idx] += dalpha * cache.phi_val
        dc = alpha * dp
    else:
        dc = dp
    buf.mats[v] += np.outer(dc, params.nouns[o])
    buf.t_mats[v] = 1
    buf.nouns[o] += params.mats[v].T @ dc
    buf.t_nouns[o] = 1


def _svo_pass(params, features, buf, s, v, o, observed, fix_alpha):
    cache = _vo_forward(params, features, v, o, fix_alpha)
    score = float(np.dot(params.nouns[s], cache.vec))
    cost = -log_sigmoid(score) if observed else -log_sigmoid(-score)
    if buf is not None:
        g = sigmoid(score) - 1.0 if observed else sigmoid(score)
        buf.nouns[s] += g * cache.vec
        buf.t_nouns[s] = 1
        _vo_backward(params, features, buf, cache, v, o, g * params.nouns[s])
    return score, cost


def _svopn_pass(params, features, buf, s, v, o, p, n, observed, fix_alpha):
    cache = _vo_forward(params, features, v, o, fix_alpha)
    pm = params.n_verbs + p
    q = params.mats[pm] @ params.nouns[n]
    vsvo = params.nouns[s] * cache.vec
    score = float(np.dot(vsvo, q))
    cost = -log_sigmoid(score) if observed else -log_sigmoid(-score)
    if buf is not None:
        g = sigmoid(score) - 1.0 if observed else sigmoid(score)
        buf.mats[pm] += g * np.outer(vsvo, params.nouns[n])
        buf.t_mats[pm] = 1
        buf.nouns[n] += g * (params.mats[pm].T @ vsvo)
        buf.t_nouns[n] = 1
        dsvo = g * q
        buf.nouns[s] += dsvo * cache.vec
        buf.t_nouns[s] = 1
        _vo_backward(params, features, buf, cache, v, o, dsvo * params.nouns[s])
    return score, cost


def single_pass(params, features, buf, ids, observed, fix_alpha=None):
    """Forward (and backward, when buf is given) for one scored tuple.
    ``ids`` is (s, v, o) or (s, v, o, p, n).  Returns this tuple's cost
    share: -log sigmoid(score) for observed, -log sigmoid(-score) otherwise.
    """
    if len(ids) == 3:
        return _svo_pass(params, features, buf, ids[0], ids[1], ids[2], observed, fix_alpha)[1]
    if len(ids) == 5:
        return _svopn_pass(params, features, buf, ids[0], ids[1], ids[2], ids[3], ids[4], observed, fix_alpha)[1]
    raise ValueError(f"expected a 3- or 5-id tuple, got {len(ids)} ids")


def run_batch(params, features, buf, svo_rows, svopn_rows, fix_alpha=None):
    """Forward/backward over one mini-batch; returns the summed cost."""
    total = 0.0
    for row in svo_rows:
        s, v, o, vn, sn, on = (int(x) for x in row)
        total += _svo_pass(params, features, buf, s, v, o, True, fix_alpha)[1]
        total += _svo_pass(params, features, buf, s, vn, o, False, fix_alpha)[1]
        total += _svo_pass(params, features, buf, sn, v, o, False, fix_alpha)[1]
        total += _svo_pass(params, features, buf, s, v, on, False, fix_alpha)[1]
    for row in svopn_rows:
        s, v, o, p, n, pn, s2, v2, o2, nn = (int(x) for x in row)
        total += _svopn_pass(params, features, buf, s, v, o, p, n, True, fix_alpha)[1]
        total += _svopn_pass(params, features, buf, s, v, o, pn, n, False, fix_alpha)[1]
        total += _svopn_pass(params, features, buf, s2, v2, o2, p, n, False, fix_alpha)[1]
        total += _svopn_pass(params, features, buf, s, v, o, p, nn, False, fix_alpha)[1]
    return total


def score_rows(params, features, svo_rows, svopn_rows, fix_alpha=None):
    """Forward-only scores, (len, 4) per tuple kind: observed then the
    three corruptions."""
    svo_scores = np.zeros((len(svo_rows), 4))
    for i, row in enumerate(svo_rows):
        s, v, o, vn, sn, on = (int(x) for x in row)
        svo_scores[i, 0] = _svo_pass(params, features, None, s, v, o, True, fix_alpha)[0]
        svo_scores[i, 1] = _svo_pass(params, features, None, s, vn, o, False, fix_alpha)[0]
        svo_scores[i, 2] = _svo_pass(params, features, None, sn, v, o, False, fix_alpha)[0]
        svo_scores[i, 3] = _svo_pass(params, features, None, s, v, on, False, fix_alpha)[0]
    svopn_scores = np.zeros((len(svopn_rows), 4))
    for i, row in enumerate(svopn_rows):
        s, v, o, p, n, pn, s2, v2, o2, nn = (int(x) for x in row)
        svopn_scores[i, 0] = _svopn_pass(params, features, None, s, v, o, p, n, True, fix_alpha)[0]
        svopn_scores[i, 1] = _svopn_pass(params, features, None, s, v, o, pn, n, False, fix_alpha)[0]
        svopn_scores[i, 2] = _svopn_pass(params, features, None, s2, v2, o2, p, n, False, fix_alpha)[0]
        svopn_scores[i, 3] = _svopn_pass(params, features, None, s, v, o, p, nn, False, fix_alpha)[0]
    return svo_scores, svopn_scores
