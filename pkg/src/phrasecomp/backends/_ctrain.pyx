# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels.

Same contract and row layouts as ``numpy_backend``; see that module for
the reference semantics.  Everything here is scalar C loops, so a batch
costs no interpreter time beyond the call itself.
"""

from libc.math cimport exp, log, log1p

import numpy as np

NAME = "c"
COMPILED = True


cdef inline double _sigmoid(double x) noexcept:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _log_sigmoid(double x) noexcept:
    if x >= 0.0:
        return -log1p(exp(-x))
    return x - log1p(exp(x))


cdef inline Py_ssize_t _find_key(const long long[::1] keys, long long key) noexcept:
    """Index of key in a sorted array, or -1."""
    cdef Py_ssize_t lo = 0, hi = keys.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < keys.shape[0] and keys[lo] == key:
        return lo
    return -1


cdef class _Ctx:
    # parameters
    cdef double[:, ::1] nouns
    cdef double[:, :, ::1] mats
    cdef double[:, ::1] phrases
    cdef double[::1] w
    # gradient buffers + touched flags
    cdef double[:, ::1] g_nouns
    cdef double[:, :, ::1] g_mats
    cdef double[:, ::1] g_phrases
    cdef double[::1] g_w
    cdef unsigned char[::1] t_nouns
    cdef unsigned char[::1] t_mats
    cdef unsigned char[::1] t_phrases
    # feature/count tables
    cdef const long long[::1] cand_keys
    cdef const long long[::1] vo_keys
    cdef const long long[::1] vo_counts
    cdef const long long[::1] count_v
    cdef const long long[::1] count_o
    cdef long long n_verbs, n_nouns, total
    cdef double norm_freq, norm_pmi
    cdef Py_ssize_t dim, n_features
    cdef double fix_alpha          # < 0 means adaptive
    cdef bint with_grad
    # per-phrase forward state (single-threaded use only)
    cdef long long cur_cand
    cdef double cur_alpha, cur_freq, cur_pmi
    # scratch vectors
    cdef double[::1] c_vec, vo_vec, dc, q_vec, svo_vec, dp


def _make_ctx(params, features, buf, fix_alpha, bint with_grad):
    cdef _Ctx ctx = _Ctx()
    ctx.nouns = params.nouns
    ctx.mats = params.mats
    ctx.phrases = params.phrases
    ctx.w = params.scorer_weights
    if with_grad:
        ctx.g_nouns = buf.nouns
        ctx.g_mats = buf.mats
        ctx.g_phrases = buf.phrases
        ctx.g_w = buf.w
        ctx.t_nouns = buf.t_nouns
        ctx.t_mats = buf.t_mats
        ctx.t_phrases = buf.t_phrases
    ctx.cand_keys = features.candidates.keys
    counts = features.counts
    ctx.vo_keys = counts.vo_keys
    ctx.vo_counts = counts.vo_counts
    ctx.count_v = counts.count_v
    ctx.count_o = counts.count_o
    ctx.total = counts.total
    ctx.n_verbs = features.n_verbs
    ctx.n_nouns = features.n_nouns
    ctx.norm_freq = features.norm_freq
    ctx.norm_pmi = features.norm_pmi
    ctx.dim = params.dim
    ctx.n_features = features.size
    ctx.fix_alpha = -1.0 if fix_alpha is None else float(fix_alpha)
    ctx.with_grad = with_grad
    d = params.dim
    ctx.c_vec = np.empty(d)
    ctx.vo_vec = np.empty(d)
    ctx.dc = np.empty(d)
    ctx.q_vec = np.empty(d)
    ctx.svo_vec = np.empty(d)
    ctx.dp = np.empty(d)
    return ctx


cdef double _alpha_logit(_Ctx ctx, long long v, long long o, long long cand) noexcept:
    """w . phi for a candidate phrase; caches the freq/PMI feature values
    for the backward pass."""
    cdef double z = ctx.w[v] + ctx.w[ctx.n_verbs + o] + ctx.w[ctx.n_verbs + ctx.n_nouns + cand]
    cdef Py_ssize_t pos = _find_key(ctx.vo_keys, v * ctx.n_nouns + o)
    cdef long long cnt
    cdef double f, p
    ctx.cur_freq = 0.0
    ctx.cur_pmi = 0.0
    if pos >= 0:
        cnt = ctx.vo_counts[pos]
        if cnt >= 1:
            f = log(<double> cnt) / ctx.norm_freq
            p = log((<double> cnt * <double> ctx.total) /
                    (<double> ctx.count_v[v] * <double> ctx.count_o[o])) / ctx.norm_pmi
            ctx.cur_freq = f
            ctx.cur_pmi = p
            if f != 0.0:
                z += ctx.w[ctx.n_features - 2] * f
            if p != 0.0:
                z += ctx.w[ctx.n_features - 1] * p
    return z


cdef void _vo_forward(_Ctx ctx, long long v, long long o) noexcept:
    cdef Py_ssize_t i, j, d = ctx.dim
    cdef double acc, a
    cdef long long cand
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += ctx.mats[v, i, j] * ctx.nouns[o, j]
        ctx.c_vec[i] = acc
    cand = _find_key(ctx.cand_keys, v * ctx.n_nouns + o)
    ctx.cur_cand = cand
    if cand >= 0 and ctx.fix_alpha != 1.0:
        if ctx.fix_alpha >= 0.0:
            a = ctx.fix_alpha
        else:
            a = _sigmoid(_alpha_logit(ctx, v, o, cand))
        ctx.cur_alpha = a
        for i in range(d):
            ctx.vo_vec[i] = a * ctx.c_vec[i] + (1.0 - a) * ctx.phrases[cand, i]
    else:
        ctx.cur_alpha = 1.0
        for i in range(d):
            ctx.vo_vec[i] = ctx.c_vec[i]


cdef void _vo_backward(_Ctx ctx, long long v, long long o) noexcept:
    """Propagate ctx.dp (gradient w.r.t. the phrase embedding) into the
    matrix, object, phrase and scorer blocks."""
    cdef Py_ssize_t i, j, d = ctx.dim
    cdef long long cand = ctx.cur_cand
    cdef double a = ctx.cur_alpha
    cdef double dalpha, acc, factor
    if cand >= 0 and ctx.fix_alpha != 1.0:
        for i in range(d):
            ctx.g_phrases[cand, i] += (1.0 - a) * ctx.dp[i]
        ctx.t_phrases[cand] = 1
        if ctx.fix_alpha < 0.0:
            acc = 0.0
            for i in range(d):
                acc += ctx.dp[i] * (ctx.c_vec[i] - ctx.phrases[cand, i])
            dalpha = a * (1.0 - a) * acc
            ctx.g_w[v] += dalpha
            ctx.g_w[ctx.n_verbs + o] += dalpha
            ctx.g_w[ctx.n_verbs + ctx.n_nouns + cand] += dalpha
            if ctx.cur_freq != 0.0:
                ctx.g_w[ctx.n_features - 2] += dalpha * ctx.cur_freq
            if ctx.cur_pmi != 0.0:
                ctx.g_w[ctx.n_features - 1] += dalpha * ctx.cur_pmi
        factor = a
    else:
        factor = 1.0
    for i in range(d):
        ctx.dc[i] = factor * ctx.dp[i]
    for i in range(d):
        for j in range(d):
            ctx.g_mats[v, i, j] += ctx.dc[i] * ctx.nouns[o, j]
    ctx.t_mats[v] = 1
    for j in range(d):
        acc = 0.0
        for i in range(d):
            acc += ctx.mats[v, i, j] * ctx.dc[i]
        ctx.g_nouns[o, j] += acc
    ctx.t_nouns[o] = 1


cdef (double, double) _svo_pass(_Ctx ctx, long long s, long long v, long long o, bint observed) noexcept:
    cdef Py_ssize_t i, d = ctx.dim
    cdef double score = 0.0, cost, g
    _vo_forward(ctx, v, o)
    for i in range(d):
        score += ctx.nouns[s, i] * ctx.vo_vec[i]
    cost = -_log_sigmoid(score) if observed else -_log_sigmoid(-score)
    if ctx.with_grad:
        g = _sigmoid(score) - 1.0 if observed else _sigmoid(score)
        for i in range(d):
            ctx.g_nouns[s, i] += g * ctx.vo_vec[i]
        ctx.t_nouns[s] = 1
        for i in range(d):
            ctx.dp[i] = g * ctx.nouns[s, i]
        _vo_backward(ctx, v, o)
    return score, cost


cdef (double, double) _svopn_pass(_Ctx ctx, long long s, long long v, long long o,
                                  long long p, long long n, bint observed) noexcept:
    cdef Py_ssize_t i, j, d = ctx.dim
    cdef long long pm = ctx.n_verbs + p
    cdef double score = 0.0, cost, g, acc, dsvo_i
    _vo_forward(ctx, v, o)
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += ctx.mats[pm, i, j] * ctx.nouns[n, j]
        ctx.q_vec[i] = acc
        ctx.svo_vec[i] = ctx.nouns[s, i] * ctx.vo_vec[i]
        score += ctx.svo_vec[i] * acc
    cost = -_log_sigmoid(score) if observed else -_log_sigmoid(-score)
    if ctx.with_grad:
        g = _sigmoid(score) - 1.0 if observed else _sigmoid(score)
        for i in range(d):
            for j in range(d):
                ctx.g_mats[pm, i, j] += g * ctx.svo_vec[i] * ctx.nouns[n, j]
        ctx.t_mats[pm] = 1
        for j in range(d):
            acc = 0.0
            for i in range(d):
                acc += ctx.mats[pm, i, j] * ctx.svo_vec[i]
            ctx.g_nouns[n, j] += g * acc
        ctx.t_nouns[n] = 1
        for i in range(d):
            dsvo_i = g * ctx.q_vec[i]
            ctx.g_nouns[s, i] += dsvo_i * ctx.vo_vec[i]
            ctx.dp[i] = dsvo_i * ctx.nouns[s, i]
        ctx.t_nouns[s] = 1
        _vo_backward(ctx, v, o)
    return score, cost


def run_batch(params, features, buf, svo_rows, svopn_rows, fix_alpha=None):
    """Forward/backward over one mini-batch; returns the summed cost."""
    cdef _Ctx ctx = _make_ctx(params, features, buf, fix_alpha, True)
    cdef long long[:, ::1] A
    cdef Py_ssize_t r
    cdef double total = 0.0
    cdef long long s, v, o, p, n
    if len(svo_rows):
        A = svo_rows
        for r in range(A.shape[0]):
            s = A[r, 0]; v = A[r, 1]; o = A[r, 2]
            total += _svo_pass(ctx, s, v, o, True)[1]
            total += _svo_pass(ctx, s, A[r, 3], o, False)[1]
            total += _svo_pass(ctx, A[r, 4], v, o, False)[1]
            total += _svo_pass(ctx, s, v, A[r, 5], False)[1]
    if len(svopn_rows):
        A = svopn_rows
        for r in range(A.shape[0]):
            s = A[r, 0]; v = A[r, 1]; o = A[r, 2]; p = A[r, 3]; n = A[r, 4]
            total += _svopn_pass(ctx, s, v, o, p, n, True)[1]
            total += _svopn_pass(ctx, s, v, o, A[r, 5], n, False)[1]
            total += _svopn_pass(ctx, A[r, 6], A[r, 7], A[r, 8], p, n, False)[1]
            total += _svopn_pass(ctx, s, v, o, p, A[r, 9], False)[1]
    return total


def score_rows(params, features, svo_rows, svopn_rows, fix_alpha=None):
    """Forward-only scores, (len, 4) per tuple kind: observed then the
    three corruptions."""
    cdef _Ctx ctx = _make_ctx(params, features, None, fix_alpha, False)
    svo_scores = np.zeros((len(svo_rows), 4))
    svopn_scores = np.zeros((len(svopn_rows), 4))
    cdef double[:, ::1] out
    cdef long long[:, ::1] A
    cdef Py_ssize_t r
    cdef long long s, v, o, p, n
    if len(svo_rows):
        A = svo_rows
        out = svo_scores
        for r in range(A.shape[0]):
            s = A[r, 0]; v = A[r, 1]; o = A[r, 2]
            out[r, 0] = _svo_pass(ctx, s, v, o, True)[0]
            out[r, 1] = _svo_pass(ctx, s, A[r, 3], o, False)[0]
            out[r, 2] = _svo_pass(ctx, A[r, 4], v, o, False)[0]
            out[r, 3] = _svo_pass(ctx, s, v, A[r, 5], False)[0]
    if len(svopn_rows):
        A = svopn_rows
        out = svopn_scores
        for r in range(A.shape[0]):
            s = A[r, 0]; v = A[r, 1]; o = A[r, 2]; p = A[r, 3]; n = A[r, 4]
            out[r, 0] = _svopn_pass(ctx, s, v, o, p, n, True)[0]
            out[r, 1] = _svopn_pass(ctx, s, v, o, A[r, 5], n, False)[0]
            out[r, 2] = _svopn_pass(ctx, A[r, 6], A[r, 7], A[r, 8], p, n, False)[0]
            out[r, 3] = _svopn_pass(ctx, s, v, o, p, A[r, 9], False)[0]
    return svo_scores, svopn_scores
