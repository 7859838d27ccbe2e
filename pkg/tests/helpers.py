"""Independent reference implementations used as test oracles.

Nothing here calls into the library's forward/backward machinery: matmul is a
triple loop, softmax goes through mpmath at 50 digits, the transformer forward
is a standalone numpy transcription, and the metric/fusion oracles are direct
definitional computations.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np


def naive_matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def highprec_softmax_row(row, dps: int = 50):
    """Row softmax evaluated at 50 decimal digits, rounded back to float64."""
    with mpmath.workdps(dps):
        exps = [mpmath.exp(mpmath.mpf(float(v))) for v in row]
        total = mpmath.fsum(exps)
        return np.array([float(e / total) for e in exps])


def reference_rms_norm(x, weight, eps):
    x = np.asarray(x, dtype=np.float64)
    ms = np.mean(x * x, axis=-1, keepdims=True)
    return x / np.sqrt(ms + eps) * np.asarray(weight)


def reference_transformer_forward(model, token_ids=None, embedded=None):
    """Plain-numpy transcription of the causal transformer forward pass."""
    cfg = model.config
    p = {k: t.data for k, t in model.params.items()}
    if embedded is None:
        ids = list(token_ids)
        x = p["tok_emb"][ids] + p["pos_emb"][: len(ids)]
    else:
        x = np.array(embedded, dtype=np.float64)
    t = x.shape[0]
    mask = np.triu(np.full((t, t), -1e9), k=1)
    head_dim = cfg.d_model // cfg.n_heads
    for i in range(cfg.n_layers):
        a = reference_rms_norm(x, p[f"layers.{i}.attn_norm.weight"], cfg.norm_eps)
        q = a @ p[f"layers.{i}.attn.wq"]
        k = a @ p[f"layers.{i}.attn.wk"]
        v = a @ p[f"layers.{i}.attn.wv"]
        heads = []
        for h in range(cfg.n_heads):
            lo, hi = h * head_dim, (h + 1) * head_dim
            logits = (q[:, lo:hi] @ k[:, lo:hi].T) * (1.0 / math.sqrt(head_dim)) + mask
            shifted = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            w = e / e.sum(axis=1, keepdims=True)
            heads.append(w @ v[:, lo:hi])
        x = x + np.concatenate(heads, axis=1) @ p[f"layers.{i}.attn.wo"]
        m = reference_rms_norm(x, p[f"layers.{i}.mlp_norm.weight"], cfg.norm_eps)
        pre = m @ p[f"layers.{i}.mlp.w1"]
        act = pre * (1.0 / (1.0 + np.exp(-pre)))  # silu
        x = x + act @ p[f"layers.{i}.mlp.w2"]
    return reference_rms_norm(x, p["final_norm.weight"], cfg.norm_eps)


def naive_ndcg(ranked_doc_ids, grades: dict, k: int):
    """Definitional nDCG@k; returns None when no judged document has grade > 0."""
    dcg = 0.0
    for i, doc_id in enumerate(ranked_doc_ids[:k]):
        gain = 2.0 ** grades.get(doc_id, 0) - 1.0
        dcg += gain / math.log2(i + 2)
    ideal = sorted(grades.values(), reverse=True)[:k]
    idcg = 0.0
    for i, g in enumerate(ideal):
        idcg += (2.0 ** g - 1.0) / math.log2(i + 2)
    if idcg == 0.0:
        return None
    return dcg / idcg


def naive_rrf(runs, k_const: int):
    """Definitional reciprocal rank fusion over any number of runs."""
    docs = set()
    for run in runs:
        docs.update(run)
    scored = {}
    for doc in docs:
        s = 0.0
        for run in runs:
            if doc in run:
                s += 1.0 / (k_const + run.index(doc) + 1)
        scored[doc] = s
    return sorted(scored.items(), key=lambda kv: (-kv[1], kv[0]))


def naive_bm25_scores(doc_token_lists, query_tokens, k1: float, b: float):
    """Definitional BM25 over tokenized documents; returns one score per doc."""
    n = len(doc_token_lists)
    lengths = [len(d) for d in doc_token_lists]
    avgdl = sum(lengths) / n
    scores = []
    for d, length in zip(doc_token_lists, lengths):
        s = 0.0
        for t in query_tokens:
            tf = d.count(t)
            if tf == 0:
                continue
            df = sum(1 for other in doc_token_lists if t in other)
            idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
            s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * length / avgdl))
        scores.append(s)
    return scores


# ---------------------------------------------------------------------------
# per-op gradient-check cases: name -> make(rng) returning (f, named tensors)
# ---------------------------------------------------------------------------

def _reducer(ad, shape, rng):
    """Scalar reduction through weights frozen at construction time, so the
    function under finite differences is deterministic and has non-trivial
    gradients everywhere."""
    w = ad.tensor(rng.normal(size=shape))

    def reduce(t):
        return ad.sum_all(ad.mul(t, w))
    return reduce


def op_gradcheck_cases(ad):
    """One case per differentiable op; inputs are drawn away from singularities
    (division, sqrt, log) so the finite-difference probe stays smooth."""

    def make_add_same(rng):
        a, b = ad.param(rng.normal(size=(3, 4))), ad.param(rng.normal(size=(3, 4)))
        red = _reducer(ad, (3, 4), rng)
        return lambda: red(ad.add(a, b)), {"a": a, "b": b}

    def make_add_scalar(rng):
        a, s = ad.param(rng.normal(size=(3, 4))), ad.param(rng.normal())
        red = _reducer(ad, (3, 4), rng)
        return lambda: red(ad.add(a, s)), {"a": a, "s": s}

    def make_add_row_bias(rng):
        a, b = ad.param(rng.normal(size=(3, 4))), ad.param(rng.normal(size=4))
        red = _reducer(ad, (3, 4), rng)
        return lambda: red(ad.add(a, b)), {"a": a, "b": b}

    def make_sub(rng):
        a, b = ad.param(rng.normal(size=(2, 3))), ad.param(rng.normal(size=(2, 3)))
        red = _reducer(ad, (2, 3), rng)
        return lambda: red(ad.sub(a, b)), {"a": a, "b": b}

    def make_mul(rng):
        a, b = ad.param(rng.normal(size=(3, 3))), ad.param(rng.normal(size=(3, 3)))
        red = _reducer(ad, (3, 3), rng)
        return lambda: red(ad.mul(a, b)), {"a": a, "b": b}

    def make_mul_scalar(rng):
        a, s = ad.param(rng.normal(size=(3, 3))), ad.param(rng.normal())
        red = _reducer(ad, (3, 3), rng)
        return lambda: red(ad.mul(a, s)), {"a": a, "s": s}

    def make_div(rng):
        a = ad.param(rng.normal(size=(2, 3)))
        b = ad.param(1.0 + abs(rng.normal()))
        red = _reducer(ad, (2, 3), rng)
        return lambda: red(ad.div(a, b)), {"a": a, "b": b}

    def make_neg(rng):
        a = ad.param(rng.normal(size=5))
        red = _reducer(ad, (5,), rng)
        return lambda: red(ad.neg(a)), {"a": a}

    def make_sqrt(rng):
        a = ad.param(0.5 + np.abs(rng.normal(size=4)))
        red = _reducer(ad, (4,), rng)
        return lambda: red(ad.sqrt(a)), {"a": a}

    def make_exp(rng):
        a = ad.param(rng.normal(size=4))
        red = _reducer(ad, (4,), rng)
        return lambda: red(ad.exp(a)), {"a": a}

    def make_log(rng):
        a = ad.param(0.5 + np.abs(rng.normal(size=4)))
        red = _reducer(ad, (4,), rng)
        return lambda: red(ad.log(a)), {"a": a}

    def make_silu(rng):
        a = ad.param(rng.normal(size=(2, 4)))
        red = _reducer(ad, (2, 4), rng)
        return lambda: red(ad.silu(a)), {"a": a}

    def make_softplus(rng):
        a = ad.param(rng.normal(size=6) * 3.0)
        red = _reducer(ad, (6,), rng)
        return lambda: red(ad.softplus(a)), {"a": a}

    def make_sum(rng):
        a = ad.param(rng.normal(size=(2, 3)))
        return lambda: ad.sum_all(a), {"a": a}

    def make_mean(rng):
        a = ad.param(rng.normal(size=(2, 3)))
        return lambda: ad.mean_all(a), {"a": a}

    def make_matmul(rng):
        a, b = ad.param(rng.normal(size=(3, 4))), ad.param(rng.normal(size=(4, 2)))
        red = _reducer(ad, (3, 2), rng)
        return lambda: red(ad.matmul(a, b)), {"a": a, "b": b}

    def make_transpose(rng):
        a = ad.param(rng.normal(size=(2, 4)))
        red = _reducer(ad, (4, 2), rng)
        return lambda: red(ad.transpose(a)), {"a": a}

    def make_dot(rng):
        a, b = ad.param(rng.normal(size=5)), ad.param(rng.normal(size=5))
        return lambda: ad.dot(a, b), {"a": a, "b": b}

    def make_cosine_sim(rng):
        a = ad.param(rng.normal(size=5) + np.sign(rng.normal()) * 0.5)
        b = ad.param(rng.normal(size=5) + np.sign(rng.normal()) * 0.5)
        return lambda: ad.cosine_sim(a, b), {"a": a, "b": b}

    def make_take_rows(rng):
        table = ad.param(rng.normal(size=(6, 3)))
        idx = rng.integers(0, 6, size=5)  # repeats exercise scatter-add
        red = _reducer(ad, (5, 3), rng)
        return lambda: red(ad.take_rows(table, idx)), {"table": table}

    def make_pick(rng):
        a = ad.param(rng.normal(size=(4, 3)))
        i = int(rng.integers(0, 4))
        red = _reducer(ad, (3,), rng)
        return lambda: red(ad.pick(a, i)), {"a": a}

    def make_cols(rng):
        a = ad.param(rng.normal(size=(3, 6)))
        red = _reducer(ad, (3, 3), rng)
        return lambda: red(ad.cols(a, 1, 4)), {"a": a}

    def make_concat_rows(rng):
        a, b = ad.param(rng.normal(size=(2, 3))), ad.param(rng.normal(size=(3, 3)))
        red = _reducer(ad, (5, 3), rng)
        return lambda: red(ad.concat_rows([a, b])), {"a": a, "b": b}

    def make_concat_cols(rng):
        a, b = ad.param(rng.normal(size=(3, 2))), ad.param(rng.normal(size=(3, 3)))
        red = _reducer(ad, (3, 5), rng)
        return lambda: red(ad.concat_cols([a, b])), {"a": a, "b": b}

    def make_stack(rng):
        vs = [ad.param(rng.normal(size=4)) for _ in range(3)]
        red = _reducer(ad, (3, 4), rng)
        named = {f"v{i}": v for i, v in enumerate(vs)}
        return lambda: red(ad.stack(vs)), named

    def make_softmax_rows(rng):
        x = ad.param(rng.normal(size=(3, 5)) * 2.0)
        red = _reducer(ad, (3, 5), rng)
        return lambda: red(ad.softmax_rows(x)), {"x": x}

    def make_logsumexp(rng):
        x = ad.param(rng.normal(size=6) * 3.0)
        return lambda: ad.logsumexp(x), {"x": x}

    def make_rms_norm(rng):
        x = ad.param(rng.normal(size=(3, 4)) + 0.1)
        w = ad.param(rng.normal(size=4))
        red = _reducer(ad, (3, 4), rng)
        return lambda: red(ad.rms_norm(x, w, 1e-6)), {"x": x, "w": w}

    def make_causal_attention(rng):
        # composed exactly as the model composes it: scale, mask, softmax, mix
        t, d = 4, 3
        q = ad.param(rng.normal(size=(t, d)))
        k = ad.param(rng.normal(size=(t, d)))
        v = ad.param(rng.normal(size=(t, d)))
        mask = ad.tensor(np.triu(np.full((t, t), -1e9), k=1))
        red = _reducer(ad, (t, d), rng)

        def f():
            logits = ad.add(ad.mul(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(d)), mask)
            return red(ad.matmul(ad.softmax_rows(logits), v))
        return f, {"q": q, "k": k, "v": v}

    makers = (make_add_same, make_add_scalar, make_add_row_bias, make_sub, make_mul,
              make_mul_scalar, make_div, make_neg, make_sqrt, make_exp, make_log,
              make_silu, make_softplus, make_sum, make_mean, make_matmul,
              make_transpose, make_dot, make_cosine_sim, make_take_rows, make_pick,
              make_cols, make_concat_rows, make_concat_cols, make_stack,
              make_softmax_rows, make_logsumexp, make_rms_norm, make_causal_attention)
    return [(fn.__name__.removeprefix("make_"), fn) for fn in makers]
