"""Pure-numpy policy kernels.

These are the reference implementations of the two hot forward kernels
(`logits_all`, `logits_last`) plus the cached forward / exact backward pair
used by training. The compiled core in `_core.pyx` mirrors only the two
forward kernels; gradients always run through this module.

Architecture (fixed): token embedding + learned absolute positions, one
causal multi-head attention layer with per-head clipped relative-position
biases, a tanh MLP sub-block (both with residuals), and a linear projection
to vocabulary logits. All math is float64. The head count is rel.shape[0].
"""

from __future__ import annotations

import numpy as np

# Order in which parameter arrays are passed to kernel functions.
KERNEL_ARG_ORDER = (
    "emb", "pos", "wq", "bq", "wk", "wv", "bv", "wo", "bo",
    "rel", "w1", "b1", "w2", "b2", "wout", "bout",
)


def forward_with_cache(emb, pos, wq, bq, wk, wv, bv, wo, bo,
                       rel, w1, b1, w2, b2, wout, bout, ids):
    """Full forward pass returning logits for every position plus a cache
    of the intermediates the backward pass needs."""
    ids = np.asarray(ids, dtype=np.int64)
    L = ids.shape[0]
    d = emb.shape[1]
    n_heads, n_buckets = rel.shape
    hd = d // n_heads
    x = emb[ids] + pos[:L]
    q = (x @ wq + bq).reshape(L, n_heads, hd)
    k = (x @ wk).reshape(L, n_heads, hd)
    v = (x @ wv + bv).reshape(L, n_heads, hd)
    idx = np.arange(L)
    delta = idx[:, None] - idx[None, :]
    scores = np.einsum("ihd,jhd->hij", q, k) / np.sqrt(hd)
    scores += rel[:, np.clip(delta, 0, n_buckets - 1)]
    scores[:, delta < 0] = -np.inf
    m = scores.max(axis=2, keepdims=True)
    e = np.exp(scores - m)
    attn = e / e.sum(axis=2, keepdims=True)  # [H, L, L]
    ctx = np.einsum("hij,jhd->ihd", attn, v).reshape(L, d)
    h = x + ctx @ wo + bo
    mlp = np.tanh(h @ w1 + b1)
    g = h + mlp @ w2 + b2
    logits = g @ wout + bout
    cache = {"ids": ids, "x": x, "q": q, "k": k, "v": v,
             "attn": attn, "ctx": ctx, "h": h, "m": mlp, "g": g}
    return logits, cache


def logits_all(emb, pos, wq, bq, wk, wv, bv, wo, bo,
               rel, w1, b1, w2, b2, wout, bout, ids):
    """Logits for every position of `ids`."""
    out, _ = forward_with_cache(emb, pos, wq, bq, wk, wv, bv, wo, bo,
                                rel, w1, b1, w2, b2, wout, bout, ids)
    return out


def logits_last(emb, pos, wq, bq, wk, wv, bv, wo, bo,
                rel, w1, b1, w2, b2, wout, bout, ids):
    """Logits for the final position only (the sampling hot path).

    Recomputes the whole prefix every call; there is deliberately no
    key/value cache.
    """
    ids = np.asarray(ids, dtype=np.int64)
    L = ids.shape[0]
    d = emb.shape[1]
    n_heads, n_buckets = rel.shape
    hd = d // n_heads
    x = emb[ids] + pos[:L]
    q_last = (x[-1] @ wq + bq).reshape(n_heads, hd)
    k = (x @ wk).reshape(L, n_heads, hd)
    v = (x @ wv + bv).reshape(L, n_heads, hd)
    delta = (L - 1) - np.arange(L)
    scores = np.einsum("hd,jhd->hj", q_last, k) / np.sqrt(hd)
    scores += rel[:, np.minimum(delta, n_buckets - 1)]
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=1, keepdims=True)  # [H, L]
    ctx = np.einsum("hj,jhd->hd", attn, v).reshape(d)
    h = x[-1] + ctx @ wo + bo
    mlp = np.tanh(h @ w1 + b1)
    g = h + mlp @ w2 + b2
    return g @ wout + bout


def backward(emb, pos, wq, bq, wk, wv, bv, wo, bo,
             rel, w1, b1, w2, b2, wout, bout, cache, d_logits):
    """Exact gradients of sum(d_logits * logits) w.r.t. every parameter."""
    ids = cache["ids"]
    x, q, k, v = cache["x"], cache["q"], cache["k"], cache["v"]
    attn, ctx, h, mlp, g = cache["attn"], cache["ctx"], cache["h"], cache["m"], cache["g"]
    L = ids.shape[0]
    d = emb.shape[1]
    n_heads, n_buckets = rel.shape
    hd = d // n_heads
    scale = 1.0 / np.sqrt(hd)

    d_wout = g.T @ d_logits
    d_bout = d_logits.sum(axis=0)
    dg = d_logits @ wout.T

    dh = dg.copy()
    dm = dg @ w2.T
    d_w2 = mlp.T @ dg
    d_b2 = dg.sum(axis=0)
    du = dm * (1.0 - mlp * mlp)
    d_w1 = h.T @ du
    d_b1 = du.sum(axis=0)
    dh += du @ w1.T

    d_ctx = (dh @ wo.T).reshape(L, n_heads, hd)
    d_wo = ctx.T @ dh
    d_bo = dh.sum(axis=0)
    dx = dh.copy()

    d_attn = np.einsum("ihd,jhd->hij", d_ctx, v)
    dv = np.einsum("hij,ihd->jhd", attn, d_ctx)
    # softmax backward; masked entries have attn == 0 so they contribute nothing
    inner = (d_attn * attn).sum(axis=2, keepdims=True)
    d_scores = attn * (d_attn - inner)  # [H, L, L]

    idx = np.arange(L)
    delta = idx[:, None] - idx[None, :]
    causal = delta >= 0
    buckets = np.clip(delta, 0, n_buckets - 1)[causal]
    d_rel = np.zeros_like(rel)
    for head in range(n_heads):
        np.add.at(d_rel[head], buckets, d_scores[head][causal])

    dq = np.einsum("hij,jhd->ihd", d_scores, k) * scale
    dk = np.einsum("hij,ihd->jhd", d_scores, q) * scale

    dq2 = dq.reshape(L, d)
    dk2 = dk.reshape(L, d)
    dv2 = dv.reshape(L, d)
    d_wq = x.T @ dq2
    d_bq = dq2.sum(axis=0)
    d_wk = x.T @ dk2
    d_wv = x.T @ dv2
    d_bv = dv2.sum(axis=0)
    dx += dq2 @ wq.T + dk2 @ wk.T + dv2 @ wv.T

    d_emb = np.zeros_like(emb)
    np.add.at(d_emb, ids, dx)
    d_pos = np.zeros_like(pos)
    d_pos[:L] = dx

    return {
        "emb": d_emb, "pos": d_pos,
        "wq": d_wq, "bq": d_bq, "wk": d_wk,
        "wv": d_wv, "bv": d_bv, "wo": d_wo, "bo": d_bo,
        "rel": d_rel,
        "w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2,
        "wout": d_wout, "bout": d_bout,
    }


def forward_with_cache_batch(emb, pos, wq, bq, wk, wv, bv, wo, bo,
                             rel, w1, b1, w2, b2, wout, bout, ids):
    """Batched forward over [B, L] ids (sequences padded at the end).

    Causality guarantees padded tail positions never influence real ones,
    so gradients are exact when the output gradient is zero on the padding.
    """
    ids = np.asarray(ids, dtype=np.int64)
    B, L = ids.shape
    d = emb.shape[1]
    n_heads, n_buckets = rel.shape
    hd = d // n_heads

    def heads(t):  # [B, L, d] -> [B*H, L, hd]
        return np.ascontiguousarray(
            t.reshape(B, L, n_heads, hd).transpose(0, 2, 1, 3)
        ).reshape(B * n_heads, L, hd)

    x = emb[ids] + pos[:L][None]
    x2 = x.reshape(B * L, d)
    q = heads((x2 @ wq + bq).reshape(B, L, d))
    k = heads((x2 @ wk).reshape(B, L, d))
    v = heads((x2 @ wv + bv).reshape(B, L, d))
    idx = np.arange(L)
    delta = idx[:, None] - idx[None, :]
    scores = (q @ k.transpose(0, 2, 1)) / np.sqrt(hd)  # [B*H, L, L]
    scores = scores.reshape(B, n_heads, L, L)
    scores += rel[:, np.clip(delta, 0, n_buckets - 1)][None]
    scores[:, :, delta < 0] = -np.inf
    scores = scores.reshape(B * n_heads, L, L)
    m = scores.max(axis=2, keepdims=True)
    e = np.exp(scores - m)
    attn = e / e.sum(axis=2, keepdims=True)  # [B*H, L, L]
    ctx = (attn @ v).reshape(B, n_heads, L, hd).transpose(0, 2, 1, 3).reshape(B, L, d)
    h = x + (ctx.reshape(B * L, d) @ wo).reshape(B, L, d) + bo
    mlp = np.tanh((h.reshape(B * L, d) @ w1).reshape(B, L, -1) + b1)
    g = h + (mlp.reshape(B * L, -1) @ w2).reshape(B, L, d) + b2
    logits = (g.reshape(B * L, d) @ wout).reshape(B, L, -1) + bout
    cache = {"ids": ids, "x": x, "q": q, "k": k, "v": v,
             "attn": attn, "ctx": ctx, "h": h, "m": mlp, "g": g}
    return logits, cache


def backward_batch(emb, pos, wq, bq, wk, wv, bv, wo, bo,
                   rel, w1, b1, w2, b2, wout, bout, cache, d_logits):
    """Batched exact gradients of sum(d_logits * logits)."""
    ids = cache["ids"]
    x, q, k, v = cache["x"], cache["q"], cache["k"], cache["v"]
    attn, ctx, h, mlp, g = cache["attn"], cache["ctx"], cache["h"], cache["m"], cache["g"]
    B, L = ids.shape
    d = emb.shape[1]
    n_heads, n_buckets = rel.shape
    hd = d // n_heads
    scale = 1.0 / np.sqrt(hd)

    flat = lambda a: a.reshape(-1, a.shape[-1])

    def heads(t):  # [B, L, d] -> [B*H, L, hd]
        return np.ascontiguousarray(
            t.reshape(B, L, n_heads, hd).transpose(0, 2, 1, 3)
        ).reshape(B * n_heads, L, hd)

    def unheads(t):  # [B*H, L, hd] -> [B, L, d]
        return np.ascontiguousarray(
            t.reshape(B, n_heads, L, hd).transpose(0, 2, 1, 3)
        ).reshape(B, L, d)

    d_wout = flat(g).T @ flat(d_logits)
    d_bout = flat(d_logits).sum(axis=0)
    dg = (flat(d_logits) @ wout.T).reshape(B, L, d)

    dh = dg.copy()
    dm = (flat(dg) @ w2.T).reshape(B, L, -1)
    d_w2 = flat(mlp).T @ flat(dg)
    d_b2 = flat(dg).sum(axis=0)
    du = dm * (1.0 - mlp * mlp)
    d_w1 = flat(h).T @ flat(du)
    d_b1 = flat(du).sum(axis=0)
    dh += (flat(du) @ w1.T).reshape(B, L, d)

    d_ctx = heads((flat(dh) @ wo.T).reshape(B, L, d))  # [B*H, L, hd]
    d_wo = flat(ctx).T @ flat(dh)
    d_bo = flat(dh).sum(axis=0)
    dx = dh.copy()

    d_attn = d_ctx @ v.transpose(0, 2, 1)  # [B*H, L, L]
    dv = attn.transpose(0, 2, 1) @ d_ctx  # [B*H, L, hd]
    inner = (d_attn * attn).sum(axis=2, keepdims=True)
    d_scores = attn * (d_attn - inner)  # [B*H, L, L]

    idx = np.arange(L)
    delta = idx[:, None] - idx[None, :]
    causal = delta >= 0
    buckets = np.clip(delta, 0, n_buckets - 1)[causal]
    d_rel = np.zeros_like(rel)
    summed = d_scores.reshape(B, n_heads, L, L).sum(axis=0)  # [H, L, L]
    for head in range(n_heads):
        np.add.at(d_rel[head], buckets, summed[head][causal])

    dq = (d_scores @ k) * scale  # [B*H, L, hd]
    dk = (d_scores.transpose(0, 2, 1) @ q) * scale

    dq2 = unheads(dq)
    dk2 = unheads(dk)
    dv2 = unheads(dv)
    d_wq = flat(x).T @ flat(dq2)
    d_bq = flat(dq2).sum(axis=0)
    d_wk = flat(x).T @ flat(dk2)
    d_wv = flat(x).T @ flat(dv2)
    d_bv = flat(dv2).sum(axis=0)
    dx += ((flat(dq2) @ wq.T) + (flat(dk2) @ wk.T) + (flat(dv2) @ wv.T)).reshape(B, L, d)

    d_emb = np.zeros_like(emb)
    np.add.at(d_emb, ids.ravel(), dx.reshape(-1, d))
    d_pos = np.zeros_like(pos)
    d_pos[:L] = dx.sum(axis=0)

    return {
        "emb": d_emb, "pos": d_pos,
        "wq": d_wq, "bq": d_bq, "wk": d_wk,
        "wv": d_wv, "bv": d_bv, "wo": d_wo, "bo": d_bo,
        "rel": d_rel,
        "w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2,
        "wout": d_wout, "bout": d_bout,
    }
