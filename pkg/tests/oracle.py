"""Straight-line numpy re-implementations used as test oracles.

Loops over rows and heads with scalar-level arithmetic, sharing nothing with
the fused tensor primitives beyond reading the same parameter arrays.
"""

import math

import numpy as np


def ref_positions(n, d):
    out = np.zeros((n, d))
    for p in range(n):
        for i in range(d):
            angle = p / 10000.0 ** (2 * (i // 2) / d)
            out[p, i] = math.sin(angle) if i % 2 == 0 else math.cos(angle)
    return out


def ref_layer_norm(row, g, b):
    mu = sum(row) / len(row)
    var = sum((x - mu) ** 2 for x in row) / len(row)
    return np.array([(x - mu) / math.sqrt(var + 1e-5) * gi + bi for x, gi, bi in zip(row, g, b)])


def ref_linear(rows, p, name):
    w, b = p[f"{name}.w"], p[f"{name}.b"]
    return np.array([[sum(r[i] * w[i, j] for i in range(len(r))) + b[j] for j in range(w.shape[1])] for r in rows])


def ref_layer(x, p, prefix, heads):
    n, d = x.shape
    dh = d // heads
    q, k, v = (ref_linear(x, p, f"{prefix}.attn.{c}") for c in "qkv")
    ctx = np.zeros((n, d))
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        for i in range(n):
            scores = [float(q[i, cols] @ k[j, cols]) / math.sqrt(dh) for j in range(n)]
            top = max(scores)
            weights = [math.exp(s - top) for s in scores]
            total = sum(weights)
            for j in range(n):
                ctx[i, cols] += weights[j] / total * v[j, cols]
    attn = ref_linear(ctx, p, f"{prefix}.attn.o")
    h1 = np.array([ref_layer_norm(x[i] + attn[i], p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"]) for i in range(n)])
    ff = ref_linear(np.maximum(ref_linear(h1, p, f"{prefix}.ff1"), 0.0), p, f"{prefix}.ff2")
    return np.array([ref_layer_norm(h1[i] + ff[i], p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"]) for i in range(n)])


def ref_text(ids, p, layers, heads):
    emb = p["text.tok_emb"]
    x = np.array([emb[i] for i in ids]) + ref_positions(len(ids), emb.shape[1])
    for layer in range(layers):
        x = ref_layer(x, p, f"text.layer{layer}", heads)
    return x


def plain(store):
    return {name: t.data.copy() for name, t in store}


def ref_gin(graph, p, layers, epsilon):
    n = [p["gin.atom_emb"][a] for a in graph.atom_ids]
    for layer in range(layers):
        new = []
        for i in range(len(n)):
            agg = (1.0 + epsilon) * n[i]
            for s, t, e in zip(graph.src, graph.dst, graph.edge_types):
                if t == i:
                    agg = agg + n[s] + p["gin.bond_emb"][e]
            h = np.tanh(agg @ p[f"gin.layer{layer}.ff1.w"] + p[f"gin.layer{layer}.ff1.b"])
            new.append(h @ p[f"gin.layer{layer}.ff2.w"] + p[f"gin.layer{layer}.ff2.b"])
        n = new
    return np.array(n)
