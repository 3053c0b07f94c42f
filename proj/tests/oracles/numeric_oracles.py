#!/usr/bin/env python3
"""Direct numpy re-evaluations of the model pieces on fixed parameters.

Every tensor is filled by fill(name, rows, cols); the C++ tests apply the
same formula by parameter name, so both sides see identical inputs.
Output: fixtures/expected_numeric.json.
"""

import json
import math
from pathlib import Path

import numpy as np

FIX = Path(__file__).resolve().parent.parent / "fixtures"


def fill(name, rows, cols):
    s = sum(name.encode()) % 97
    i = np.arange(rows)[:, None] + 1
    j = np.arange(cols)[None, :] + 1
    return 0.5 * np.sin(0.37 * i + 0.61 * j + 0.11 * s)


def relu(x):
    return np.maximum(x, 0.0)


def softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# R-GCN on a 5-node path: n0 -r0- n1 -r1- n2 -r0- n3 -r1- n4

def rgcn_path():
    n, dk, df, layers = 5, 3, 4, 2
    triples = [(0, 0, 1), (2, 0, 3), (1, 1, 2), (3, 1, 4)]
    nrel = 2
    h = fill("rgcn.base", n, dk)
    reps = [h]
    for l in range(layers):
        out = h @ fill(f"rgcn.layer{l}.self", dk, dk).T
        for r in range(nrel):
            w = fill(f"rgcn.layer{l}.rel{r}", dk, dk)
            for i in range(n):
                nbrs = [t for a, rr, t in triples if rr == r and a == i] + \
                       [a for a, rr, t in triples if rr == r and t == i]
                for j in nbrs:
                    out[i] += (w @ h[j]) / len(nbrs)
        h = relu(out)
        reps.append(h)
    cat = np.concatenate(reps, axis=1)
    H = cat @ fill("rgcn.wh", df, (layers + 1) * dk).T + fill("rgcn.bh", 1, df)
    return {"d_k": dk, "d_f": df, "layers": layers, "triples": triples, "H": H.tolist()}


# ---------------------------------------------------------------------------

def attention_pool():
    h_e = fill("h_e", 3, 4)
    w_q = fill("attn.wq", 4, 4)
    w_k = fill("attn.wk", 1, 4)
    logits = (w_k @ np.tanh(w_q @ h_e.T))[0]
    alpha = softmax(logits)
    return {"alpha": alpha.tolist(), "c_e": (alpha @ h_e).tolist()}


# ---------------------------------------------------------------------------
# Transformer pieces, evaluated row by row where it matters.

def linear(name, x, n_in, n_out, bias=True):
    y = x @ fill(name + ".w", n_out, n_in).T
    return y + fill(name + ".b", 1, n_out) if bias else y


def layer_norm(name, x):
    d = x.shape[1]
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5) * fill(name + ".gain", 1, d) + fill(name + ".bias", 1, d)


def attention(name, queries, keys, heads, causal=False):
    d = queries.shape[1]
    dh = d // heads
    q = linear(name + ".q", queries, d, d)
    k = linear(name + ".k", keys, d, d, bias=False)  # a key bias cancels in the softmax
    v = linear(name + ".v", keys, d, d)
    out = np.zeros((queries.shape[0], d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(queries.shape[0]):
            scores = []
            for j in range(keys.shape[0]):
                if causal and j > i:
                    continue
                scores.append(float(q[i, sl] @ k[j, sl]) / math.sqrt(dh))
            w = softmax(np.array(scores))
            for j, wj in enumerate(w):
                out[i, sl] += wj * v[j, sl]
    return linear(name + ".o", out, d, d)


def encoder(prefix, x, heads, ffn, layers=1):
    d = x.shape[1]
    for l in range(layers):
        n = f"{prefix}.enc{l}"
        a = layer_norm(n + ".ln1", x + attention(n + ".self", x, x, heads))
        f = linear(n + ".ff2", relu(linear(n + ".ff1", a, d, ffn)), ffn, d)
        x = layer_norm(n + ".ln2", a + f)
    return x


def decoder(prefix, y, memory, heads, ffn, layers=1):
    d = y.shape[1]
    for l in range(layers):
        n = f"{prefix}.dec{l}"
        a = layer_norm(n + ".ln1", y + attention(n + ".self", y, y, heads, causal=True))
        b = layer_norm(n + ".ln2", a + attention(n + ".cross", a, memory, heads))
        f = linear(n + ".ff2", relu(linear(n + ".ff1", b, d, ffn)), ffn, d)
        y = layer_norm(n + ".ln3", b + f)
    return y


def positions(n, d):
    pe = np.zeros((n, d))
    for p in range(n):
        for i in range(d):
            angle = p / 10000 ** ((2 * (i // 2)) / d)
            pe[p, i] = math.sin(angle) if i % 2 == 0 else math.cos(angle)
    return pe


def transformer_encoder():
    x = fill("x", 5, 8)
    return {"d_model": 8, "heads": 2, "ffn": 32, "memory": encoder("t", x, 2, 32).tolist()}


def generator_decoder():
    # vocabulary: 5 reserved ids, then "a" "b" "c"
    v, d, df, n_ent, heads, ffn = 8, 8, 4, 3, 2, 32
    context = [5, 6, 7, 4, 5]
    em = fill("gen.embedding", v, d)
    c_e = fill("c_e", 1, df)
    H = fill("frozen.H", n_ent, df)
    memory = encoder("gen", em[context] + positions(len(context), d), heads, ffn)
    acc = np.zeros(n_ent)
    prefixes = [[2], [2, 5], [2, 5, 6]]
    for prefix in prefixes:
        y = decoder("gen", em[prefix] + positions(len(prefix), d), memory, heads, ffn)
        joint = np.concatenate([y[-1:], c_e], axis=1)
        p_res = softmax(linear("gen.phi", joint, d + df, d) @ em.T + fill("gen.b_res", 1, v))[0]
        ent = softmax(joint @ fill("gen.w_align", d + df, df) @ H.T + fill("gen.b_res_entity", 1, n_ent))[0]
        acc += ent
    p_boe = 1 / (1 + np.exp(-acc))
    return {"context": context, "prefixes": prefixes, "memory": memory.tolist(), "p_res": p_res.tolist(),
            "p_boe": p_boe.tolist()}


# ---------------------------------------------------------------------------

def adam():
    lr, b1, b2, eps, clip, l2 = 0.01, 0.9, 0.99, 1e-8, 0.1, 1e-5
    params = {"p.a": fill("p.a", 2, 3), "p.b": fill("p.b", 1, 4)}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    s = {k: np.zeros_like(v) for k, v in params.items()}
    scales = [1.0, 0.01, 0.3]
    for step, scale in enumerate(scales, start=1):
        grads = {k: scale * fill("g." + k[2:], *v.shape) + l2 * v for k, v in params.items()}
        norm = math.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
        factor = clip / norm if norm > clip else 1.0
        for k in params:
            g = grads[k] * factor
            m[k] = b1 * m[k] + (1 - b1) * g
            s[k] = b2 * s[k] + (1 - b2) * g * g
            mh = m[k] / (1 - b1 ** step)
            vh = s[k] / (1 - b2 ** step)
            params[k] = params[k] - lr * mh / (np.sqrt(vh) + eps)
    return {"scales": scales, "lr": lr, "beta1": b1, "beta2": b2, "eps": eps, "clip": clip, "l2": l2,
            "params": {k: v.tolist() for k, v in params.items()}}


if __name__ == "__main__":
    out = {
        "rgcn_path": rgcn_path(),
        "attention_pool": attention_pool(),
        "transformer_encoder": transformer_encoder(),
        "generator_decoder": generator_decoder(),
        "adam": adam(),
    }
    with open(FIX / "expected_numeric.json", "w") as f:
        json.dump(out, f, indent=1)
