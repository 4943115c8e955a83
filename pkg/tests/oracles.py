"""Slow, explicit reference computations used as independent test oracles.

None of these call into the code paths they check: loops replace the
vectorised gathers, dense linear algebra replaces the sparse iterations.
"""
import math
from collections import deque

import numpy as np


def dense_adjacency(n, edges):
    a = np.zeros((n, n))
    for i, j in edges:
        if i != j:
            a[i, j] = a[j, i] = 1.0
    return a


def homophily_bruteforce(n, edges, labels):
    seen = set()
    for i, j in edges:
        if i != j:
            seen.add((min(i, j), max(i, j)))
    if not seen:
        return 0.0
    return sum(labels[i] == labels[j] for i, j in seen) / len(seen)


def katz_dense(adj, beta, k_max):
    out = np.zeros_like(adj)
    for k in range(1, k_max + 1):
        out += beta ** (k - 1) * np.linalg.matrix_power(adj, k)
    return out


def ppr_linear_solve(adj, base, alpha):
    """Fixed point of p = (1-a)(A D^-1 p + dangling mass -> base) + a e_base."""
    n = adj.shape[0]
    deg = adj.sum(axis=0)
    trans = np.zeros_like(adj)
    for j in range(n):
        if deg[j] > 0:
            trans[:, j] = adj[:, j] / deg[j]
        else:
            trans[base, j] = 1.0
    e = np.zeros(n)
    e[base] = 1.0
    return np.linalg.solve(np.eye(n) - (1 - alpha) * trans, alpha * e)


def bfs_bruteforce(adj, base, limit):
    n = adj.shape[0]
    order, seen, q = [base], {base}, deque([base])
    while q:
        u = q.popleft()
        for v in range(n):
            if adj[u, v] and v not in seen:
                seen.add(v)
                order.append(v)
                q.append(v)
    order += [v for v in range(n) if v not in seen]
    return order[:limit]


def cosine_order_bruteforce(x, base):
    def cos(a, b):
        na, nb = math.sqrt(sum(v * v for v in a)), math.sqrt(sum(v * v for v in b))
        if na == 0 or nb == 0:
            return 0.0
        return sum(u * v for u, v in zip(a, b)) / (na * nb)

    sims = [(round(cos(x[base], x[j]), 12), j) for j in range(len(x)) if j != base]
    return [j for _, j in sorted(sims, key=lambda t: (-t[0], t[1]))]


def g_kernel(a, b, gamma, eps):
    return math.exp(-((a - b) ** 2) / gamma) if abs(a - b) < eps else 0.0


def g_bilinear(a, b):
    return max(0.0, 1.0 - abs(a - b))


def slot_weights_reference(p, seq_len, cfg):
    if cfg.interp == "bilinear":
        w = [g_bilinear(p, i) for i in range(seq_len)]
    else:
        w = [g_kernel(p, i, cfg.gamma, cfg.epsilon) for i in range(seq_len)]
    if cfg.normalize_kernel:
        s = sum(w)
        w = [v / s for v in w] if s > 0 else w
    return w


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def dga_reference(z, seqs, values, p, cfg):
    """Explicit loop nest over (query, criterion, head, key, slot).

    ``p`` is a dict of numpy arrays with the DgaParams field names.
    Returns (output, attention scores per query as an (N, N) array).
    """
    n, c = z.shape
    t_count, _, s = seqs.shape
    m_count, k_count, cv = cfg.heads, cfg.keys, cfg.hidden // cfg.heads
    out = np.zeros((n, c))
    scores = np.zeros((n, n))
    for q in range(n):
        for t in range(t_count):
            for m in range(m_count):
                base = (t * m_count + m) * k_count
                logits = [
                    float(np.dot(z[q], p["att_w"][:, base + k])) + p["att_b"][base + k]
                    for k in range(k_count)
                ]
                mx = max(logits)
                ex = [math.exp(v - mx) for v in logits]
                attn = [v / sum(ex) for v in ex]
                w_val = p["val_w"][t][:, m * cv : (m + 1) * cv].T  # c_v x c
                w_out = p["out_w"][t][m * cv : (m + 1) * cv, :].T  # c x c_v
                acc = np.zeros(cv)
                for k in range(k_count):
                    off = float(np.dot(z[q], p["off_w"][:, base + k])) + p["off_b"][base + k]
                    pos = (s - 1) * _sigmoid(off)
                    weights = slot_weights_reference(pos, s, cfg)
                    sampled = np.zeros(c)
                    for i in range(s):
                        node = seqs[t, q, i]
                        sampled += weights[i] * values[node]
                        scores[q, node] += attn[k] * weights[i]
                    acc += attn[k] * (w_val @ sampled)
                out[q] += w_out @ acc
    return out, scores


def mha_reference(z, f, wq, wk, wv, wo, heads):
    n, c = z.shape
    cv = c // heads
    out = np.zeros((n, c))
    probs = np.zeros((heads, n, len(f)))
    for m in range(heads):
        cols = slice(m * cv, (m + 1) * cv)
        u, v = wq[:, cols].T, wk[:, cols].T
        w_val, w_out = wv[:, cols].T, wo[cols, :].T
        for q in range(n):
            logits = [float(z[q] @ u.T @ v @ f[k]) / math.sqrt(cv) for k in range(len(f))]
            mx = max(logits)
            ex = [math.exp(x - mx) for x in logits]
            tot = sum(ex)
            acc = np.zeros(cv)
            for k in range(len(f)):
                probs[m, q, k] = ex[k] / tot
                acc += probs[m, q, k] * (w_val @ f[k])
            out[q] += w_out @ acc
    return out, probs


def dgt_reference(model, features, katz_matrix, seqs):
    """Straight-line DGT forward on raw arrays (no layer norm, no dropout)."""
    p = {k: v.data for k, v in model.params.items()}
    relu = lambda x: np.maximum(x, 0.0)  # noqa: E731
    z = features @ p["encoder.w"] + p["encoder.b"]
    if model.cfg.pe_mode == "katz":
        z = z + relu(katz_matrix @ p["katz1.w"] + p["katz1.b"]) @ p["katz2.w"] + p["katz2.b"]
    for layer, dp in enumerate(model.dga_params):
        arrays = {
            "off_w": dp.off_w.data, "off_b": dp.off_b.data,
            "att_w": dp.att_w.data, "att_b": dp.att_b.data,
            "val_w": [v.data for v in dp.val_w], "out_w": [o.data for o in dp.out_w],
        }
        zhat = dga_reference(z, seqs, z, arrays, model.dga_cfg)[0] + z
        h = relu(zhat @ p[f"l{layer}.ffn1.w"] + p[f"l{layer}.ffn1.b"])
        z = h @ p[f"l{layer}.ffn2.w"] + p[f"l{layer}.ffn2.b"] + zhat
    return z @ p["classifier.w"] + p["classifier.b"]


def full_mha_reference(model, features, katz_matrix=None):
    """Straight-line forward of the all-pairs baseline (no layer norm, no dropout)."""
    p = {k: v.data for k, v in model.params.items()}
    relu = lambda x: np.maximum(x, 0.0)  # noqa: E731
    z = features @ p["encoder.w"] + p["encoder.b"]
    if model.cfg.pe_mode == "katz":
        z = z + relu(katz_matrix @ p["katz1.w"] + p["katz1.b"]) @ p["katz2.w"] + p["katz2.b"]
    for layer in range(model.cfg.layers):
        w = [p[f"l{layer}.mha.{k}"] for k in ("q", "k", "v", "o")]
        zhat = mha_reference(z, z, *w, model.cfg.heads)[0] + z
        h = relu(zhat @ p[f"l{layer}.ffn1.w"] + p[f"l{layer}.ffn1.b"])
        z = h @ p[f"l{layer}.ffn2.w"] + p[f"l{layer}.ffn2.b"] + zhat
    return z @ p["classifier.w"] + p["classifier.b"]
