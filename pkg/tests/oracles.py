"""Independent brute-force references shared by the unit and acceptance tests."""
import numpy as np


def dense_reflection(v):
    v = np.asarray(v, dtype=float)
    return np.eye(len(v)) - 2 * np.outer(v, v) / (v @ v)


def dense_stack(v1, v2, s=None):
    """Column-convention oracle: W_C = diag(s) P_1 ... P_C with P_c = R(v1-v2) R(v1+v2)."""
    P = np.eye(v1.shape[1])
    for a, b in zip(v1, v2):
        P = P @ dense_reflection(a - b) @ dense_reflection(a + b)
    return P if s is None else np.diag(s) @ P


EPS = 1e-5


def naive_ln(v, gamma, beta):
    n = len(v)
    mu = sum(v) / n
    var = sum((x - mu) ** 2 for x in v) / n
    return [gamma[i] * (v[i] - mu) / np.sqrt(var + EPS) + beta[i] for i in range(n)]


def naive_attention(f, y_o, y_a):
    N, Tn, d = y_a.shape
    Q, K = f.Q.data, f.K.data
    alpha = np.zeros((Tn, N))
    for t in range(Tn):
        q = naive_ln([sum(y_o[t, i] * Q[i, j] for i in range(d)) for j in range(Q.shape[1])],
                     f.ln_q.gamma.data, f.ln_q.beta.data)
        logits = []
        for n in range(N):
            k = naive_ln([sum(y_a[n, t, i] * K[i, j] for i in range(d)) for j in range(K.shape[1])],
                         f.ln_k.gamma.data, f.ln_k.beta.data)
            logits.append(sum(a * b for a, b in zip(q, k)))
        m = max(logits)
        e = [np.exp(x - m) for x in logits]
        alpha[t] = [x / sum(e) for x in e]
    return alpha


def naive_fusion(f, y_o, y_a):
    """Triple loop over (n, t, d); value matrices act on column vectors."""
    N, Tn, d = y_a.shape
    alpha = naive_attention(f, y_o, y_a) if f.config.attention else np.full((Tn, N), 1.0 / N)
    if f.value is None:
        M = np.eye(d)
    elif f.config.value == "dense":
        M = f.value.W.data.T
    else:
        h = f.value.householder
        M = dense_stack(h.v1.data, h.v2.data, None if h.s is None else h.s.data)
    out = np.zeros((Tn, d))
    for n in range(N):
        for t in range(Tn):
            for j in range(d):
                out[t, j] += alpha[t, n] * sum(M[j, i] * y_a[n, t, i] for i in range(d))
    return out + y_o


def brute_force_distance(hyp, ref):
    """Cheapest alignment found by enumerating every edit path (match/sub, delete, insert)."""
    best = [len(hyp) + len(ref)]

    def walk(i, j, cost):
        if cost >= best[0]:
            return
        if i == len(hyp) and j == len(ref):
            best[0] = cost
            return
        if i < len(hyp) and j < len(ref):
            walk(i + 1, j + 1, cost + (hyp[i] != ref[j]))
        if i < len(hyp):
            walk(i + 1, j, cost + 1)
        if j < len(ref):
            walk(i, j + 1, cost + 1)

    walk(0, 0, 0)
    return best[0]


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))



def procrustes_gap(W, candidate, rng, samples=4000, local=500):
    """Smallest ``||W - Q||_F - ||W - candidate||_F`` over sampled orthogonal ``Q``.

    Draws Haar-random matrices of both determinants plus small rotations of
    ``candidate``; a non-negative result means no sample beat the candidate.
    """
    d = W.shape[0]
    best = np.linalg.norm(W - candidate)
    gap = np.inf
    for _ in range(samples):
        Q = random_orthogonal(rng, d)
        if rng.random() < 0.5:
            Q[:, 0] *= -1
        gap = min(gap, np.linalg.norm(W - Q) - best)
    for _ in range(local):
        A = rng.standard_normal((d, d)) * 1e-3
        Q = candidate @ np.linalg.qr(np.eye(d) + (A - A.T))[0]
        gap = min(gap, np.linalg.norm(W - Q) - best)
    return gap
