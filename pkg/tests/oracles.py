"""Independent reference computations used by the test suite.

Everything here is written scalar-by-scalar (plain Python loops and floats,
or one-liner numpy where the formula is the oracle), on purpose: these must
not share code paths with the package.
"""

import math


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def hash_token(token: str, vocab_size: int) -> int:
    return fnv1a64(token.encode("utf-8")) % vocab_size


def rel_err(a: float, n: float) -> float:
    """Relative error with a floor so near-zero grads compare absolutely."""
    return abs(a - n) / max(1.0, abs(a), abs(n))


def fd_gradient(f, arrays, step=1e-5):
    """Central finite differences of scalar f() w.r.t. every array entry.

    ``arrays`` are mutated in place during probing and restored afterwards.
    Returns a list of nested-list gradients congruent with ``arrays``.
    """
    grads = []
    for arr in arrays:
        flat = arr.reshape(-1)
        g = []
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = f()
            flat[i] = keep - step
            down = f()
            flat[i] = keep
            g.append((up - down) / (2.0 * step))
        grads.append(g)
    return grads


def max_fd_rel_err(f, arrays, analytic, step=1e-5) -> float:
    """Worst rel_err between analytic grads and central differences."""
    worst = 0.0
    numeric = fd_gradient(f, arrays, step)
    for a_arr, n_list in zip(analytic, numeric):
        a_flat = a_arr.reshape(-1)
        for a, n in zip(a_flat, n_list):
            worst = max(worst, rel_err(float(a), float(n)))
    return worst


def scalar_infonce(q, pos, negs, tau):
    """InfoNCE value from dot products, computed with plain floats."""
    s_pos = sum(float(a) * float(b) for a, b in zip(q, pos)) / tau
    s_negs = [
        sum(float(a) * float(b) for a, b in zip(q, neg)) / tau for neg in negs
    ]
    denom = math.exp(s_pos) + sum(math.exp(s) for s in s_negs)
    return -math.log(math.exp(s_pos) / denom)


def scalar_softmax(scores):
    m = max(scores)
    exps = [math.exp(s - m) for s in scores]
    z = sum(exps)
    return [e / z for e in exps]


def scalar_kl(p_scores, q_scores, tau):
    """KL(softmax(p/tau) || softmax(q/tau)) with plain floats."""
    p = scalar_softmax([s / tau for s in p_scores])
    q = scalar_softmax([s / tau for s in q_scores])
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q))


def scalar_mse(a, b):
    return sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))


def dcg_at_k(ranked_rels, k):
    """Brute-force binary DCG with 1/log2(rank+1) discounts, ranks from 1."""
    total = 0.0
    for rank, rel in enumerate(ranked_rels[:k], start=1):
        if rel:
            total += 1.0 / math.log2(rank + 1)
    return total


def ndcg_at_k(ranked_rels, n_relevant, k):
    ideal = dcg_at_k([1] * min(n_relevant, k), k)
    return dcg_at_k(ranked_rels, k) / ideal


def ap_at_k(ranked_rels, n_relevant, k):
    hits = 0
    total = 0.0
    for rank, rel in enumerate(ranked_rels[:k], start=1):
        if rel:
            hits += 1
            total += hits / rank
    return total / min(k, n_relevant)


def pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)


def average_ranks(values):
    """1-based ranks with ties sharing the average of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = avg
        i = j + 1
    return ranks


def spearman(x, y):
    return pearson(average_ranks(x), average_ranks(y))


def fleiss_kappa(counts):
    """Fleiss' kappa from an items-by-categories count matrix."""
    n_items = len(counts)
    n_raters = sum(counts[0])
    p_bar = 0.0
    for row in counts:
        agree = sum(c * c for c in row) - n_raters
        p_bar += agree / (n_raters * (n_raters - 1))
    p_bar /= n_items
    p_e = 0.0
    total = n_items * n_raters
    for j in range(len(counts[0])):
        share = sum(row[j] for row in counts) / total
        p_e += share * share
    if p_e == 1.0:
        return 1.0
    return (p_bar - p_e) / (1.0 - p_e)


def simulate_diversify(sims, seed_size, k, t, n, strict=True):
    """Hand simulation of the evolving dedup index on a similarity matrix.

    ``sims[i][j]`` is the similarity between items i and j. Returns retained
    item indices in input order.
    """
    kept = []
    for i in range(len(sims)):
        if len(kept) < seed_size:
            kept.append(i)
            continue
        neighbor_sims = sorted((sims[i][j] for j in kept), reverse=True)[:k]
        close = sum(1 for s in neighbor_sims if s > t)
        discard = close > n if strict else close >= n
        if not discard:
            kept.append(i)
    return kept
