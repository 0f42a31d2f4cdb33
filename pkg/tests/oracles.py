"""Independent brute-force oracles used by the test suite.

Everything here is deliberately naive (explicit loops, multiset
operations on lists) and shares no code with the package, so a bug in
the main implementation cannot hide in a shared helper.
"""

import math

import numpy as np


# ---------------------------------------------------------------------------
# convolution


def conv2d_loops(x, w, b, stride=1, padding=0):
    """Direct 6-loop cross-correlation. x:[C,H,W], w:[Co,C,kh,kw], b:[Co]."""
    c, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.zeros((c, h + 2 * padding, wd + 2 * padding), dtype=x.dtype)
    xp[:, padding : padding + h, padding : padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((co, ho, wo), dtype=x.dtype)
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for ci in range(c):
                    for ki in range(kh):
                        for kj in range(kw):
                            acc += xp[ci, i * stride + ki, j * stride + kj] * w[o, ci, ki, kj]
                out[o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def depthwise_via_grouped_conv(x, w, b):
    """Depthwise 3x3 expressed as C independent single-channel convolutions."""
    c = x.shape[0]
    outs = []
    for ci in range(c):
        bi = np.array([b[ci]]) if b is not None else None
        outs.append(conv2d_loops(x[ci : ci + 1], w[ci : ci + 1, :1], bi, stride=1, padding=1)[0])
    return np.stack(outs)


# ---------------------------------------------------------------------------
# Adam


def adam_trajectory_scalar(x0, grad_fn, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scripted scalar Adam with bias correction; returns every iterate."""
    x, m, v = float(x0), 0.0, 0.0
    history = [x]
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        x = x - lr * m_hat / (math.sqrt(v_hat) + eps)
        history.append(x)
    return history


# ---------------------------------------------------------------------------
# caption metrics (list-based multiset arithmetic on purpose)


def _toks(s):
    return s.lower().split()


def _ngram_list(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def _multiset_intersection_size(a, b):
    """|a âˆ© b| with multiplicity, by removing matches from a copy of b."""
    pool = list(b)
    hits = 0
    for gram in a:
        if gram in pool:
            pool.remove(gram)
            hits += 1
    return hits


def bleu_oracle(corpus, n_max=4):
    """corpus: list of (hypothesis, [references]). Returns [BLEU-1..BLEU-n_max]."""
    matched = {n: 0 for n in range(1, n_max + 1)}
    total = {n: 0 for n in range(1, n_max + 1)}
    c_len = 0
    r_len = 0
    for hyp, refs in corpus:
        h = _toks(hyp)
        rs = [_toks(r) for r in refs]
        c_len += len(h)
        best = None
        for r in rs:
            if best is None or (abs(len(r) - len(h)), len(r)) < (abs(len(best) - len(h)), len(best)):
                best = r
        r_len += len(best)
        for n in range(1, n_max + 1):
            hyp_grams = _ngram_list(h, n)
            total[n] += len(hyp_grams)
            # clipped matches: best per-reference multiset intersection is
            # NOT the convention; clip against the max count over refs.
            clipped = 0
            remaining = list(hyp_grams)
            for gram in set(hyp_grams):
                hyp_count = hyp_grams.count(gram)
                max_ref = max(_ngram_list(r, n).count(gram) for r in rs)
                clipped += min(hyp_count, max_ref)
            matched[n] += clipped
    if c_len == 0:
        return [0.0] * n_max
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    out = []
    for n in range(1, n_max + 1):
        ps = []
        for k in range(1, n + 1):
            ps.append(matched[k] / total[k] if total[k] else 0.0)
        if any(p == 0 for p in ps):
            out.append(0.0)
        else:
            log_mean = sum(math.log(p) for p in ps) / n
            out.append(bp * math.exp(log_mean))
    return out


def rouge_l_oracle(corpus, beta=1.2):
    def lcs(a, b):
        # plain recursive definition with memo
        memo = {}

        def rec(i, j):
            if i == 0 or j == 0:
                return 0
            if (i, j) in memo:
                return memo[(i, j)]
            if a[i - 1] == b[j - 1]:
                val = rec(i - 1, j - 1) + 1
            else:
                val = max(rec(i - 1, j), rec(i, j - 1))
            memo[(i, j)] = val
            return val

        return rec(len(a), len(b))

    scores = []
    for hyp, refs in corpus:
        h = _toks(hyp)
        best = 0.0
        for ref in refs:
            r = _toks(ref)
            m = lcs(h, r)
            if m == 0 or not h or not r:
                continue
            prec = m / len(h)
            rec = m / len(r)
            denom = rec + beta * beta * prec
            if denom > 0:
                best = max(best, (1 + beta * beta) * prec * rec / denom)
        scores.append(best)
    return sum(scores) / len(scores)


def cider_d_oracle(corpus, sigma=6.0, n_max=4):
    """Step-by-step tf-idf consensus score; corpus: list of (hyp, [refs])."""
    n_docs = len(corpus)

    # document frequency: a document is the reference set of one pair
    df = {n: {} for n in range(1, n_max + 1)}
    for _, refs in corpus:
        for n in range(1, n_max + 1):
            grams_here = set()
            for ref in refs:
                grams_here.update(_ngram_list(_toks(ref), n))
            for g in grams_here:
                df[n][g] = df[n].get(g, 0) + 1

    def idf(g, n):
        return math.log(n_docs) - math.log(max(1.0, df[n].get(g, 0)))

    def vec(tokens, n):
        grams = _ngram_list(tokens, n)
        out = {}
        for g in grams:
            out[g] = out.get(g, 0) + 1
        return {g: c * idf(g, n) for g, c in out.items()}

    def norm(v):
        return math.sqrt(sum(x * x for x in v.values()))

    item_scores = []
    for hyp, refs in corpus:
        h = _toks(hyp)
        n_scores = []
        for n in range(1, n_max + 1):
            vh = vec(h, n)
            nh = norm(vh)
            ref_scores = []
            for ref in refs:
                r = _toks(ref)
                vr = vec(r, n)
                nr = norm(vr)
                cross = 0.0
                for g, x in vh.items():
                    if g in vr:
                        cross += min(x, vr[g]) * vr[g]
                sim = cross / (nh * nr) if nh > 0 and nr > 0 else 0.0
                delta = len(h) - len(r)
                penalty = math.exp(-(delta**2) / (2 * sigma**2))
                ref_scores.append(sim * penalty)
            n_scores.append(10.0 * sum(ref_scores) / len(ref_scores))
        item_scores.append(sum(n_scores) / n_max)
    return sum(item_scores) / n_docs
