"""Independent reference computations used by the tests."""

import itertools
import math

import numpy as np


def fd_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_err(a, b, floor=1e-8) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))


def triple_loop_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            out[i, j] = math.fsum(float(a[i, p]) * float(b[p, j]) for p in range(k))
    return out


def log_softmax_gather_nll(logits, targets, pad_id) -> float:
    """Mean NLL over non-pad targets, via fsum-based log-sum-exp per row."""
    total, count = [], 0
    for idx in np.ndindex(targets.shape):
        t = int(targets[idx])
        if t == pad_id:
            continue
        row = [float(v) for v in logits[idx]]
        m = max(row)
        lse = m + math.log(math.fsum(math.exp(v - m) for v in row))
        total.append(lse - row[t])
        count += 1
    return math.fsum(total) / count


def brute_force_bleu(hyps, refs, max_n=4):
    """Clipped n-gram BLEU by explicit enumeration; returns (bleu, matches, totals, bp)."""
    matches = [0] * max_n
    totals = [0] * max_n
    c = r = 0
    for hyp, ref in zip(hyps, refs):
        c += len(hyp)
        r += len(ref)
        for n in range(1, max_n + 1):
            hg = [tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1)]
            rg = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
            totals[n - 1] += len(hg)
            for gram in set(hg):
                matches[n - 1] += min(hg.count(gram), rg.count(gram))
    if c == 0:
        bp = 0.0
    elif c < r:
        bp = math.exp(1 - r / c)
    else:
        bp = 1.0
    if any(m == 0 for m in matches) or any(t == 0 for t in totals):
        return 0.0, matches, totals, bp
    logs = [math.log(m / t) for m, t in zip(matches, totals)]
    return 100.0 * bp * math.exp(math.fsum(logs) / max_n), matches, totals, bp


def block_sumsq(w: np.ndarray, n_blocks: int) -> list:
    """Squared Frobenius norm of each row block, by explicit element loop."""
    d = w.shape[1]
    out = []
    for j in range(n_blocks):
        s = 0.0
        for r, c in itertools.product(range(j * d, (j + 1) * d), range(d)):
            s += float(w[r, c]) ** 2
        out.append(s)
    return out
