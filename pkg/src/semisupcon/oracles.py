"""Slow reference evaluators used to cross-check the vectorised code.

Nothing here shares code with :mod:`semisupcon.losses`: the contrastive
oracle is a literal triple loop with ``math.exp``/``math.log`` and no
log-sum-exp shift, and gradients are checked with central differences.
"""
import math

import numpy as np


def naive_ssc(z, y, lam, anchor_mask, temperature):
    """Weighted SupCon by direct summation; None when no anchor qualifies."""
    n = len(z)
    dot = lambda a, b: sum(float(p) * float(q) for p, q in zip(a, b))
    total, lam_total = 0.0, 0.0
    for i in range(n):
        if not anchor_mask[i]:
            continue
        positives = [p for p in range(n) if p != i and y[p] == y[i]]
        if not positives:
            continue
        denom = sum(math.exp(dot(z[i], z[j]) / temperature) for j in range(n) if j != i)
        inner = 0.0
        for p in positives:
            inner += math.log(math.exp(dot(z[i], z[p]) / temperature) / denom)
        total += -float(lam[i]) / len(positives) * inner
        lam_total += float(lam[i])
    if lam_total == 0.0:
        return None
    return total / lam_total


def naive_supcon(z, y, temperature):
    n = len(z)
    return naive_ssc(z, y, [1.0] * n, [True] * n, temperature)


def naive_prototype_ce(z, y, prototypes):
    """Mean of -log softmax(z_i . c_k)[y_i] by direct summation."""
    total = 0.0
    for zi, yi in zip(z, y):
        logits = [float(np.dot(zi, c)) for c in prototypes]
        total += -math.log(math.exp(logits[yi]) / sum(math.exp(v) for v in logits))
    return total / len(z)


def central_difference(f, arrays, h=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. each array, perturbed in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            fp = f()
            a[idx] = old - h
            fm = f()
            a[idx] = old
            g[idx] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric):
    """``max |a - n|`` over all entries, relative to the largest gradient
    magnitude (entries near zero would otherwise report pure FD noise)."""
    analytic = [np.asarray(a, dtype=np.float64) for a in analytic]
    numeric = [np.asarray(n, dtype=np.float64) for n in numeric]
    diff = max(float(np.max(np.abs(a - n))) if a.size else 0.0 for a, n in zip(analytic, numeric))
    scale = max(max(float(np.max(np.abs(a))) if a.size else 0.0 for a in analytic),
                max(float(np.max(np.abs(n))) if n.size else 0.0 for n in numeric))
    if scale == 0.0:
        return diff
    return diff / scale
