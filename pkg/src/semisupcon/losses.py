"""Contrastive and cross-entropy losses with closed-form gradients.

All contrastive losses here are one function, the weighted SupCon form

    L = 1/sum_k(lam_k) * sum_i -lam_i/|P(i)| * sum_{p in P(i)} log softmax_{j != i}(z_i.z_j / T)[p]

evaluated over anchors ``i`` that are masked in and own at least one positive.
Plain SupCon is the special case ``lam = 1`` and a full mask; the
self-supervised loss is SupCon over two stacked views that share per-sample
labels.
"""
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DimensionMismatch,
    LabelOutOfRange,
    NoValidAnchor,
    OddRowCount,
)
from .numerics import as_matrix, check_temperature, log_softmax


@dataclass
class ContrastiveBatch:
    """Embeddings, labels and per-anchor weights fed to :func:`ssc_loss`.

    ``anchor_mask`` defaults to all-true and ``lam`` to all-ones.
    """

    z: np.ndarray
    y: np.ndarray
    lam: np.ndarray = None
    anchor_mask: np.ndarray = None

    def __post_init__(self):
        self.z = as_matrix(self.z)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        n = self.z.shape[0]
        if self.y.shape[0] != n:
            raise DimensionMismatch(f"{n} embeddings but {self.y.shape[0]} labels")
        if (self.y < 0).any():
            raise LabelOutOfRange("contrastive labels must be nonnegative")
        self.lam = np.ones(n) if self.lam is None else np.asarray(self.lam, dtype=np.float64).reshape(-1)
        if self.anchor_mask is None:
            self.anchor_mask = np.ones(n, dtype=bool)
        else:
            self.anchor_mask = np.asarray(self.anchor_mask, dtype=bool).reshape(-1)
        if self.lam.shape[0] != n or self.anchor_mask.shape[0] != n:
            raise DimensionMismatch("lam and anchor_mask must have one entry per row")
        if (self.lam < 0).any():
            raise ValueError("anchor weights must be nonnegative")

    def __len__(self):
        return self.z.shape[0]

    def positive_counts(self):
        """|P(i)| for every row: same-label rows other than the row itself."""
        same = self.y[:, None] == self.y[None, :]
        return same.sum(axis=1) - 1


@dataclass
class LossOutput:
    value: float
    grad_z: np.ndarray
    per_anchor: np.ndarray
    extra: dict = field(default_factory=dict)


def ssc_loss(batch, temperature):
    """Weighted semi-supervised contrastive loss and its gradient w.r.t. ``z``.

    Rows that are masked out, or have no positive, are skipped as anchors
    (and dropped from the weight normaliser) but still act as negatives in
    every other anchor's denominator.  ``grad_z`` is the plain Euclidean
    gradient; projecting back onto the sphere is the caller's job.
    """
    check_temperature(temperature)
    z, y, lam = batch.z, batch.y, batch.lam
    n = z.shape[0]
    if n < 2:
        raise NoValidAnchor("need at least two rows")

    pos = (y[:, None] == y[None, :])
    np.fill_diagonal(pos, False)
    n_pos = pos.sum(axis=1)
    anchors = batch.anchor_mask & (n_pos > 0)
    lam_total = lam[anchors].sum()
    if not anchors.any() or not lam_total > 0:
        raise NoValidAnchor("no masked-in anchor has a positive and a nonzero weight")

    logits = (z @ z.T) / temperature
    np.fill_diagonal(logits, -np.inf)
    log_prob = log_softmax(logits)  # row i: log softmax over j != i
    prob = np.exp(log_prob)

    safe_pos = np.where(anchors, n_pos, 1)
    pos_log_prob = np.where(pos, log_prob, 0.0).sum(axis=1)
    per_anchor = np.where(anchors, -pos_log_prob / safe_pos, 0.0)
    weights = np.where(anchors, lam, 0.0) / lam_total
    value = float(np.dot(weights, per_anchor))

    # dL/dlogits_ij = w_i * (softmax_ij - 1[j in P(i)] / |P(i)|)
    g = weights[:, None] * (prob - pos / safe_pos[:, None])
    np.fill_diagonal(g, 0.0)
    grad_z = (g + g.T) @ z / temperature
    return LossOutput(value, grad_z, per_anchor, extra={"anchors": anchors, "n_pos": n_pos})


def supcon_loss(z, y, temperature):
    """Supervised contrastive loss: every row an anchor, unit weights."""
    return ssc_loss(ContrastiveBatch(z, y), temperature)


def self_labels(mu_b):
    """Per-sample labels for two stacked views: ``[0..mu_b) [0..mu_b)``."""
    idx = np.arange(mu_b, dtype=np.int64)
    return np.concatenate([idx, idx])


def self_loss(z_u, mu_b, temperature):
    """InfoNCE over two stacked views, each row's only positive its sibling."""
    z_u = as_matrix(z_u)
    if z_u.shape[0] != 2 * mu_b:
        raise OddRowCount(f"expected {2 * mu_b} rows (two views of {mu_b}), got {z_u.shape[0]}")
    return supcon_loss(z_u, self_labels(mu_b), temperature)


def _check_labels(y, k):
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 0 or y.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    return y


def softmax_cross_entropy(logits, targets, row_weights=None):
    """Per-row CE of ``softmax(logits)`` against integer targets.

    Returns ``(value, grad_logits)`` where ``value = sum_i w_i H_i`` and
    ``w`` defaults to ``1/n``.
    """
    logits = as_matrix(logits)
    n, k = logits.shape
    targets = _check_labels(targets, k)
    if targets.shape[0] != n:
        raise DimensionMismatch("one target per row required")
    w = np.full(n, 1.0 / max(n, 1)) if row_weights is None else np.asarray(row_weights, dtype=np.float64)
    logp = log_softmax(logits)
    rows = np.arange(n)
    value = float(np.dot(w, -logp[rows, targets]))
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    grad *= w[:, None]
    return value, grad


def cross_entropy_masked(logits, targets, mask):
    """Masked CE averaged over *all* rows, masked-out rows contributing 0."""
    logits = as_matrix(logits)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape[0] != logits.shape[0]:
        raise DimensionMismatch("mask length must equal row count")
    n = logits.shape[0]
    value, _ = softmax_cross_entropy(logits, targets, mask / max(n, 1))
    return value


def cross_entropy_masked_grad(logits, targets, mask):
    logits = as_matrix(logits)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    n = logits.shape[0]
    return softmax_cross_entropy(logits, targets, mask / max(n, 1))


def ce_prototype_loss(z_x, y, prototypes):
    """Cross-entropy with the prototypes as bias-free last-layer weights (T=1).

    ``extra["grad_prototypes"]`` holds the gradient w.r.t. the prototype rows.
    """
    z_x = as_matrix(z_x)
    prototypes = as_matrix(prototypes)
    if z_x.shape[1] != prototypes.shape[1]:
        raise DimensionMismatch("embedding and prototype widths differ")
    y = _check_labels(y, prototypes.shape[0])
    logits = z_x @ prototypes.T
    n = z_x.shape[0]
    logp = log_softmax(logits)
    per_row = -logp[np.arange(n), y]
    value, g = softmax_cross_entropy(logits, y)
    return LossOutput(
        value,
        g @ prototypes,
        per_row,
        extra={"grad_prototypes": g.T @ z_x},
    )


def anchored_prototype_batch(z_i, y_i, prototypes):
    """``[z_i; Z^c]`` with labels ``[y_i; 0..K)``, only the data row anchoring."""
    k = prototypes.shape[0]
    z = np.vstack([np.asarray(z_i, dtype=np.float64).reshape(1, -1), prototypes])
    y = np.concatenate([[int(y_i)], np.arange(k)])
    mask = np.zeros(k + 1, dtype=bool)
    mask[0] = True
    return ContrastiveBatch(z, y, anchor_mask=mask)
