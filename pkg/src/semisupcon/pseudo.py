"""Prototype classification head and confidence-gated pseudo-labels."""
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatch, TauOutOfRange
from .numerics import as_matrix, log_softmax


@dataclass
class PseudoLabelResult:
    labels: np.ndarray         # (2 * mu_b,) labels of both strong views
    confident: np.ndarray      # (mu_b,) bool, max p > tau
    probabilities: np.ndarray  # (mu_b, k)
    hard_labels: np.ndarray    # (mu_b,) argmax, lowest index on ties

    @property
    def mask_rate(self):
        return float(self.confident.mean()) if self.confident.size else 0.0


def prototype_logits(z, prototypes):
    z = as_matrix(z)
    prototypes = as_matrix(prototypes)
    if z.shape[1] != prototypes.shape[1]:
        raise DimensionMismatch(f"embedding width {z.shape[1]} != prototype width {prototypes.shape[1]}")
    return z @ prototypes.T


def prototype_probabilities(z_w, prototypes, t_prime):
    """Row ``i`` is ``softmax(Z^c z_i / T')``."""
    return np.exp(log_softmax(prototype_logits(z_w, prototypes), t_prime))


def assign_pseudo_labels(z_w, prototypes, tau, t_prime, k=None):
    """Label the two strong views of each weakly-augmented unlabeled example.

    Confident examples (max probability strictly above ``tau``) get their
    argmax class; the rest get the unique label ``k + i`` so that their only
    positive in the contrastive batch is their sibling view.
    """
    if not 0.0 < tau < 1.0:
        raise TauOutOfRange(f"tau must lie in (0, 1), got {tau}")
    prototypes = as_matrix(prototypes)
    k = prototypes.shape[0] if k is None else int(k)
    if prototypes.shape[0] != k:
        raise DimensionMismatch(f"expected {k} prototypes, got {prototypes.shape[0]}")
    logits = prototype_logits(z_w, prototypes)
    probs = np.exp(log_softmax(logits, t_prime))
    mu_b = probs.shape[0]
    # argmax on raw similarities: exactly independent of t_prime, first max wins
    hard = np.argmax(logits, axis=1).astype(np.int64)
    confident = probs[np.arange(mu_b), hard] > tau
    y_u = np.where(confident, hard, k + np.arange(mu_b, dtype=np.int64))
    return PseudoLabelResult(
        labels=np.concatenate([y_u, y_u]),
        confident=confident,
        probabilities=probs,
        hard_labels=hard,
    )
