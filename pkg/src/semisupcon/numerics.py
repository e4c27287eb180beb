"""Dense float64 primitives and the seeded random streams used everywhere else.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 with shape
``(rows, cols)``.
"""
import hashlib

import numpy as np

from .exceptions import DimensionMismatch, NonPositiveTemperature, ZeroNormRow

NORM_EPS = 1e-12
UNIT_TOL = 1e-14


def as_matrix(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d matrix, got shape {m.shape}")
    return m


def row_normalize(m):
    """Scale every row of ``m`` to unit L2 norm.

    Raises ZeroNormRow for the first row whose norm is <= 1e-12 instead of
    clamping, since a collapsed embedding almost always means an upstream bug.
    """
    m = as_matrix(m)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    bad = np.flatnonzero(norms <= NORM_EPS)
    if bad.size:
        raise ZeroNormRow(bad[0])
    # rows already unit within UNIT_TOL are left untouched, which makes the map
    # bitwise idempotent: row_normalize(row_normalize(m)) == row_normalize(m)
    out = m.copy()
    for _ in range(4):
        off = np.abs(norms - 1.0) > UNIT_TOL
        if not off.any():
            break
        out[off] /= norms[off, None]
        norms = np.sqrt(np.einsum("ij,ij->i", out, out))
    return out


def check_temperature(temperature):
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")


def logsumexp(a, axis=-1):
    a = np.asarray(a, dtype=np.float64)
    amax = np.max(a, axis=axis, keepdims=True)
    out = amax + np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def log_softmax(v, temperature=1.0):
    """Stable ``v / T - logsumexp(v / T)`` along the last axis."""
    check_temperature(temperature)
    s = np.asarray(v, dtype=np.float64) / temperature
    shifted = s - np.max(s, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(v, temperature=1.0):
    return np.exp(log_softmax(v, temperature))


def similarity_matrix(a, b):
    """All pairwise dot products ``a_i . b_j`` (cosines for unit rows).

    Entries are deliberately not clipped to [-1, 1].
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"column mismatch: {a.shape[1]} vs {b.shape[1]}")
    return a @ b.T


def _label_key(label):
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class SeededRng:
    """A PCG64 stream identified by an integer seed and a path of labels.

    ``child(label)`` derives a new stream from ``(seed, path + label)`` only, so
    the child does not depend on how many draws were taken from the parent.
    Unknown attributes are forwarded to the underlying ``numpy.random.Generator``.
    """

    def __init__(self, seed, _path=()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(_path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(_label_key(p) for p in self.path))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, label):
        return SeededRng(self.seed, self.path + (label,))

    def __getattr__(self, name):
        return getattr(self.generator, name)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, path={self.path!r})"
