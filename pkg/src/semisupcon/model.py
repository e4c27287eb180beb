"""ReLU-MLP encoder, two-layer projection head and trainable class prototypes.

Weights are stored ``(fan_in, fan_out)`` so a layer computes ``x @ W + b``.
The forward pass ends in row normalisation: every embedding it returns is a
unit vector, and the loss code never renormalises.
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    FormatVersionMismatch,
    ShapeMismatch,
    TraceMismatch,
)
from .numerics import as_matrix, row_normalize

CHECKPOINT_MAGIC = b"SSCCKPT\x00"
CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    encoder: list       # [(W, b), ...]  input -> h, ReLU after each layer
    projection: list    # [(W1, b1), (W2, b2)]  h -> h -> d, ReLU between
    prototypes: np.ndarray  # (k, d), unit rows

    @property
    def input_dim(self):
        return (self.encoder or self.projection)[0][0].shape[0]

    @property
    def k(self):
        return self.prototypes.shape[0]

    @property
    def d(self):
        return self.prototypes.shape[1]

    @property
    def dims(self):
        """Layer widths ``[input, hidden..., projection_hidden, d]``."""
        ws = [w for w, _ in self.encoder] + [w for w, _ in self.projection]
        return [ws[0].shape[0]] + [w.shape[1] for w in ws]

    def arrays(self):
        """Every parameter array in a fixed order (the checkpoint order)."""
        out = []
        for w, b in list(self.encoder) + list(self.projection):
            out.extend((w, b))
        out.append(self.prototypes)
        return out

    def weight_flags(self):
        """Parallel to :meth:`arrays`: True for weight matrices (decayed)."""
        n_layers = len(self.encoder) + len(self.projection)
        return [True, False] * n_layers + [False]

    def copy(self):
        return ModelParams(
            [(w.copy(), b.copy()) for w, b in self.encoder],
            [(w.copy(), b.copy()) for w, b in self.projection],
            self.prototypes.copy(),
        )

    def zeros_like(self):
        return ModelParams(
            [(np.zeros_like(w), np.zeros_like(b)) for w, b in self.encoder],
            [(np.zeros_like(w), np.zeros_like(b)) for w, b in self.projection],
            np.zeros_like(self.prototypes),
        )

    @classmethod
    def from_arrays(cls, template, arrays):
        it = iter(arrays)
        enc = [(next(it), next(it)) for _ in template.encoder]
        proj = [(next(it), next(it)) for _ in template.projection]
        return cls(enc, proj, next(it))

    def allclose(self, other, atol=0.0):
        return all(
            a.shape == b.shape and np.allclose(a, b, rtol=0.0, atol=atol)
            for a, b in zip(self.arrays(), other.arrays())
        )

    def equals(self, other):
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


# gradients have exactly the parameter layout
ParamGrads = ModelParams


@dataclass
class ForwardTrace:
    x: np.ndarray
    pre: list = field(default_factory=list)   # pre-activation of every layer
    post: list = field(default_factory=list)  # input to every layer
    u: np.ndarray = None                     # projection output before normalisation
    norms: np.ndarray = None
    z: np.ndarray = None
    shapes: tuple = ()


def init_params(dims, k, d, rng):
    """He-initialised weights, zero biases and ``k`` random unit prototypes.

    ``dims`` is ``[input_dim, hidden_1, ..., h]``; the projection head maps
    ``h -> h -> d``.
    """
    dims = [int(v) for v in dims]
    if not dims:
        raise ValueError("dims must be nonempty")
    if k < 2:
        raise ValueError("need at least two classes")

    def layer(fan_in, fan_out):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        return w, np.zeros(fan_out)

    encoder = [layer(a, b) for a, b in zip(dims[:-1], dims[1:])]
    h = dims[-1]
    projection = [layer(h, h), layer(h, d)]
    prototypes = row_normalize(rng.normal(size=(k, d)))
    return ModelParams(encoder, projection, prototypes)


def _layers(params):
    return list(params.encoder) + list(params.projection)


def forward(params, x, record=True):
    """Embed ``x``; returns ``(embeddings, trace)``.

    With ``record=False`` no trace is kept (used for the weak views, which
    never receive gradient) and the second element is None.
    """
    x = as_matrix(x)
    layers = _layers(params)
    if x.shape[1] != layers[0][0].shape[0]:
        raise ShapeMismatch(f"input has {x.shape[1]} columns, model expects {layers[0][0].shape[0]}")
    trace = ForwardTrace(x=x) if record else None
    h = x
    last = len(layers) - 1
    for idx, (w, b) in enumerate(layers):
        a = h @ w + b
        if record:
            trace.post.append(h)
            trace.pre.append(a)
        h = a if idx == last else np.maximum(a, 0.0)
    z = row_normalize(h)
    if record:
        trace.u = h
        trace.norms = np.sqrt(np.einsum("ij,ij->i", h, h))
        trace.z = z
        trace.shapes = tuple(w.shape for w, _ in layers)
    return z, trace


def normalize_backward(z, norms, grad_z):
    """Pull a gradient back through ``u -> u / |u|``: ``(I - z z^T) g / |u|``."""
    radial = np.einsum("ij,ij->i", z, grad_z)
    return (grad_z - z * radial[:, None]) / norms[:, None]


def backward(params, trace, grad_embeddings, grad_prototypes=None):
    """Gradients of the loss w.r.t. every parameter given dL/d(embeddings).

    Prototype gradients do not flow through the network; pass the loss's
    prototype gradient as ``grad_prototypes`` to have it carried along.
    """
    layers = _layers(params)
    grad_embeddings = as_matrix(grad_embeddings)
    if trace is None:
        raise TraceMismatch("no trace was recorded for this forward pass")
    if trace.shapes != tuple(w.shape for w, _ in layers):
        raise TraceMismatch("trace was recorded with different parameter shapes")
    if grad_embeddings.shape != trace.z.shape:
        raise TraceMismatch(f"gradient shape {grad_embeddings.shape} != embedding shape {trace.z.shape}")

    g = normalize_backward(trace.z, trace.norms, grad_embeddings)
    grads = [None] * len(layers)
    last = len(layers) - 1
    for idx in range(last, -1, -1):
        if idx != last:
            g = g * (trace.pre[idx] > 0)
        w = layers[idx][0]
        grads[idx] = (trace.post[idx].T @ g, g.sum(axis=0))
        if idx:
            g = g @ w.T
    n_enc = len(params.encoder)
    gp = np.zeros_like(params.prototypes) if grad_prototypes is None else as_matrix(grad_prototypes).copy()
    if gp.shape != params.prototypes.shape:
        raise TraceMismatch("prototype gradient shape does not match prototypes")
    return ParamGrads(grads[:n_enc], grads[n_enc:], gp)


# -- checkpoints ---------------------------------------------------------
#
# layout, little-endian:
#   8s   magic "SSCCKPT\0"
#   u32  version
#   u32  number of encoder layers E
#   u32  number of widths (E + 3)
#   u32* widths [input, hidden..., projection_hidden, d]
#   u32  k
#   f64* W, b of each encoder layer, W, b of both projection layers, prototypes


def save_checkpoint(params, path):
    dims = params.dims
    header = struct.pack(
        f"<8sIII{len(dims)}II",
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        len(params.encoder),
        len(dims),
        *dims,
        params.k,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in params.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(buf, offset, size, what):
    if offset + size > len(buf):
        raise FormatVersionMismatch(f"checkpoint truncated while reading {what}")
    return buf[offset:offset + size], offset + size


def load_checkpoint(path, like=None):
    """Read a checkpoint written by :func:`save_checkpoint`.

    If ``like`` (a ModelParams) is given, the stored layer widths and class
    count must match it exactly or ShapeMismatch is raised.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    raw, off = _read_exact(buf, 0, 20, "header")
    magic, version, n_enc, n_dims = struct.unpack("<8sIII", raw)
    if magic != CHECKPOINT_MAGIC:
        raise FormatVersionMismatch(f"{path}: not a semisupcon checkpoint")
    if version != CHECKPOINT_VERSION:
        raise FormatVersionMismatch(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if n_dims != n_enc + 3:
        raise FormatVersionMismatch(f"{path}: inconsistent header")
    raw, off = _read_exact(buf, off, 4 * n_dims + 4, "header")
    *dims, k = struct.unpack(f"<{n_dims}II", raw)

    if like is not None and (list(dims) != like.dims or k != like.k):
        raise ShapeMismatch(f"checkpoint dims {dims}, k={k} do not match model dims {like.dims}, k={like.k}")

    shapes = []
    for a, b in zip(dims[:-1], dims[1:]):
        shapes.extend([(a, b), (b,)])
    shapes.append((k, dims[-1]))
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        raw, off = _read_exact(buf, off, 8 * count, "parameters")
        arrays.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape))
    if off != len(buf):
        raise FormatVersionMismatch(f"{path}: trailing bytes after parameters")
    it = iter(arrays)
    enc = [(next(it), next(it)) for _ in range(n_enc)]
    proj = [(next(it), next(it)) for _ in range(2)]
    return ModelParams(enc, proj, next(it))
