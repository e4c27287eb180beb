"""Online self-training: batch assembly, per-mode training steps, SGD with
momentum, the cosine schedule, evaluation and the ablation presets."""
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .data import AugmentConfig, augment_strong, augment_weak
from .exceptions import NonFiniteLoss
from .losses import ContrastiveBatch
from .model import backward, forward, init_params
from .numerics import SeededRng, row_normalize
from .pseudo import assign_pseudo_labels, prototype_logits

MODES = ("ssc", "fixmatch_ce", "supcon_labeled_only", "ce_labeled_only")

# block ids of rows in an assembled SSC batch
BLOCK_LABELED, BLOCK_CONFIDENT, BLOCK_UNCONFIDENT, BLOCK_PROTOTYPE = range(4)


@dataclass
class TrainConfig:
    b: int = 16
    mu: int = 7
    k: int = 4
    t: float = 0.01
    t_prime: float = 0.04
    tau: float = 0.95
    lambda_x: float = 1.0
    lambda_conf: float = 1.0
    lambda_unconf: float = 0.2
    lambda_proto: float = 1.0
    lr0: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    total_steps: int = 3000
    steps_per_epoch: int = 256
    mode: str = "ssc"
    double_strong_aug: bool = False
    add_self_loss: bool = False
    exclude_unconfident_anchors: bool = False
    hidden_dims: tuple = (128,)
    embed_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.b < 1 or self.mu < 1:
            raise ValueError("b and mu must be >= 1")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if not (self.t > 0 and self.t_prime > 0):
            raise ValueError("temperatures must be positive")
        if min(self.lambda_x, self.lambda_conf, self.lambda_unconf, self.lambda_proto) < 0:
            raise ValueError("lambda weights must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.total_steps < 0 or self.steps_per_epoch < 1:
            raise ValueError("total_steps must be >= 0 and steps_per_epoch >= 1")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


# Table-3 style ablation rows, applied on top of a base config.
PRESETS = {
    1: dict(mode="fixmatch_ce", double_strong_aug=False, add_self_loss=False),
    2: dict(mode="fixmatch_ce", double_strong_aug=True, add_self_loss=False),
    3: dict(mode="fixmatch_ce", double_strong_aug=True, add_self_loss=True),
    4: dict(mode="ssc", lambda_unconf=0.0, exclude_unconfident_anchors=True, add_self_loss=False),
    5: dict(mode="ssc", lambda_unconf=0.0, exclude_unconfident_anchors=True, add_self_loss=True),
    6: dict(mode="ssc", exclude_unconfident_anchors=False, add_self_loss=False),
}

PRESET_NAMES = {
    1: "fixmatch",
    2: "fixmatch+double_aug",
    3: "fixmatch+double_aug+self",
    4: "ssc_no_unconf",
    5: "ssc_no_unconf+self",
    6: "ssc",
}


def apply_preset(cfg, preset):
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset}; expected one of {sorted(PRESETS)}")
    return cfg.replace(**PRESETS[preset])


@dataclass
class StepMetrics:
    step: int
    loss: float
    mask_rate: float
    pseudo_acc: float
    lr: float
    wall_time: float = 0.0

    def values(self):
        return {"loss": self.loss, "mask_rate": self.mask_rate, "pseudo_acc": self.pseudo_acc, "lr": self.lr}


# -- optimisation --------------------------------------------------------


def cosine_lr(step, total, lr0):
    """``lr0 * cos(7 pi step / (16 total))``, positive over the whole run."""
    if total <= 0:
        return lr0
    return lr0 * math.cos(7.0 * math.pi * step / (16.0 * total))


@dataclass
class OptimizerState:
    velocity: list
    step: int = 0


def init_optimizer(params):
    return OptimizerState([np.zeros_like(a) for a in params.arrays()])


def sgd_update(params, grads, state, lr, momentum, weight_decay):
    """Heavy-ball momentum with decoupled weight decay on weight matrices
    only; prototypes are projected back onto the unit sphere afterwards."""
    new_arrays, new_vel = [], []
    for p, g, v, decay in zip(params.arrays(), grads.arrays(), state.velocity, params.weight_flags()):
        v = momentum * v + g
        upd = p - lr * v
        if decay and weight_decay:
            upd = upd - (lr * weight_decay) * p
        new_arrays.append(upd)
        new_vel.append(v)
    new_params = type(params).from_arrays(params, new_arrays)
    new_params.prototypes = row_normalize(new_params.prototypes)
    return new_params, OptimizerState(new_vel, state.step + 1)


# -- batch assembly --------------------------------------------------------


@dataclass
class StepInputs:
    """Raw (unaugmented) batch plus optional unlabeled ground truth."""

    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    u_true: np.ndarray = None


@dataclass
class AssembledBatch(ContrastiveBatch):
    trace: object = None
    pseudo: object = None
    block: np.ndarray = None


def anchor_weights(block, cfg):
    table = np.array([cfg.lambda_x, cfg.lambda_conf, cfg.lambda_unconf, cfg.lambda_proto])
    return table[block]


def assemble_ssc_batch(params, labeled, u_batch, cfg, rng, augment=None):
    """Stack ``[f(X); f(A(U)); f(A(U)); Z^c]`` with labels ``[y^x; y^u; y^c]``.

    The weak view only feeds pseudo-labelling and is embedded without a
    trace, so it never receives gradient.  ``labeled`` is ``(X, y^x)`` used
    as given.
    """
    augment = augment or AugmentConfig()
    x, y_x = labeled
    y_x = np.asarray(y_x, dtype=np.int64)
    mu_b = u_batch.shape[0]
    s1 = augment_strong(u_batch, augment, rng)
    s2 = augment_strong(u_batch, augment, rng)
    w = augment_weak(u_batch, augment, rng)

    z_w, _ = forward(params, w, record=False)
    pseudo = assign_pseudo_labels(z_w, params.prototypes, cfg.tau, cfg.t_prime, cfg.k)

    z_net, trace = forward(params, np.vstack([x, s1, s2]))
    z = np.vstack([z_net, params.prototypes])
    y = np.concatenate([y_x, pseudo.labels, np.arange(cfg.k, dtype=np.int64)])

    u_block = np.where(pseudo.confident, BLOCK_CONFIDENT, BLOCK_UNCONFIDENT)
    block = np.concatenate([
        np.full(x.shape[0], BLOCK_LABELED),
        u_block,
        u_block,
        np.full(cfg.k, BLOCK_PROTOTYPE),
    ])
    mask = np.ones(len(y), dtype=bool)
    if cfg.exclude_unconfident_anchors:
        mask &= block != BLOCK_UNCONFIDENT
    assert 2 * mu_b == pseudo.labels.shape[0]
    return AssembledBatch(z, y, anchor_weights(block, cfg), mask, trace=trace, pseudo=pseudo, block=block)


def _pseudo_accuracy(pseudo, u_true):
    if u_true is None:
        return float("nan")
    return float(np.mean(pseudo.hard_labels == np.asarray(u_true)))


def _finite_or_raise(value, grads, step, **diag):
    if not math.isfinite(value) or not all(np.isfinite(a).all() for a in grads.arrays()):
        raise NonFiniteLoss(f"non-finite loss or gradient at step {step}", dict(diag, loss=value, step=step))


def _apply(params, state, grads, cfg, step):
    lr = cosine_lr(step, cfg.total_steps, cfg.lr0)
    new_params, new_state = sgd_update(params, grads, state, lr, cfg.momentum, cfg.weight_decay)
    return new_params, new_state, lr


def _self_loss_on_views(z_s1, z_s2, temperature):
    """Self-supervised loss on two view blocks; grads split back per block."""
    m = z_s1.shape[0]
    if m == 0:
        return 0.0, np.zeros_like(z_s1), np.zeros_like(z_s2)
    out = losses.self_loss(np.vstack([z_s1, z_s2]), m, temperature)
    return out.value, out.grad_z[:m], out.grad_z[m:]


def training_step(params, state, inputs, cfg, rng, augment=None):
    """One SSC update: unified contrastive loss over labeled rows, both
    strong views of the unlabeled batch and the prototypes."""
    augment = augment or AugmentConfig()
    step = state.step
    x = augment_weak(inputs.x, augment, rng)
    batch = assemble_ssc_batch(params, (x, inputs.y), inputs.u, cfg, rng, augment)
    out = losses.ssc_loss(batch, cfg.t)
    n_net = batch.trace.z.shape[0]
    grad_net = out.grad_z[:n_net].copy()
    grad_proto = out.grad_z[n_net:]
    value = out.value

    if cfg.add_self_loss:
        b, mu_b = x.shape[0], inputs.u.shape[0]
        unconf = np.flatnonzero(~batch.pseudo.confident)
        i1, i2 = b + unconf, b + mu_b + unconf
        extra, g1, g2 = _self_loss_on_views(batch.z[i1], batch.z[i2], cfg.t)
        value += extra
        grad_net[i1] += g1
        grad_net[i2] += g2

    grads = backward(params, batch.trace, grad_net, grad_proto)
    _finite_or_raise(value, grads, step + 1, mask_rate=batch.pseudo.mask_rate)
    params, state, lr = _apply(params, state, grads, cfg, step)
    metrics = StepMetrics(step + 1, value, batch.pseudo.mask_rate, _pseudo_accuracy(batch.pseudo, inputs.u_true), lr)
    return params, state, metrics


def fixmatch_ce_step(params, state, inputs, cfg, rng, augment=None):
    """FixMatch baseline: CE on labeled rows plus confidence-masked CE on
    strong views, with the prototype head at temperature T' as classifier."""
    augment = augment or AugmentConfig()
    step = state.step
    x = augment_weak(inputs.x, augment, rng)
    u = inputs.u
    b, mu_b, k = x.shape[0], u.shape[0], cfg.k
    two_views = cfg.double_strong_aug or cfg.add_self_loss
    views = [augment_strong(u, augment, rng)]
    if two_views:
        views.append(augment_strong(u, augment, rng))
    w = augment_weak(u, augment, rng)

    z_w, _ = forward(params, w, record=False)
    pseudo = assign_pseudo_labels(z_w, params.prototypes, cfg.tau, cfg.t_prime, k)

    z, trace = forward(params, np.vstack([x] + views))
    protos = params.prototypes
    logits = prototype_logits(z, protos) / cfg.t_prime

    loss_x, g_x = losses.softmax_cross_entropy(logits[:b], inputs.y)
    # unsupervised CE uses the strong view(s) actually trained on: one view
    # normally, both views (averaged) with double augmentation
    n_views = 2 if cfg.double_strong_aug else 1
    u_rows = slice(b, b + n_views * mu_b)
    targets = np.tile(pseudo.hard_labels, n_views)
    mask = np.tile(pseudo.confident, n_views)
    loss_u, g_u = losses.cross_entropy_masked_grad(logits[u_rows], targets, mask)

    g_logits = np.zeros_like(logits)
    g_logits[:b] = g_x
    g_logits[u_rows] = g_u
    grad_z = g_logits @ protos / cfg.t_prime
    grad_proto = g_logits.T @ z / cfg.t_prime
    value = loss_x + loss_u

    if cfg.add_self_loss:
        extra, g1, g2 = _self_loss_on_views(z[b:b + mu_b], z[b + mu_b:b + 2 * mu_b], cfg.t)
        value += extra
        grad_z[b:b + mu_b] += g1
        grad_z[b + mu_b:b + 2 * mu_b] += g2

    grads = backward(params, trace, grad_z, grad_proto)
    _finite_or_raise(value, grads, step + 1, mask_rate=pseudo.mask_rate)
    params, state, lr = _apply(params, state, grads, cfg, step)
    metrics = StepMetrics(step + 1, value, pseudo.mask_rate, _pseudo_accuracy(pseudo, inputs.u_true), lr)
    return params, state, metrics


def labeled_only_batch(z_x, y_x, prototypes, cfg):
    """``[Z^x; Z^c]`` with labeled and prototype anchor weights."""
    k = prototypes.shape[0]
    z = np.vstack([z_x, prototypes])
    y = np.concatenate([np.asarray(y_x, dtype=np.int64), np.arange(k)])
    block = np.concatenate([np.full(z_x.shape[0], BLOCK_LABELED), np.full(k, BLOCK_PROTOTYPE)])
    return ContrastiveBatch(z, y, anchor_weights(block, cfg))


def labeled_only_step(params, state, inputs, cfg, rng, augment=None):
    """Baselines that never look at unlabeled data (SupCon or CE)."""
    augment = augment or AugmentConfig()
    step = state.step
    x = augment_weak(inputs.x, augment, rng)
    z, trace = forward(params, x)
    if cfg.mode == "supcon_labeled_only":
        out = losses.ssc_loss(labeled_only_batch(z, inputs.y, params.prototypes, cfg), cfg.t)
        n = z.shape[0]
        value, grad_z, grad_proto = out.value, out.grad_z[:n], out.grad_z[n:]
    else:
        logits = prototype_logits(z, params.prototypes) / cfg.t_prime
        value, g = losses.softmax_cross_entropy(logits, inputs.y)
        grad_z = g @ params.prototypes / cfg.t_prime
        grad_proto = g.T @ z / cfg.t_prime
    grads = backward(params, trace, grad_z, grad_proto)
    _finite_or_raise(value, grads, step + 1)
    params, state, lr = _apply(params, state, grads, cfg, step)
    return params, state, StepMetrics(step + 1, value, 0.0, float("nan"), lr)


STEP_FUNCTIONS = {
    "ssc": training_step,
    "fixmatch_ce": fixmatch_ce_step,
    "supcon_labeled_only": labeled_only_step,
    "ce_labeled_only": labeled_only_step,
}


# -- evaluation and loops ----------------------------------------------------


def predict(params, x):
    z, _ = forward(params, x, record=False)
    return np.argmax(prototype_logits(z, params.prototypes), axis=1)


def evaluate(params, val_x, val_y, cfg=None):
    """Top-1 accuracy of the prototype head (temperature-free argmax)."""
    val_y = np.asarray(val_y)
    if val_y.size == 0:
        raise ValueError("validation set is empty")
    return float(np.mean(predict(params, val_x) == val_y))


class CyclingLoader:
    """Endless minibatches of indices; reshuffles on every full pass."""

    def __init__(self, n, batch_size, rng):
        if n < 1:
            raise ValueError("cannot cycle over an empty set")
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self._queue = np.empty(0, dtype=np.int64)

    def next(self):
        while self._queue.size < self.batch_size:
            self._queue = np.concatenate([self._queue, self.rng.permutation(self.n)])
        idx, self._queue = self._queue[:self.batch_size], self._queue[self.batch_size:]
        return idx


def _json_number(v):
    v = float(v)
    return v if math.isfinite(v) else None


class MetricsWriter:
    """Newline-delimited JSON records, one per event.

    Schema: ``{"event": str, "step": int, "values": {name: number|null}}``;
    the leading ``config`` record carries the effective settings instead of
    ``values``.
    """

    def __init__(self, path=None, record_wall_time=False):
        self.path = path
        self.records = []
        self.record_wall_time = record_wall_time
        self._fh = open(path, "w", encoding="utf-8") if path else None

    def write(self, record):
        self.records.append(record)
        if self._fh:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def config(self, settings):
        self.write({"event": "config", "step": 0, "config": settings})

    def step(self, metrics):
        values = {k: _json_number(v) for k, v in metrics.values().items()}
        if self.record_wall_time:
            values["wall_time"] = metrics.wall_time
        self.write({"event": "step", "step": metrics.step, "values": values})

    def eval(self, step, accuracy):
        self.write({"event": "eval", "step": step, "values": {"accuracy": _json_number(accuracy)}})

    def close(self):
        if self._fh:
            self._fh.flush()
            self._fh.close()
            self._fh = None


@dataclass
class ExperimentResult:
    params: object
    steps: list = field(default_factory=list)
    evals: list = field(default_factory=list)  # (step, accuracy)

    @property
    def final_accuracy(self):
        return self.evals[-1][1] if self.evals else float("nan")


def run_experiment(cfg, split, augment=None, writer=None, params=None, settings=None):
    """Train for ``cfg.total_steps`` steps on a SemiSplit.

    Emits one step record per update and an eval record at every epoch
    boundary and after the last step.  Metrics written before an error are
    flushed (with a trailing ``abort`` record) before the error propagates.
    """
    augment = augment or AugmentConfig()
    writer = writer or MetricsWriter()
    root = SeededRng(cfg.seed)
    if params is None:
        dims = [split.labeled_x.shape[1], *cfg.hidden_dims]
        params = init_params(dims, cfg.k, cfg.embed_dim, root.child("init"))
    state = init_optimizer(params)
    step_fn = STEP_FUNCTIONS[cfg.mode]
    lab = CyclingLoader(len(split.labeled_y), cfg.b, root.child("labeled_loader"))
    unl = CyclingLoader(split.unlabeled.shape[0], cfg.mu * cfg.b, root.child("unlabeled_loader"))
    aug_rng = root.child("augment")
    u_true = split.unlabeled_y
    result = ExperimentResult(params)

    writer.config(settings if settings is not None else {"train": cfg.to_dict(), "augment": dataclasses.asdict(augment)})
    try:
        if cfg.total_steps == 0:
            acc = evaluate(params, split.val_x, split.val_y, cfg)
            writer.eval(0, acc)
            result.evals.append((0, acc))
        for _ in range(cfg.total_steps):
            li, ui = lab.next(), unl.next()
            inputs = StepInputs(
                split.labeled_x[li], split.labeled_y[li], split.unlabeled[ui],
                None if u_true is None else u_true[ui],
            )
            t0 = time.perf_counter()
            params, state, metrics = step_fn(params, state, inputs, cfg, aug_rng, augment)
            metrics.wall_time = time.perf_counter() - t0
            writer.step(metrics)
            result.steps.append(metrics)
            if metrics.step % cfg.steps_per_epoch == 0 or metrics.step == cfg.total_steps:
                acc = evaluate(params, split.val_x, split.val_y, cfg)
                writer.eval(metrics.step, acc)
                result.evals.append((metrics.step, acc))
    except Exception as exc:
        writer.write({"event": "abort", "step": state.step, "values": {}, "error": f"{type(exc).__name__}: {exc}"})
        raise
    finally:
        writer.close()
    result.params = params
    return result
