"""Fixed-seed property suites behind ``semisupcon verify``.

Each suite returns a SuiteResult carrying the largest error it observed and
the tolerance it was held to.  The suites are deliberately small so the
whole command finishes in well under a minute.
"""
from dataclasses import dataclass

import numpy as np

from . import losses, oracles
from .losses import ContrastiveBatch
from .model import backward, forward, init_params
from .numerics import SeededRng, row_normalize
from .pseudo import assign_pseudo_labels, prototype_probabilities


@dataclass
class SuiteResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    cases: int

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} max_err={self.max_error:.3e}  tol={self.tolerance:.0e}  cases={self.cases}"


def random_batch(rng, n_max=16, d_max=8, k_max=5, with_weights=True):
    """Random unit-row contrastive batch guaranteed to have a valid anchor."""
    while True:
        n = int(rng.integers(2, n_max + 1))
        d = int(rng.integers(2, d_max + 1))
        k = int(rng.integers(1, k_max + 1))
        z = row_normalize(rng.normal(size=(n, d)))
        y = rng.integers(0, k, size=n)
        lam = rng.uniform(0.0, 2.0, size=n) if with_weights else np.ones(n)
        mask = rng.random(n) < 0.8 if with_weights else np.ones(n, dtype=bool)
        batch = ContrastiveBatch(z, y, lam, mask)
        anchors = batch.anchor_mask & (batch.positive_counts() > 0)
        if anchors.any() and batch.lam[anchors].sum() > 0:
            return batch


def suite_oracle(cases=100, seed=11):
    rng = SeededRng(seed)
    worst = 0.0
    for c in range(cases):
        t = (0.01, 0.1, 1.0)[c % 3]
        batch = random_batch(rng)
        ref = oracles.naive_ssc(batch.z.tolist(), batch.y.tolist(), batch.lam.tolist(), batch.anchor_mask.tolist(), t)
        worst = max(worst, abs(losses.ssc_loss(batch, t).value - ref))
        plain = random_batch(rng, with_weights=False)
        ref = oracles.naive_supcon(plain.z.tolist(), plain.y.tolist(), t)
        worst = max(worst, abs(losses.supcon_loss(plain.z, plain.y, t).value - ref))
    return SuiteResult("oracle_equivalence", worst < 1e-9, worst, 1e-9, cases)


def anchored_prototype_ssc(z_x, y, prototypes):
    """Mean over examples of the SSC loss on ``[z_i; Z^c]`` anchored at z_i."""
    values = [losses.ssc_loss(losses.anchored_prototype_batch(z_i, y_i, prototypes), 1.0).value
              for z_i, y_i in zip(z_x, y)]
    return float(np.mean(values))


def suite_ce_prototype(cases=100, seed=12):
    rng = SeededRng(seed)
    worst = 0.0
    for _ in range(cases):
        b, d, k = int(rng.integers(1, 12)), int(rng.integers(2, 9)), int(rng.integers(2, 6))
        z = row_normalize(rng.normal(size=(b, d)))
        protos = row_normalize(rng.normal(size=(k, d)))
        y = rng.integers(0, k, size=b)
        ce = losses.ce_prototype_loss(z, y, protos).value
        worst = max(worst, abs(ce - anchored_prototype_ssc(z, y, protos)))
    return SuiteResult("ce_prototype_equivalence", worst < 1e-9, worst, 1e-9, cases)


def suite_self_identity(cases=100, seed=13):
    rng = SeededRng(seed)
    worst = 0.0
    for c in range(cases):
        mu_b = int(rng.integers(1, 9))
        d = int(rng.integers(2, 9))
        t = (0.01, 0.1, 1.0)[c % 3]
        z_u = row_normalize(rng.normal(size=(2 * mu_b, d)))
        a = losses.self_loss(z_u, mu_b, t).value
        b = losses.supcon_loss(z_u, np.tile(np.arange(mu_b), 2), t).value
        worst = max(worst, abs(a - b))
    return SuiteResult("self_loss_identity", worst < 1e-12, worst, 1e-12, cases)


def _corrupt(grads, corrupt):
    if corrupt:
        grads = [g.copy() for g in grads]
        grads[0].flat[0] += 1.0 + abs(grads[0].flat[0])
    return grads


def suite_gradient_loss(cases=10, seed=14, corrupt=False):
    rng = SeededRng(seed)
    worst = 0.0
    for c in range(cases):
        t = (0.1, 1.0, 0.5)[c % 3]
        batch = random_batch(rng, n_max=10, d_max=5, k_max=3)
        z = batch.z.copy()
        f = lambda: losses.ssc_loss(ContrastiveBatch(z, batch.y, batch.lam, batch.anchor_mask), t).value
        analytic = _corrupt([losses.ssc_loss(batch, t).grad_z], corrupt)
        numeric = oracles.central_difference(f, [z])
        worst = max(worst, oracles.max_relative_error(analytic, numeric))
        # prototype cross-entropy: gradients w.r.t. data rows and prototype rows
        b, d, k = int(rng.integers(1, 6)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
        zx = row_normalize(rng.normal(size=(b, d)))
        protos = row_normalize(rng.normal(size=(k, d)))
        y = rng.integers(0, k, size=b)
        out = losses.ce_prototype_loss(zx, y, protos)
        numeric = oracles.central_difference(lambda: losses.ce_prototype_loss(zx, y, protos).value, [zx, protos])
        worst = max(worst, oracles.max_relative_error([out.grad_z, out.extra["grad_prototypes"]], numeric))
    return SuiteResult("gradient_losses", worst < 1e-4, worst, 1e-4, cases)


def composed_loss(params, x, y_x, temperature):
    """SSC loss of ``[f(x); Z^c]`` with labels ``[y_x; 0..K)``, plus grads."""
    z, trace = forward(params, x)
    k = params.k
    batch = ContrastiveBatch(np.vstack([z, params.prototypes]), np.concatenate([y_x, np.arange(k)]))
    out = losses.ssc_loss(batch, temperature)
    n = z.shape[0]
    grads = backward(params, trace, out.grad_z[:n], out.grad_z[n:])
    return out.value, grads


def suite_gradient_model(cases=10, seed=15, corrupt=False):
    rng = SeededRng(seed)
    worst = 0.0
    for c in range(cases):
        in_dim, hid, d, k = (int(rng.integers(2, 5)) for _ in range(4))
        k = max(k, 2)
        params = init_params([in_dim, hid + 2], k, d, rng.child(("net", c)))
        # random biases keep tiny ReLU nets away from all-dead (zero) outputs
        for layer in params.encoder + params.projection:
            layer[1][:] = rng.normal(0.0, 0.5, size=layer[1].shape)
        n = int(rng.integers(3, 8))
        x = rng.normal(size=(n, in_dim))
        y = rng.integers(0, k, size=n)
        t = (0.1, 0.5, 1.0)[c % 3]
        _, grads = composed_loss(params, x, y, t)
        arrays = params.arrays()
        numeric = oracles.central_difference(lambda: composed_loss(params, x, y, t)[0], arrays)
        analytic = _corrupt(grads.arrays(), corrupt)
        worst = max(worst, oracles.max_relative_error(analytic, numeric))
    return SuiteResult("gradient_model", worst < 1e-4, worst, 1e-4, cases)


def check_pseudo_contract(z_w, protos, tau, t_prime):
    """Number of violated pseudo-label invariants for one input."""
    k = protos.shape[0]
    res = assign_pseudo_labels(z_w, protos, tau, t_prime, k)
    mu_b = z_w.shape[0]
    lab = res.labels
    bad = 0
    bad += int(res.confident.sum() + (~res.confident).sum() != mu_b)
    bad += int(not np.array_equal(lab[:mu_b], lab[mu_b:]))
    first = lab[:mu_b]
    bad += int(not np.array_equal(first < k, res.confident))
    bad += int(not np.array_equal(first[~res.confident], k + np.flatnonzero(~res.confident)))
    pmax = res.probabilities.max(axis=1)
    bad += int(not np.array_equal(res.confident, pmax > tau))
    bad += int(not np.allclose(res.probabilities.sum(axis=1), 1.0, atol=1e-9))
    # every unconfident strong view has exactly one positive: its sibling
    y_all = np.concatenate([lab, np.arange(k)])
    counts = ContrastiveBatch(np.ones((len(y_all), 1)), y_all).positive_counts()
    unconf = np.flatnonzero(~res.confident)
    bad += int(not np.all(counts[unconf] == 1) or not np.all(counts[mu_b + unconf] == 1))
    return bad


def suite_pseudo(cases=100, seed=16):
    rng = SeededRng(seed)
    violations = 0
    for c in range(cases):
        mu_b, d, k = int(rng.integers(1, 12)), int(rng.integers(2, 8)), int(rng.integers(2, 6))
        z_w = row_normalize(rng.normal(size=(mu_b, d)))
        protos = row_normalize(rng.normal(size=(k, d)))
        tau = float(rng.uniform(0.3, 0.99))
        t_prime = float(rng.choice([0.02, 0.04, 0.1, 0.5]))
        violations += check_pseudo_contract(z_w, protos, tau, t_prime)
        # max probability strictly decreases with T' for non-uniform similarities
        pm = [prototype_probabilities(z_w, protos, tp).max(axis=1) for tp in (0.05, 0.1, 0.2, 0.4, 0.8)]
        violations += int(not all(np.all(a > b) for a, b in zip(pm, pm[1:])))
    return SuiteResult("pseudo_label_contract", violations == 0, float(violations), 0.0, cases)


def run_suites(corrupt_gradient=False):
    return [
        suite_oracle(),
        suite_ce_prototype(),
        suite_self_identity(),
        suite_gradient_loss(corrupt=corrupt_gradient),
        suite_gradient_model(corrupt=corrupt_gradient),
        suite_pseudo(),
    ]
