"""Independent reference computations for cross-checking the distributed solver.

Nothing here touches the coordinator or the transport.  The proximal-gradient
reference is a different algorithm family (accelerated primal method with a
dual certificate) so agreement with DADM is evidence, not tautology.
"""

import math
from dataclasses import dataclass

import numpy as np

from dualforge import rng as _rng
from dualforge.losses import Hinge
from dualforge.regularizer import soft_threshold


def grid_sup(f, lo, hi, step):
    """Maximum of ``f`` on the grid ``lo, lo+step, ..., hi`` and its argmax.

    For an ``L``-Lipschitz ``f`` the true supremum on ``[lo, hi]`` exceeds the
    returned value by at most ``L * step / 2``.
    """
    k = int(math.floor((hi - lo) / step + 1e-9))
    grid = lo + step * np.arange(k + 1)
    if grid[-1] < hi:
        grid = np.append(grid, hi)
    vals = np.asarray(f(grid), dtype=np.float64)
    if vals.ndim == 0:
        vals = np.full(grid.shape, float(vals))
    j = int(np.argmax(vals))
    return float(vals[j]), float(grid[j])


def central_difference(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2.0 * h)


@dataclass
class Certificate:
    w_star: np.ndarray
    primal_at_star: float
    dual_at_certificate: float
    certified_gap: float
    iterations: int


def primal_objective(dataset, reg, loss, w):
    return float(np.sum(loss.value(dataset.csr @ w, dataset.labels))) + reg.primal_value(w, dataset.n)


def dual_certificate(dataset, reg, loss, w):
    """Dual value at ``alpha_i = -phi_i'(x_i . w)``."""
    X, y, n = dataset.csr, dataset.labels, dataset.n
    alpha = -np.asarray(loss.deriv(X @ w, y))
    v = np.asarray(X.T @ alpha) / (reg.lam * n)
    return -float(np.sum(loss.conj(alpha, y))) - reg.lam * n * reg.conj_value(v), alpha


def prox_grad_reference(dataset, reg, loss, tol=1e-10, max_iter=200_000, check_every=10):
    """Accelerated proximal gradient on ``P(w)/n`` until the certified gap is at most ``tol``.

    ``reg`` must be unshifted.  Uses the strongly convex momentum
    ``(1 - sqrt(q)) / (1 + sqrt(q))`` with ``q = lam / L``, restarting when
    the objective increases.
    """
    if isinstance(loss, Hinge):
        raise ValueError("the reference solver needs a smooth loss")
    if reg.kappa:
        raise ValueError("the reference solver works on the unshifted problem")
    n, d = dataset.n, dataset.d
    if n * d > 1_000_000:
        raise ValueError("problem too large for the dense reference solver")
    X = dataset.csr.toarray()
    y = dataset.labels
    lam, mu = reg.lam, reg.mu
    smooth = loss.info.smoothness
    sigma = np.linalg.norm(X, 2) if n and d else 0.0
    L = smooth * sigma * sigma / n + lam
    step = 1.0 / L
    q = lam / L
    momentum = (1.0 - math.sqrt(q)) / (1.0 + math.sqrt(q))

    def objective(w):
        return float(np.sum(loss.value(X @ w, y))) / n + 0.5 * lam * float(w @ w) + mu * float(np.abs(w).sum())

    def grad(w):
        return X.T @ np.asarray(loss.deriv(X @ w, y)) / n + lam * w

    w = np.zeros(d)
    z = w.copy()
    f_prev = objective(w)
    best = None
    restarted = True
    for it in range(1, max_iter + 1):
        w_next = soft_threshold(z - step * grad(z), mu * step)
        f_next = objective(w_next)
        if f_next > f_prev and not restarted:
            z = w.copy()  # restart; a plain step from w is then taken even if rounding makes it look worse
            restarted = True
            continue
        restarted = False
        z = w_next + momentum * (w_next - w)
        w, f_prev = w_next, f_next
        if it % check_every == 0 or it == max_iter:
            P = primal_objective(dataset, reg, loss, w)
            D, _ = dual_certificate(dataset, reg, loss, w)
            best = Certificate(w.copy(), P, D, P - D, it)
            if P - D <= tol:
                return best
    raise RuntimeError(f"reference solver hit {max_iter} iterations with gap {best.certified_gap if best else float('nan'):.3e}")


def single_machine_sdca(dataset, reg, loss, epochs, seed, order=None, stage=0, alpha0=None, round_offset=0):
    """Plain sequential proximal SDCA on the single-machine dual.

    Each epoch visits every example once in the order drawn from the same
    per-round stream a one-worker DADM run uses; ``order`` gives the example
    ids in partition order (defaults to ``0..n-1``).  Returns the list of
    ``(alpha, w)`` after epochs ``0..epochs`` (example order) and the matching
    list of ``(P, D)``.  ``alpha0`` (example order) warm-starts the duals and
    ``round_offset`` shifts the epoch counter used to key the visiting order.
    """
    n, d = dataset.n, dataset.d
    order = np.arange(n) if order is None else np.asarray(order, dtype=np.int64)
    rows = [dataset.examples[i] for i in order.tolist()]
    y = np.array([ex.label for ex in rows], dtype=np.float64)
    sq = np.array([ex.squared_norm for ex in rows], dtype=np.float64)
    scale = 1.0 / (reg.lambda_eff * n)
    thr = reg.threshold
    alpha = np.zeros(n) if alpha0 is None else np.asarray(alpha0, dtype=np.float64)[order].copy()  # partition order
    v = reg.direction_offset(d).copy()
    if alpha0 is not None:
        v += np.asarray(dataset.csr.T @ np.asarray(alpha0, dtype=np.float64)) * scale
    history, values = [], []

    def snapshot():
        a = np.zeros(n)
        a[order] = alpha
        w = reg.grad_conj(v)
        history.append((a, w))
        P = float(np.sum(loss.value(dataset.csr @ w, dataset.labels))) + reg.primal_value(w, n)
        D = -float(np.sum(loss.conj(a, dataset.labels))) - reg.lambda_eff * n * reg.conj_value(v) + reg.stage_constant(n, d)
        values.append((P, D))

    snapshot()
    for epoch in range(1, epochs + 1):
        visit = _rng.minibatch_order(seed, 0, stage, round_offset + epoch, n, n)
        for pos in visit.tolist():
            ex = rows[pos]
            idx, x = ex.indices, ex.values
            if idx.size:
                vs = v[idx]
                if thr:
                    vs = np.sign(vs) * np.maximum(np.abs(vs) - thr, 0.0)
                a = float(x @ vs)
            else:
                a = 0.0
            old = alpha[pos]
            new = loss.coord_maximize(old, a, sq[pos] * scale, y[pos])
            delta = new - old
            if delta != 0.0:
                alpha[pos] = new
                if idx.size:
                    v[idx] += x * (delta * scale)
        snapshot()
    return history, values
