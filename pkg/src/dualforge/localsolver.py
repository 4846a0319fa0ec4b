"""Per-worker mini-batch dual ascent on the local dual objective.

A worker owns the dual variables of its shard and a local dual direction
``u_local``; the local primal iterate is ``grad f*(u_local)``.  Between
synchronizations ``u_local`` absorbs the worker's own updates, and the
broadcast global direction overwrites it at every sync.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from dualforge import rng as _rng

EXACT = "exact"
CONSERVATIVE_SMOOTH = "conservative-smooth"
CONSERVATIVE_LIPSCHITZ = "conservative-lipschitz"
MODES = (EXACT, CONSERVATIVE_SMOOTH, CONSERVATIVE_LIPSCHITZ)


class ContractViolation(RuntimeError):
    """A protocol precondition was broken (e.g. stepping an unsynchronized worker)."""


@dataclass(frozen=True, eq=False)
class Shard:
    """Read-only view of the examples assigned to one worker."""

    worker_id: int
    indices: np.ndarray  # global example ids, in partition order
    rows_idx: tuple
    rows_val: tuple
    labels: np.ndarray
    squared_norms: np.ndarray
    csr: object
    csr_t: object  # transpose, kept in CSR for fast matvecs
    d: int

    @classmethod
    def from_dataset(cls, dataset, indices, worker_id=0):
        indices = np.asarray(indices, dtype=np.int64)
        exs = [dataset.examples[i] for i in indices.tolist()]
        csr = dataset.csr[indices]
        return cls(
            worker_id=int(worker_id),
            indices=indices,
            rows_idx=tuple(ex.indices for ex in exs),
            rows_val=tuple(ex.values for ex in exs),
            labels=np.array([ex.label for ex in exs], dtype=np.float64),
            squared_norms=np.array([ex.squared_norm for ex in exs], dtype=np.float64),
            csr=csr,
            csr_t=csr.T.tocsr(),
            d=dataset.d,
        )

    @property
    def n_local(self):
        return int(self.indices.size)


@dataclass(eq=False)
class WorkerState:
    alpha: np.ndarray
    u_local: np.ndarray
    v_local_raw: np.ndarray
    synced: bool = True

    @classmethod
    def zeros(cls, shard):
        return cls(np.zeros(shard.n_local), np.zeros(shard.d), np.zeros(shard.d))

    @classmethod
    def warm(cls, shard, reg, alpha_local, u):
        alpha_local = np.array(alpha_local, dtype=np.float64)
        return cls(alpha_local, np.array(u, dtype=np.float64), raw_direction(shard, reg, alpha_local))


def raw_direction(shard, reg, alpha_local):
    """``sum_i x_i alpha_i / (lambda_eff n_l)`` from scratch."""
    if shard.n_local == 0:
        return np.zeros(shard.d)
    return (shard.csr_t @ np.asarray(alpha_local, dtype=np.float64)) / (reg.lambda_eff * shard.n_local)


@dataclass(frozen=True)
class LocalStepConfig:
    sp: float = 1.0
    mode: str = EXACT
    repeat: int = 1
    s_override: float = None
    q_override: float = None
    R: float = None  # bound on squared example norms; defaults to the shard maximum
    track_increase: bool = False

    def __post_init__(self):
        if not 0.0 < self.sp <= 1.0:
            raise ValueError("sp must lie in (0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"unknown local mode {self.mode!r}")
        if self.repeat < 1:
            raise ValueError("repeat must be at least 1")

    def batch_size(self, n_local):
        return max(1, int(math.floor(self.sp * n_local + 0.5)))


@dataclass
class LocalResult:
    delta_v: np.ndarray
    dual_increase_lb: float = None
    batch: int = 0


def conservative_smooth_step(loss, reg, n_local, batch, R):
    """``gamma lambda n_l / (gamma lambda n_l + M_l R)``."""
    g = loss.info.gamma
    num = g * reg.lambda_eff * n_local
    return num / (num + batch * R)


def local_step(state, shard, reg, loss, cfg, gen):
    """One round of local dual ascent; mutates ``state`` and returns the direction change."""
    if not state.synced:
        raise ContractViolation(f"worker {shard.worker_id} stepped before receiving the last broadcast")
    n_l = shard.n_local
    if n_l == 0:
        return LocalResult(np.zeros(shard.d))
    batch = cfg.batch_size(n_l)
    order = gen.permutation(n_l)[:batch]
    if cfg.mode == EXACT:
        dv, inc = _exact_pass(state, shard, reg, loss, order, cfg.track_increase)
        for _ in range(cfg.repeat - 1):
            d2, i2 = _exact_pass(state, shard, reg, loss, order[gen.permutation(batch)], cfg.track_increase)
            dv += d2
            if inc is not None:
                inc += i2
    else:
        dv = _conservative_pass(state, shard, reg, loss, order, cfg)
        inc = None
    state.v_local_raw += dv
    state.synced = False
    return LocalResult(dv, inc, batch)


def _exact_pass(state, shard, reg, loss, order, track):
    scale = 1.0 / (reg.lambda_eff * shard.n_local)
    thr = reg.threshold
    u = state.u_local
    alpha = state.alpha
    dv = np.zeros(shard.d)
    rows_idx, rows_val = shard.rows_idx, shard.rows_val
    labels, sq = shard.labels, shard.squared_norms
    increase = 0.0 if track else None
    maximize = loss.coord_maximize
    for pos in order.tolist():
        idx = rows_idx[pos]
        x = rows_val[pos]
        if idx.size:
            us = u[idx]
            if thr:
                us = np.sign(us) * np.maximum(np.abs(us) - thr, 0.0)
            a = float(x @ us)
        else:
            a = 0.0
        s = sq[pos] * scale
        y = labels[pos]
        old = alpha[pos]
        new = maximize(old, a, s, y)
        delta = new - old
        if delta != 0.0:
            if track:
                increase += loss.coord_objective(old, delta, a, s, y) - loss.coord_objective(old, 0.0, a, s, y)
            alpha[pos] = new
            if idx.size:
                step = x * (delta * scale)
                u[idx] += step
                dv[idx] += step
    return dv, increase


def _conservative_pass(state, shard, reg, loss, order, cfg):
    n_l = shard.n_local
    batch = order.size
    w = reg.grad_conj(state.u_local)
    y = shard.labels[order]
    target = -np.asarray(loss.deriv((shard.csr @ w)[order], y))
    if cfg.mode == CONSERVATIVE_SMOOTH:
        if cfg.s_override is not None:
            step = cfg.s_override
        else:
            if loss.info.smoothness == 0.0:
                raise ValueError("conservative-smooth steps need a smooth loss")
            R = cfg.R if cfg.R is not None else float(shard.squared_norms.max())
            step = conservative_smooth_step(loss, reg, n_l, batch, R)
    else:
        q = cfg.q_override if cfg.q_override is not None else batch / n_l
        step = q * n_l / batch
    old = state.alpha[order]
    new = old + step * (target - old)
    full = np.zeros(n_l)
    full[order] = new - old
    state.alpha[order] = new
    dv = (shard.csr_t @ full) / (reg.lambda_eff * n_l)
    state.u_local += dv
    return dv


def apply_broadcast(state, u_global):
    """Adopt the synchronized global direction."""
    state.u_local = np.array(u_global, dtype=np.float64)
    state.synced = True


def local_primal_terms(state, shard, loss, w):
    """``(sum_i phi_i(x_i . w), sum_i phi_i*(-alpha_i))`` over the shard."""
    if shard.n_local == 0:
        return 0.0, 0.0
    margins = shard.csr @ np.asarray(w, dtype=np.float64)
    loss_sum = float(np.sum(loss.value(margins, shard.labels)))
    conj_sum = float(np.sum(loss.conj(state.alpha, shard.labels)))
    return loss_sum, conj_sum


def local_dual_value(state, shard, reg, loss):
    """Shifted local dual at the worker's current ``(alpha, u_local)``."""
    conj_sum = float(np.sum(loss.conj(state.alpha, shard.labels))) if shard.n_local else 0.0
    n_l = shard.n_local
    return -conj_sum - reg.lambda_eff * n_l * reg.conj_value(state.u_local) + reg.stage_constant(n_l, shard.d)


def worker_gen(seed, worker_id, stage, round_):
    return _rng.worker_stream(seed, worker_id, stage, round_)
