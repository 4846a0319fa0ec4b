"""Distributed alternating dual maximization: the coordinator loop.

Each round is one superstep.  The coordinator broadcasts the last change of
the global dual direction; every worker applies it, reports its loss and
conjugate sums at the synchronized point (so the duality gap of the previous
state rides along with the round), runs its local step and sends back its
direction change.  With no second regularizer the optimal consensus
multipliers give ``u_l = u`` for every worker after the sync, so the global
step is just the ``n_l / n``-weighted sum of the local changes, reduced in
ascending worker order.
"""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from dualforge import comm, localsolver
from dualforge.bounds import theory_bounds  # noqa: F401  (re-exported)
from dualforge.localsolver import EXACT, LocalStepConfig, Shard, WorkerState

log = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    pass


@dataclass
class RunConfig:
    target_gap: float = 1e-6  # absolute duality gap
    max_rounds: int = 100
    sp: float = 1.0
    seed: int = 0
    mode: str = EXACT
    repeat: int = 1
    s_override: float = None
    q_override: float = None
    tail_average: int = None  # T0; averaging over rounds T0+1..T when set
    gap_every: int = 1
    transport: str = "inline"
    timeout: float = 60.0
    diagnostics: bool = False
    # Acc-DADM plumbing: stage id, global round/comms offsets, the unshifted
    # problem for reporting, and an early exit on its gap.
    stage: int = 0
    round_offset: int = 0
    comm_offset: int = None  # defaults to round_offset
    original: object = None
    original_target: float = None
    clock_start: float = None

    def __post_init__(self):
        if not self.target_gap > 0:
            raise ValueError("target gap must be positive")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be non-negative")
        if self.gap_every < 1:
            raise ValueError("gap_every must be at least 1")


@dataclass
class WarmStart:
    alpha: np.ndarray  # example order
    u: np.ndarray


@dataclass
class GlobalState:
    u: np.ndarray  # working dual direction, the argument of grad f*
    v_raw: np.ndarray  # sum_i x_i alpha_i / (lambda_eff n)
    w: np.ndarray
    round: int = 0


@dataclass
class RoundRecord:
    round: int
    stage: int
    local_round: int
    comms: int
    epoch_equiv: float
    time_ms: float
    primal: float
    dual: float
    gap: float
    orig_primal: float
    orig_dual: float
    orig_gap: float
    kappa: float = 0.0
    note: str = ""
    gap_decomposition_error: float = None
    beta_sum_max: float = None
    carrier_error: float = None


@dataclass
class RunResult:
    w: np.ndarray
    alpha: np.ndarray
    u: np.ndarray
    v_raw: np.ndarray
    primal: float
    dual: float
    gap: float
    orig_primal: float
    orig_dual: float
    orig_gap: float
    rounds: int
    converged: bool
    trace: list
    comm: comm.CommStats
    w_bar: np.ndarray = None
    alpha_bar: np.ndarray = None
    stopped_by: str = ""


@dataclass
class WorkerReport:
    """What the coordinator knows about one worker right after a sync."""

    worker_id: int
    n_ell: int
    loss_sum: float
    conj_sum: float
    v_local_raw: np.ndarray = None


def apply_delta(u, delta):
    """``u += delta`` on the nonzero entries of ``delta`` only (keeps signed zeros)."""
    nz = np.flatnonzero(delta)
    if nz.size:
        u[nz] += delta[nz]


def aggregate(results, n):
    """``sum_l (n_l / n) dv_l`` in ascending worker order."""
    total = np.zeros_like(results[0].delta_v)
    for res in sorted(results, key=lambda r: r.worker_id):
        total += (res.n_ell / n) * res.delta_v
    return total


def primal_dual(reg, reports, w, u, n, d):
    loss_sum = math.fsum(r.loss_sum for r in reports)
    conj_sum = math.fsum(r.conj_sum for r in reports)
    P = loss_sum + reg.primal_value(w, n)
    D = -conj_sum - reg.lambda_eff * n * reg.conj_value(u) + reg.stage_constant(n, d)
    return P, D


def duality_gap(state, reports, reg, n):
    """``(P, D, gap)`` of the current (possibly shifted) objective at a synchronized state."""
    P, D = primal_dual(reg, reports, state.w, state.u, n, state.u.size)
    return P, D, P - D


def original_gap(state, reports, reg, n):
    """Gap of the unshifted problem at the stage iterate.

    The dual side uses ``v = sum_i x_i alpha_i / (lam n)``, recovered from the
    raw direction without touching data.
    """
    base = reg.base()
    loss_sum = math.fsum(r.loss_sum for r in reports)
    conj_sum = math.fsum(r.conj_sum for r in reports)
    P = loss_sum + base.primal_value(state.w, n)
    v = state.v_raw * (reg.lambda_eff / base.lam) if reg.kappa else state.v_raw
    D = -conj_sum - base.lam * n * base.conj_value(v)
    return P, D, P - D


def compute_beta(state, reports, reg, n):
    """Optimal consensus multipliers ``beta_l = lambda_eff n_l (v_l - v)``."""
    return [reg.lambda_eff * r.n_ell * (r.v_local_raw - state.v_raw) for r in reports]


def local_gaps(state, reports, reg, n):
    """Per-worker ``P_l(w | beta_l) - D_l(alpha_l | beta_l)`` with optimal ``beta``."""
    betas = compute_beta(state, reports, reg, n)
    d = state.w.size
    offset = reg.direction_offset(d)
    out = []
    for r, beta in zip(reports, betas):
        lam_n = reg.lambda_eff * r.n_ell
        P_l = r.loss_sum + reg.primal_value(state.w, r.n_ell) + float(beta @ state.w)
        u_l = r.v_local_raw - beta / lam_n + offset
        D_l = -r.conj_sum - lam_n * reg.conj_value(u_l) + reg.stage_constant(r.n_ell, d)
        out.append(P_l - D_l)
    return out, betas


def tail_average(trace, T0):
    """Mean of iterates for rounds ``T0+1..T``; ``trace[r-1]`` holds round ``r``."""
    T = len(trace)
    if not 0 <= T0 < T:
        raise ValueError(f"need 0 <= T0 < {T} stored rounds, got T0={T0}")
    tail = [np.asarray(x, dtype=np.float64) for x in trace[T0:]]
    return sum(tail[1:], tail[0].copy()) / len(tail)


def raw_direction_full(dataset, reg, alpha):
    return np.asarray(dataset.csr.T @ np.asarray(alpha, dtype=np.float64)) / (reg.lambda_eff * dataset.n)


def evaluate_full(dataset, reg, loss, alpha, w=None):
    """``(P, D, gap)`` computed directly from data; ``w`` defaults to ``grad f*(u(alpha))``."""
    n, d = dataset.n, dataset.d
    u = raw_direction_full(dataset, reg, alpha) + reg.direction_offset(d)
    if w is None:
        w = reg.grad_conj(u)
    P = float(np.sum(loss.value(dataset.csr @ w, dataset.labels))) + reg.primal_value(w, n)
    D = (
        -float(np.sum(loss.conj(alpha, dataset.labels)))
        - reg.lambda_eff * n * reg.conj_value(u)
        + reg.stage_constant(n, d)
    )
    return P, D, P - D


class WorkerEndpoint:
    """Worker side of the protocol: owns one shard's dual state."""

    def __init__(self, shard, state, reg, loss, local_cfg, seed, stage, diagnostics=False, tail_from=None):
        self.shard = shard
        self.state = state
        self.reg = reg
        self.loss = loss
        self.local_cfg = local_cfg
        self.seed = seed
        self.stage = stage
        self.diagnostics = diagnostics
        self.u_synced = state.u_local.copy()
        self._undo = None
        self.tail_from = tail_from
        self.alpha_sum = np.zeros_like(state.alpha)
        self.tail_count = 0

    def handle(self, frame):
        kind = frame[4]
        if kind in (comm.STEP, comm.EVAL):
            return self._round(comm.RoundBroadcast.decode(frame))
        _, meta, _ = comm.decode_frame(frame)
        if kind == comm.SNAPSHOT:
            st = self.state
            vecs = [("alpha", st.alpha), ("v_local_raw", st.v_local_raw), ("u_local", st.u_local), ("alpha_sum", self.alpha_sum)]
            m = {"worker_id": self.shard.worker_id, "d": self.shard.d, "len_alpha": st.alpha.size,
                 "len_alpha_sum": st.alpha.size, "tail_count": self.tail_count}
            return comm.encode_frame(comm.SNAPSHOT_REPLY, m, vecs)
        if kind == comm.ROLLBACK:
            if self._undo is not None:
                alpha, v_raw, u_local, alpha_sum, count = self._undo
                st = self.state
                st.alpha, st.v_local_raw, st.u_local = alpha, v_raw, u_local
                st.synced = True
                self.alpha_sum, self.tail_count = alpha_sum, count
                self._undo = None
            return comm.encode_frame(comm.ACK, {"worker_id": self.shard.worker_id})
        if kind == comm.STOP:
            return comm.encode_frame(comm.ACK, {"worker_id": self.shard.worker_id})
        raise comm.CodecError(f"unexpected frame kind {kind}")

    def _round(self, msg):
        st = self.state
        apply_delta(self.u_synced, msg.delta_v_tilde)
        localsolver.apply_broadcast(st, self.u_synced)
        loss_sum = conj_sum = 0.0
        if msg.evaluate:
            w = self.reg.grad_conj(st.u_local)
            loss_sum, conj_sum = localsolver.local_primal_terms(st, self.shard, self.loss, w)
        v_report = st.v_local_raw.copy() if self.diagnostics else None
        delta = np.zeros(self.shard.d)
        batch = 0
        if msg.step:
            self._undo = (st.alpha.copy(), st.v_local_raw.copy(), st.u_local.copy(), self.alpha_sum.copy(), self.tail_count)
            gen = localsolver.worker_gen(self.seed, self.shard.worker_id, self.stage, msg.round)
            res = localsolver.local_step(st, self.shard, self.reg, self.loss, self.local_cfg, gen)
            delta, batch = res.delta_v, res.batch
            if self.tail_from is not None and msg.round > self.tail_from:
                self.alpha_sum += st.alpha
                self.tail_count += 1
        out = comm.RoundResult(self.shard.worker_id, msg.round, delta, loss_sum, conj_sum, self.shard.n_local, batch, v_report)
        return out.encode()


def make_shards(dataset, part):
    return [Shard.from_dataset(dataset, idx, ell) for ell, idx in enumerate(part.assignments)]


def run(dataset, part, reg, loss, cfg, warm=None, shards=None):
    """Run DADM rounds until the gap target, an original-problem target, or the round cap.

    ``shards`` may be passed in to reuse the per-worker views across calls.
    """
    n, d, m = dataset.n, dataset.d, part.m
    if sum(part.sizes) != n:
        raise ValueError("partition does not cover the dataset")
    if n and not math.isfinite(1.0 / (reg.lambda_eff * n)):
        raise NumericalError(f"1/(lambda n) overflows for lambda={reg.lambda_eff!r}; lambda may be too small for double precision")
    clock0 = cfg.clock_start if cfg.clock_start is not None else time.perf_counter()
    offset = reg.direction_offset(d)

    if warm is None:
        alpha = np.zeros(n)
        v_raw = np.zeros(d)
        u = offset.copy()
    else:
        alpha = np.array(warm.alpha, dtype=np.float64)
        u = np.array(warm.u, dtype=np.float64)
        v_raw = raw_direction_full(dataset, reg, alpha)
        drift = float(np.max(np.abs(u - (v_raw + offset)), initial=0.0))
        if drift > 1e-9 * (1.0 + float(np.max(np.abs(u), initial=0.0))):
            raise ValueError(f"warm start direction inconsistent with alpha (max drift {drift:.3e})")
        loss.conj(alpha, dataset.labels)  # raises if any alpha is infeasible
    state = GlobalState(u=u, v_raw=v_raw, w=reg.grad_conj(u), round=cfg.round_offset)

    R = dataset.stats.R
    local_cfg = LocalStepConfig(sp=cfg.sp, mode=cfg.mode, repeat=cfg.repeat, s_override=cfg.s_override,
                                q_override=cfg.q_override, R=R if R > 0 else None)
    if cfg.mode == localsolver.CONSERVATIVE_LIPSCHITZ and cfg.q_override is None:
        q = min(local_cfg.batch_size(s) / s for s in part.sizes)
        local_cfg = LocalStepConfig(sp=cfg.sp, mode=cfg.mode, repeat=cfg.repeat, q_override=q, R=R)
    batches = sum(local_cfg.batch_size(s) for s in part.sizes)

    if shards is None:
        shards = make_shards(dataset, part)
    endpoints = []
    for ell, (idx, shard) in enumerate(zip(part.assignments, shards)):
        ws = WorkerState(alpha[idx].copy(), u.copy(), np.zeros(d)) if warm is None else WorkerState.warm(shard, reg, alpha[idx], u)
        tail_from = None if cfg.tail_average is None else cfg.round_offset + cfg.tail_average
        endpoints.append(WorkerEndpoint(shard, ws, reg, loss, local_cfg, cfg.seed, cfg.stage, cfg.diagnostics, tail_from))

    trace = []
    w_sum, w_count = np.zeros(d), 0
    converged = False
    stopped_by = "max_rounds"
    delta = np.zeros(d)
    last = None
    t = 0
    with comm.make_transport(cfg.transport, [ep.handle for ep in endpoints], cfg.timeout) as transport:
        while True:
            step = t < cfg.max_rounds
            evaluate = (t % cfg.gap_every == 0) or not step
            gr = cfg.round_offset + t + 1
            transport.broadcast(comm.RoundBroadcast(gr, delta, reg.kappa, cfg.stage, step=step, evaluate=evaluate))
            results = transport.gather(gr)
            if evaluate:
                reports = [WorkerReport(r.worker_id, r.n_ell, r.loss_sum, r.conj_sum, r.v_local_raw) for r in results]
                rec = _record(state, reports, reg, cfg, n, t, batches, clock0)
                if cfg.diagnostics:
                    _check_identities(rec, state, reports, reg, n)
                trace.append(rec)
                last = rec
                _check_finite(rec)
                log.debug("round %d stage %d gap %.6e", rec.round, rec.stage, rec.gap)
                hit = rec.gap <= cfg.target_gap
                hit_orig = cfg.original_target is not None and rec.orig_gap <= cfg.original_target
                if hit or hit_orig:
                    converged = True
                    stopped_by = "target" if hit else "original_target"
                    if step:
                        transport.request(comm.ROLLBACK)
                    break
            if not step:
                break
            delta = aggregate(results, n)
            apply_delta(state.u, delta)
            apply_delta(state.v_raw, delta)
            state.w = reg.grad_conj(state.u)
            t += 1
            state.round = cfg.round_offset + t
            if cfg.tail_average is not None and t > cfg.tail_average:
                w_sum += state.w
                w_count += 1

        snaps = transport.request(comm.SNAPSHOT)
        transport.request(comm.STOP)
        stats = transport.stats

    for ell, (meta, vecs) in enumerate(snaps):
        alpha[part.assignments[ell]] = vecs["alpha"]

    w_bar = alpha_bar = None
    if cfg.tail_average is not None and w_count:
        w_bar = w_sum / w_count
        alpha_bar = np.zeros(n)
        for ell, (meta, vecs) in enumerate(snaps):
            if meta["tail_count"]:
                alpha_bar[part.assignments[ell]] = vecs["alpha_sum"] / meta["tail_count"]

    return RunResult(
        w=state.w, alpha=alpha, u=state.u, v_raw=state.v_raw,
        primal=last.primal, dual=last.dual, gap=last.gap,
        orig_primal=last.orig_primal, orig_dual=last.orig_dual, orig_gap=last.orig_gap,
        rounds=t, converged=converged, trace=trace, comm=stats,
        w_bar=w_bar, alpha_bar=alpha_bar, stopped_by=stopped_by,
    )


def _record(state, reports, reg, cfg, n, t, batches, clock0):
    P, D, gap = duality_gap(state, reports, reg, n)
    if reg.kappa:
        oP, oD, ogap = original_gap(state, reports, reg, n)
    else:
        oP, oD, ogap = P, D, gap
    return RoundRecord(
        round=cfg.round_offset + t,
        stage=cfg.stage,
        local_round=t,
        comms=(cfg.round_offset if cfg.comm_offset is None else cfg.comm_offset) + t,
        epoch_equiv=(cfg.round_offset + t) * batches / n,
        time_ms=(time.perf_counter() - clock0) * 1e3,
        primal=P, dual=D, gap=gap,
        orig_primal=oP, orig_dual=oD, orig_gap=ogap,
        kappa=reg.kappa,
    )


def _check_identities(rec, state, reports, reg, n):
    gaps, betas = local_gaps(state, reports, reg, n)
    rec.gap_decomposition_error = abs(rec.gap - math.fsum(gaps))
    rec.beta_sum_max = float(np.max(np.abs(sum(betas[1:], betas[0].copy())), initial=0.0))
    v_scratch = sum((r.n_ell / n) * r.v_local_raw for r in reports)
    rec.carrier_error = float(np.max(np.abs(v_scratch - state.v_raw), initial=0.0))


def _check_finite(rec):
    if not (math.isfinite(rec.primal) and math.isfinite(rec.dual)):
        raise NumericalError(
            f"non-finite objective at round {rec.round}: P={rec.primal!r} D={rec.dual!r}; "
            "lambda may be too small for double precision or the data may contain extreme values"
        )
