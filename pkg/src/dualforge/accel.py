"""Accelerated outer loop around DADM (inner-outer proximal point with momentum).

Each stage adds ``(kappa n / 2) ||w - y||^2`` to the primal, which raises the
effective regularization to ``lam + kappa`` and makes the inner problem well
conditioned.  The dual variables carry over between stages unchanged; only the
direction offset ``kappa y / (lam + kappa)`` moves with the center ``y``.
"""

import logging
import math
import time
from fractions import Fraction
from dataclasses import dataclass, field, replace

import numpy as np

from dualforge import bounds, dadm
from dualforge.losses import Hinge, smooth
from dualforge.regularizer import shift

log = logging.getLogger(__name__)

NU_ZERO = "0"
NU_THEORY = "theory"


def _clamped(value):
    # evaluated in exact rationals, so the result is the correctly rounded float
    return float(max(Fraction(0), value))


def default_kappa(m, R, gamma, n, lam):
    """``max(0, m R / (gamma n) - lam)``; zero means plain DADM is already well conditioned."""
    m, R, gamma, n, lam = map(Fraction, (m, R, gamma, n, lam))
    return _clamped(m * R / (gamma * n) - lam)


def default_kappa_lipschitz(m, L, R, n, eps, lam):
    """Same rule after smoothing a Lipschitz loss with ``gamma = eps / L^2``."""
    m, L, R, n, eps, lam = map(Fraction, (m, L, R, n, eps, lam))
    return _clamped(m * L * L * R / (n * eps) - lam)


def kappa_alt_formula(m, R, gamma, lam):
    """``max(0, m R / (lam gamma) - lam)``.  Available only as an explicit override."""
    m, R, gamma, lam = map(Fraction, (m, R, gamma, lam))
    return _clamped(m * R / (lam * gamma) - lam)


@dataclass(frozen=True)
class Schedule:
    eta: float
    nu: float
    xi0: float
    eta_inv_sq: float  # (lam + 2 kappa) / lam, kept separately so it is not recovered from a rounded sqrt

    def stage_target(self, xi_prev):
        """Inner gap target for a stage that starts with ``xi_prev``."""
        return self.eta * xi_prev / (2.0 + 2.0 * self.eta_inv_sq)

    def next_xi(self, xi_prev):
        return (1.0 - self.eta / 2.0) * xi_prev


def theory_nu(eta):
    return (1.0 - eta) / (1.0 + eta)


def schedule(lam, kappa, gap0, nu=NU_THEORY):
    """Return the stage schedule; ``nu`` is ``"theory"``, ``"0"`` or a number in ``[0, 1]``."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    if kappa < 0 or gap0 < 0:
        raise ValueError("kappa and gap0 must be non-negative")
    eta_inv_sq = (lam + 2.0 * kappa) / lam
    eta = math.sqrt(lam / (lam + 2.0 * kappa))
    if nu == NU_THEORY:
        nu_val = theory_nu(eta)
    elif nu == NU_ZERO:
        nu_val = 0.0
    else:
        nu_val = float(nu)
        if not 0.0 <= nu_val <= 1.0:
            raise ValueError("nu must lie in [0, 1]")
    xi0 = (1.0 + eta_inv_sq) * gap0
    return Schedule(eta, nu_val, xi0, eta_inv_sq)


def smooth_wrap(loss, eps, L=1.0):
    """Smoothed surrogate of a Lipschitz hinge and the matching inner target ``eps / 2``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return smooth(loss, eps / (L * L)), eps / 2.0


def rebase_direction(u_old, kappa, lam_eff, y_old, y_new):
    """Move the working direction from center ``y_old`` to ``y_new``; no data pass."""
    return u_old + (kappa / lam_eff) * (np.asarray(y_new) - np.asarray(y_old))


@dataclass
class AccConfig:
    target_gap: float = 1e-6  # absolute gap of the original problem
    kappa: float = None  # None: default_kappa
    nu: object = NU_ZERO
    outer_max: int = None  # None: the stage-count bound
    inner_max: int = 1000
    max_comms: int = None  # total budget; each stage transition costs one
    sp: float = 1.0
    seed: int = 0
    mode: str = "exact"
    repeat: int = 1
    gap_every: int = 1
    transport: str = "inline"
    timeout: float = 60.0
    diagnostics: bool = False


@dataclass
class StageInfo:
    stage: int
    target: float
    rounds: int
    stage_gap: float
    orig_gap: float
    met_target: bool
    xi: float


@dataclass
class AccResult:
    w: np.ndarray
    alpha: np.ndarray
    u: np.ndarray
    y: np.ndarray
    primal: float  # original problem
    dual: float
    gap: float
    rounds: int
    converged: bool
    trace: list
    stages: list = field(default_factory=list)
    kappa: float = 0.0
    schedule: Schedule = None
    comm_bytes: int = 0
    comms: int = 0
    stopped_by: str = ""


def run_acc(dataset, part, reg, loss, cfg, warm_alpha=None):
    """Run the accelerated solver on the unshifted problem ``reg`` until its gap is at most ``cfg.target_gap``.

    ``warm_alpha`` (example order) seeds the dual variables; the first
    center is always zero.
    """
    if isinstance(loss, Hinge):
        raise ValueError("the accelerated solver needs a smooth loss; wrap the hinge with smooth_wrap first")
    if reg.kappa:
        raise ValueError("pass the unshifted regularizer")
    n, d, m = dataset.n, dataset.d, part.m
    gamma = loss.info.gamma
    kappa = default_kappa(m, dataset.stats.R, gamma, n, reg.lam) if cfg.kappa is None else float(cfg.kappa)
    clock0 = time.perf_counter()

    base_cfg = dadm.RunConfig(
        target_gap=cfg.target_gap, sp=cfg.sp, seed=cfg.seed, mode=cfg.mode, repeat=cfg.repeat,
        gap_every=cfg.gap_every, transport=cfg.transport, timeout=cfg.timeout,
        diagnostics=cfg.diagnostics, clock_start=clock0,
    )
    alpha = np.zeros(n) if warm_alpha is None else np.array(warm_alpha, dtype=np.float64)
    if kappa == 0.0:
        cap = cfg.inner_max if cfg.max_comms is None else min(cfg.inner_max, cfg.max_comms)
        warm = None if warm_alpha is None else dadm.WarmStart(alpha, dadm.raw_direction_full(dataset, reg, alpha))
        res = dadm.run(dataset, part, reg, loss, replace(base_cfg, max_rounds=cap), warm=warm)
        return AccResult(res.w, res.alpha, res.u, np.zeros(d), res.primal, res.dual, res.gap, res.rounds,
                         res.converged, res.trace, [], 0.0, schedule(reg.lam, 0.0, res.trace[0].gap, cfg.nu),
                         res.comm.bytes_up + res.comm.bytes_down, res.rounds, res.stopped_by)

    gap0 = dadm.evaluate_full(dataset, reg, loss, alpha)[2]
    sched = schedule(reg.lam, kappa, gap0, cfg.nu)
    outer_max = cfg.outer_max
    if outer_max is None:
        outer_max = bounds.acc_outer_stages(reg.lam, kappa, max(gap0 / cfg.target_gap, 1.0))
    log.info("kappa %.6g eta %.6g nu %.6g xi0 %.6g outer cap %d", kappa, sched.eta, sched.nu, sched.xi0, outer_max)

    shards = dadm.make_shards(dataset, part)
    y = np.zeros(d)
    w_prev = np.zeros(d)
    stage_reg = shift(reg, kappa, y)
    u = dadm.raw_direction_full(dataset, stage_reg, alpha) + stage_reg.direction_offset(d)
    xi = sched.xi0
    trace, stages = [], []
    rounds = comms = 0
    comm_bytes = 0
    res = None
    converged = False
    stopped_by = "outer_max"
    for t in range(1, outer_max + 1):
        if t > 1:
            comms += 1  # new center goes out with the first evaluation of the stage
        budget = cfg.inner_max
        if cfg.max_comms is not None:
            budget = min(budget, cfg.max_comms - comms)
            if budget < 0:
                stopped_by = "max_comms"
                break
        target = sched.stage_target(xi)
        inner = replace(base_cfg, target_gap=target, max_rounds=budget, stage=t,
                        round_offset=rounds, comm_offset=comms, original_target=cfg.target_gap)
        res = dadm.run(dataset, part, stage_reg, loss, inner, warm=dadm.WarmStart(alpha, u), shards=shards)
        comm_bytes += res.comm.bytes_up + res.comm.bytes_down
        rounds += res.rounds
        comms += res.rounds
        alpha, u, w = res.alpha, res.u, res.w
        met = res.gap <= target
        if not met and res.orig_gap > cfg.target_gap and res.stopped_by == "max_rounds":
            res.trace[-1].note = "stage_cap"
            log.warning("stage %d hit the inner cap of %d rounds with gap %.3e > target %.3e",
                        t, cfg.inner_max, res.gap, target)
        trace.extend(res.trace)
        xi = sched.next_xi(xi)
        stages.append(StageInfo(t, target, res.rounds, res.gap, res.orig_gap, met, xi))
        if res.orig_gap <= cfg.target_gap:
            converged = True
            stopped_by = "target"
            break
        if cfg.max_comms is not None and comms >= cfg.max_comms:
            stopped_by = "max_comms"
            break
        y_new = w + sched.nu * (w - w_prev)
        u = rebase_direction(u, kappa, stage_reg.lambda_eff, y, y_new)
        y, w_prev = y_new, w
        stage_reg = shift(reg, kappa, y)

    return AccResult(
        w=res.w, alpha=alpha, u=u, y=y,
        primal=res.orig_primal, dual=res.orig_dual, gap=res.orig_gap,
        rounds=rounds, converged=converged, trace=trace, stages=stages,
        kappa=kappa, schedule=sched, comm_bytes=comm_bytes, comms=comms, stopped_by=stopped_by,
    )
