"""Iteration-count bounds for DADM and Acc-DADM, evaluated exactly as stated.

All logarithms are natural.  ``n_tilde`` is ``max_l n_l / M_l``.
"""

import math


def _positive(**kw):
    for name, val in kw.items():
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val!r}")


def dadm_smooth_rounds(R, gamma, lam, n_tilde, gap_ratio):
    """Rounds for (1/gamma)-smooth losses; ``gap_ratio`` is initial dual suboptimality over target."""
    _positive(R=R, gamma=gamma, lam=lam, n_tilde=n_tilde, gap_ratio=gap_ratio)
    c = R / (gamma * lam) + n_tilde
    return math.ceil(c * math.log(c * gap_ratio))


def dadm_lipschitz_rounds(n_tilde, G, lam, eps, t0=None, n=None, eps_d0=None):
    """``(T0, T)`` for L-Lipschitz losses with ``G = 4 R L^2`` and normalized target ``eps``.

    ``t0`` is computed from ``n`` and the initial dual suboptimality ``eps_d0``
    when not given directly.
    """
    _positive(n_tilde=n_tilde, G=G, lam=lam, eps=eps)
    if t0 is None:
        if n is None or eps_d0 is None:
            raise ValueError("give t0, or both n and eps_d0")
        _positive(n=n, eps_d0=eps_d0)
        t0 = max(0, math.ceil(n_tilde * math.log(2 * lam * n_tilde * eps_d0 / (n * G))))
    ratio = G / (lam * eps)
    T0 = math.ceil(max(t0, 4 * ratio - 2 * n_tilde + t0))
    T = math.ceil(T0 + max(n_tilde, ratio))
    return T0, T


def acc_outer_stages(lam, kappa, gap_ratio):
    """Outer stages for smooth losses; ``gap_ratio = (P(0) - D(0,0)) / eps``."""
    _positive(lam=lam, gap_ratio=gap_ratio)
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    return math.ceil(1 + math.sqrt(4 * (lam + 2 * kappa) / lam) * (math.log((2 * lam + 2 * kappa) / lam) + math.log(gap_ratio)))


def acc_inner_rounds(R, gamma, lam, kappa, n_tilde):
    """Inner DADM rounds per stage for smooth losses."""
    _positive(R=R, gamma=gamma, lam=lam, n_tilde=n_tilde)
    chi = R / (gamma * (lam + kappa)) + n_tilde
    return math.ceil(chi * (math.log(chi) + 7 + 2.5 * math.log((lam + 2 * kappa) / lam)))


def acc_lipschitz_outer_stages(lam, kappa, gap_ratio):
    """Outer stages on the smoothed objective; ``gap_ratio = (P(0) - D(0,0)) / eps``."""
    return acc_outer_stages(lam, kappa, 2 * gap_ratio)


def acc_lipschitz_inner_rounds(R, L, eps, lam, kappa, n_tilde):
    return acc_inner_rounds(R, eps / (L * L), lam, kappa, n_tilde)


_KINDS = {
    "dadm-smooth": dadm_smooth_rounds,
    "dadm-lipschitz": dadm_lipschitz_rounds,
    "acc-outer": acc_outer_stages,
    "acc-inner": acc_inner_rounds,
    "acc-lipschitz-outer": acc_lipschitz_outer_stages,
    "acc-lipschitz-inner": acc_lipschitz_inner_rounds,
}


def theory_bounds(kind, **params):
    try:
        fn = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown bound {kind!r}") from None
    return fn(**params)
