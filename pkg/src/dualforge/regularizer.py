"""Elastic-net regularizer, its conjugate, and the proximal shift used by acceleration.

The base penalty is ``lam * g(w) = lam/2 ||w||^2 + mu ||w||_1``.  Adding a
proximal term ``kappa/2 ||w - y||^2`` gives the effective scale
``lambda_eff = lam + kappa`` and the 1-strongly convex

    f(w) = 1/2 ||w||^2 + (mu / lambda_eff) ||w||_1

with ``lambda_eff * f(w) = lam * g(w) + kappa/2 ||w||^2``.  The linear part
``-kappa w.y`` is carried by the dual direction (offset ``kappa y / lambda_eff``),
never by ``f``.  No second regularizer ``h`` is supported.
"""

from dataclasses import dataclass

import numpy as np


def soft_threshold(u, thr):
    u = np.asarray(u, dtype=np.float64)
    if thr == 0.0:
        return u.copy()
    return np.sign(u) * np.maximum(np.abs(u) - thr, 0.0)


@dataclass(frozen=True, eq=False)
class ElasticNet:
    lam: float
    mu: float = 0.0
    kappa: float = 0.0
    center: np.ndarray = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if self.center is not None:
            c = np.array(self.center, dtype=np.float64)
            c.setflags(write=False)
            object.__setattr__(self, "center", c)

    @property
    def lambda_eff(self):
        return self.lam + self.kappa

    @property
    def threshold(self):
        """l1 weight of ``f``: ``mu / lambda_eff``."""
        return self.mu / self.lambda_eff

    def center_or_zero(self, d):
        if self.kappa == 0.0 or self.center is None:
            return np.zeros(d)
        return self.center

    def grad_conj(self, u):
        """``grad f*(u)``: coordinatewise soft threshold at ``mu / lambda_eff``."""
        return soft_threshold(u, self.threshold)

    def conj_value(self, u):
        """``f*(u) = sum_j 1/2 max(|u_j| - mu/lambda_eff, 0)^2``."""
        r = np.maximum(np.abs(np.asarray(u, dtype=np.float64)) - self.threshold, 0.0)
        return 0.5 * float(r @ r)

    def f_value(self, w):
        w = np.asarray(w, dtype=np.float64)
        return 0.5 * float(w @ w) + self.threshold * float(np.abs(w).sum())

    def primal_value(self, w, n):
        """``lam n g(w) + (kappa n / 2) ||w - y||^2``."""
        w = np.asarray(w, dtype=np.float64)
        val = n * (0.5 * self.lam * float(w @ w) + self.mu * float(np.abs(w).sum()))
        if self.kappa != 0.0:
            diff = w - self.center_or_zero(w.size)
            val += 0.5 * self.kappa * n * float(diff @ diff)
        return val

    def stage_constant(self, n, d):
        """``(kappa n / 2) ||y||^2``, the constant term of the shifted dual."""
        if self.kappa == 0.0:
            return 0.0
        c = self.center_or_zero(d)
        return 0.5 * self.kappa * n * float(c @ c)

    def direction_offset(self, d):
        """``kappa y / lambda_eff``: the shift folded into the dual direction."""
        if self.kappa == 0.0:
            return np.zeros(d)
        return self.kappa * self.center_or_zero(d) / self.lambda_eff

    def base(self):
        return self if self.kappa == 0.0 else ElasticNet(self.lam, self.mu)


def shift(reg, kappa, center):
    """Add ``kappa/2 ||w - center||^2`` to the base regularizer of ``reg``."""
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    if kappa == 0.0:
        return reg.base()
    return ElasticNet(reg.lam, reg.mu, float(kappa), np.asarray(center, dtype=np.float64))


def solve_global_step(v, reg, h=None):
    """Global synchronization step: ``w`` and the subgradient ``rho`` of ``h``.

    Only ``h = 0`` is supported, where ``rho = 0`` and ``w = grad f*(v)``.
    """
    if h is not None:
        raise NotImplementedError("a non-zero second regularizer h needs an iterative global solve")
    return reg.grad_conj(v), np.zeros_like(np.asarray(v, dtype=np.float64))
