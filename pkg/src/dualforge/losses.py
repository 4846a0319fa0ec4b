"""Margin losses for binary labels y in {-1, +1}.

Each loss exposes its value, a (sub)gradient, the conjugate evaluated at the
negated dual variable, and an exact maximizer of the one-dimensional dual
coordinate problem

    max_delta  -phi*(-(alpha + delta)) - a * delta - (s / 2) * delta**2

that sequential dual coordinate ascent solves per example.  Dual variables
live in the box ``y * alpha in [0, 1]`` (every loss here is 1-Lipschitz).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy


class DualDomainError(ValueError):
    """A dual value lies outside the conjugate's effective domain."""


@dataclass(frozen=True)
class LossInfo:
    smoothness: float  # 1/gamma; 0 for non-smooth losses
    lipschitz: float

    @property
    def gamma(self):
        return 1.0 / self.smoothness if self.smoothness > 0 else 0.0


_DOMAIN_TOL = 1e-12


def _box(b, y):
    t = np.asarray(b, dtype=np.float64) * y
    if np.any(t < -_DOMAIN_TOL) or np.any(t > 1.0 + _DOMAIN_TOL) or np.any(~np.isfinite(t)):
        raise DualDomainError("dual value outside y*alpha in [0, 1]")
    return np.clip(t, 0.0, 1.0)


def _clip01(t):
    return 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)


class Loss:
    name = "loss"

    @property
    def info(self):
        raise NotImplementedError

    def value(self, a, y):
        raise NotImplementedError

    def deriv(self, a, y):
        raise NotImplementedError

    def conj(self, b, y):
        """Return ``phi*(-b)``; raises :class:`DualDomainError` outside the box."""
        raise NotImplementedError

    def coord_maximize(self, alpha, a, s, y):
        """New dual value maximizing the 1D restricted dual objective."""
        raise NotImplementedError

    def coord_update(self, alpha, a, s, y):
        """Increment ``delta`` that maximizes the 1D restricted dual objective."""
        return self.coord_maximize(alpha, a, s, y) - alpha

    def coord_objective(self, alpha, delta, a, s, y):
        return -float(self.conj(alpha + delta, y)) - a * delta - 0.5 * s * delta * delta

    def __repr__(self):
        return f"{type(self).__name__}()"


class SmoothedHinge(Loss):
    """Hinge loss smoothed through ``phi*(-b) + (gamma/2) b**2``; (1/gamma)-smooth."""

    name = "smoothed-hinge"

    def __init__(self, gamma):
        gamma = float(gamma)
        if not gamma > 0.0:
            raise ValueError("smoothing parameter gamma must be positive")
        self.gamma = gamma

    @property
    def info(self):
        return LossInfo(1.0 / self.gamma, 1.0)

    def value(self, a, y):
        z = np.asarray(a, dtype=np.float64) * y
        g = self.gamma
        out = np.where(z >= 1.0, 0.0, np.where(z <= 1.0 - g, 1.0 - z - 0.5 * g, (1.0 - z) ** 2 / (2.0 * g)))
        return out if out.ndim else float(out)

    def deriv(self, a, y):
        z = np.asarray(a, dtype=np.float64) * y
        out = -y * np.clip((1.0 - z) / self.gamma, 0.0, 1.0)
        return out if out.ndim else float(out)

    def conj(self, b, y):
        t = _box(b, y)
        out = -t + 0.5 * self.gamma * t * t
        return out if out.ndim else float(out)

    def coord_maximize(self, alpha, a, s, y):
        t = alpha * y
        z = a * y
        if s <= 0.0:
            return y * _clip01((1.0 - z) / self.gamma)
        return y * _clip01(t + (1.0 - z - self.gamma * t) / (self.gamma + s))

    def __repr__(self):
        return f"SmoothedHinge(gamma={self.gamma!r})"


class SmoothHinge(SmoothedHinge):
    """The 1-smooth hinge: 0 above margin 1, linear below 0, quadratic between."""

    name = "smooth-hinge"

    def __init__(self):
        super().__init__(1.0)

    def __repr__(self):
        return "SmoothHinge()"


class Hinge(Loss):
    name = "hinge"
    gamma = 0.0

    @property
    def info(self):
        return LossInfo(0.0, 1.0)

    def value(self, a, y):
        out = np.maximum(0.0, 1.0 - np.asarray(a, dtype=np.float64) * y)
        return out if out.ndim else float(out)

    def deriv(self, a, y):
        # At the kink (margin exactly 1) the left endpoint -y is returned.
        z = np.asarray(a, dtype=np.float64) * y
        out = np.where(z <= 1.0, -1.0, 0.0) * y
        return out if out.ndim else float(out)

    def conj(self, b, y):
        out = -_box(b, y)
        return out if out.ndim else float(out)

    def coord_maximize(self, alpha, a, s, y):
        z = a * y
        if s <= 0.0:
            return y * (1.0 if z <= 1.0 else 0.0)
        return y * _clip01(alpha * y + (1.0 - z) / s)


class Logistic(Loss):
    """``log(1 + exp(-y a))``; 1/4-smooth.  Coordinate steps use a bracketed Newton solve."""

    name = "logistic"
    gamma = 4.0
    tol = 1e-12
    max_iter = 200

    @property
    def info(self):
        return LossInfo(0.25, 1.0)

    def value(self, a, y):
        out = np.logaddexp(0.0, -np.asarray(a, dtype=np.float64) * y)
        return out if out.ndim else float(out)

    def deriv(self, a, y):
        out = -y * expit(-np.asarray(a, dtype=np.float64) * y)
        return out if out.ndim else float(out)

    def conj(self, b, y):
        t = _box(b, y)
        out = xlogy(t, t) + xlogy(1.0 - t, 1.0 - t)
        return out if out.ndim else float(out)

    def coord_maximize(self, alpha, a, s, y):
        t0 = alpha * y
        z = a * y
        if s <= 0.0:
            return y * float(expit(-z))
        # In the logit x = log(t / (1 - t)) the optimality condition is the root of
        #   g(x) = -x - z - s (sigmoid(x) - t0),
        # strictly decreasing with slope in [-1 - s/4, -1] and bracketed below.
        lo = -z - s * (1.0 - t0)
        hi = -z + s * t0
        x = math.log(t0) - math.log1p(-t0) if 0.0 < t0 < 1.0 else -z
        x = min(max(x, lo), hi)
        for _ in range(self.max_iter):
            sig = _sigmoid(x)
            g = -x - z - s * (sig - t0)
            if g == 0.0:
                break
            if g > 0.0:
                lo = x
            else:
                hi = x
            nxt = x + g / (1.0 + s * sig * (1.0 - sig))
            if not lo < nxt < hi:
                nxt = 0.5 * (lo + hi)
            if abs(nxt - x) <= self.tol * (1.0 + abs(x)):
                x = nxt
                break
            x = nxt
        return y * _sigmoid(x)


def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def smooth(loss, gamma):
    """Nesterov-smoothed version of the hinge loss."""
    if not isinstance(loss, Hinge):
        raise TypeError("only the hinge loss is smoothed")
    if not gamma > 0:
        raise ValueError("smoothing parameter gamma must be positive")
    return SmoothedHinge(gamma)


_BY_NAME = {"smooth-hinge": SmoothHinge, "logistic": Logistic, "hinge": Hinge}

LOSS_NAMES = tuple(_BY_NAME)


def get_loss(name):
    try:
        return _BY_NAME[name]()
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; choose from {', '.join(_BY_NAME)}") from None
