"""Offspring-distribution models: generating-function evaluation, factorial
moments, exact sampling, and a numerically safe shape function.

Three law families are supported, each immutable after construction:

* :class:`FinitePmf` -- an explicit pmf on {0, ..., K} with K <= 64;
* :class:`Poisson` -- Poisson offspring with positive rate;
* :class:`LinearFractional` -- an atom at zero plus a geometric tail, whose
  generating function is a Moebius map (so compositions stay closed form).

The shape function of a law with generating function f and mean m is the
correction term in ``1/(1 - f(s)) = 1/(m*(1-s)) + shape(s)``, extended
continuously to s = 1 by ``f''(1) / (2 f'(1)**2)``.  Evaluating it by that
defining difference cancels catastrophically near s = 1, so every family
here uses an algebraically rearranged form that is accurate to machine
precision on all of [0, 1] (see the individual ``shape`` implementations).

All evaluation methods accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import RandomStream

__all__ = [
    "FinitePmf",
    "LinearFractional",
    "OffspringLaw",
    "Poisson",
    "SUPPORT_CAP",
]

# Larger supports would make the exact third/fourth factorial moments
# vulnerable to double-precision rounding.
SUPPORT_CAP = 64

_WEIGHT_SUM_TOL = 1e-12


def _check_unit_interval(s) -> np.ndarray:
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("generating-function argument must lie in [0, 1]")
    return arr


def _scalar_like(value: np.ndarray, template) -> float | np.ndarray:
    if np.isscalar(template) or np.ndim(template) == 0:
        return float(value)
    return value


@dataclass(frozen=True)
class Poisson:
    """Poisson offspring law with rate ``lam``."""

    lam: float

    def __post_init__(self) -> None:
        if not (self.lam > 0.0 and math.isfinite(self.lam)):
            raise ValueError(f"Poisson rate must be positive and finite, got {self.lam}")

    def pgf(self, s):
        arr = _check_unit_interval(s)
        return _scalar_like(np.exp(self.lam * (arr - 1.0)), s)

    def survival_map(self, r):
        """One-step survival recursion 1 - f(1 - r), cancellation free."""
        if isinstance(r, float):
            return -math.expm1(-self.lam * r)
        arr = np.asarray(r, dtype=float)
        return _scalar_like(-np.expm1(-self.lam * arr), r)

    def mean(self) -> float:
        return self.lam

    def second_factorial_moment(self) -> float:
        return self.lam * self.lam

    def variance(self) -> float:
        m = self.mean()
        return self.second_factorial_moment() + m - m * m

    def factorial_moment(self, k: int) -> float:
        return self.lam**k

    def shape(self, s):
        _check_unit_interval(s)
        if isinstance(s, float):
            return _shifted_coth_scalar(self.lam * (1.0 - s))
        x = self.lam * (1.0 - np.asarray(s, dtype=float))
        return _scalar_like(_shifted_coth(x), s)

    def shape_from_survival(self, r):
        """shape(1 - r) evaluated directly from the survival weight r."""
        if isinstance(r, float):
            return _shifted_coth_scalar(self.lam * r)
        x = self.lam * np.asarray(r, dtype=float)
        return _scalar_like(_shifted_coth(x), r)

    def shape_at_one(self) -> float:
        return 0.5

    def sample(self, rng: RandomStream, size: int | None = None):
        # numpy's Poisson sampler is exact: inversion for small rates and
        # transformed rejection above, never a normal approximation.
        draw = rng.generator.poisson(self.lam, size=size)
        return int(draw) if size is None else draw


def _shifted_coth(x):
    """g(x) = 1/(1 - exp(-x)) - 1/x, the Poisson shape profile.

    Series below 0.5 (the direct form cancels there), expm1 form above.
    g(0) = 1/2 and g is increasing on [0, inf).
    """
    x = np.asarray(x, dtype=float)
    small = x < 0.5
    out = np.empty_like(x)
    xs = x[small]
    x2 = xs * xs
    # 1/(1-e^{-x}) - 1/x = 1/2 + x/12 - x^3/720 + x^5/30240 - x^7/1209600 ...
    out[small] = 0.5 + xs * (1.0 / 12.0 + x2 * (-1.0 / 720.0 + x2 * (1.0 / 30240.0 - x2 / 1209600.0)))
    xl = x[~small]
    out[~small] = 1.0 / (-np.expm1(-xl)) - 1.0 / xl
    return out


def _shifted_coth_scalar(x: float) -> float:
    if x < 0.5:
        x2 = x * x
        return 0.5 + x * (1.0 / 12.0 + x2 * (-1.0 / 720.0 + x2 * (1.0 / 30240.0 - x2 / 1209600.0)))
    return 1.0 / (-math.expm1(-x)) - 1.0 / x


@dataclass(frozen=True)
class LinearFractional:
    """Offspring law with zero-mass ``p0`` and geometric tail parameter ``p``:
    weight (1-p0)*(1-p)*p**(k-1) at k >= 1.

    Its generating function is a Moebius map, which keeps compositions of
    such laws in closed form; the shape function is the constant p/(1-p0).
    """

    p0: float
    p: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.p0 < 1.0):
            raise ValueError(f"zero-offspring mass must lie in [0, 1), got {self.p0}")
        if not (0.0 <= self.p < 1.0):
            raise ValueError(f"tail parameter must lie in [0, 1), got {self.p}")

    def pgf(self, s):
        arr = _check_unit_interval(s)
        value = self.p0 + (1.0 - self.p0) * (1.0 - self.p) * arr / (1.0 - self.p * arr)
        return _scalar_like(value, s)

    def survival_map(self, r):
        # 1 - f(1-r) = (1-p0) r / ((1-p) + p r): all terms positive.
        if isinstance(r, float):
            return (1.0 - self.p0) * r / ((1.0 - self.p) + self.p * r)
        arr = np.asarray(r, dtype=float)
        value = (1.0 - self.p0) * arr / ((1.0 - self.p) + self.p * arr)
        return _scalar_like(value, r)

    def mean(self) -> float:
        return (1.0 - self.p0) / (1.0 - self.p)

    def second_factorial_moment(self) -> float:
        return 2.0 * (1.0 - self.p0) * self.p / ((1.0 - self.p) ** 2)

    def variance(self) -> float:
        m = self.mean()
        return self.second_factorial_moment() + m - m * m

    def factorial_moment(self, k: int) -> float:
        return (1.0 - self.p0) * math.factorial(k) * self.p ** (k - 1) / (1.0 - self.p) ** k

    def shape(self, s):
        _check_unit_interval(s)
        const = self.p / (1.0 - self.p0)
        if np.isscalar(s) or np.ndim(s) == 0:
            return const
        return np.full(np.shape(s), const)

    def shape_from_survival(self, r):
        const = self.p / (1.0 - self.p0)
        if np.isscalar(r) or np.ndim(r) == 0:
            return const
        return np.full(np.shape(r), const)

    def shape_at_one(self) -> float:
        return self.p / (1.0 - self.p0)

    def moebius(self) -> tuple[float, float, float, float]:
        """(a, b, c, d) with 1 - f(1-r) = (a*r + b)/(c*r + d), all entries
        nonnegative, for stable closed-form composition in survival form."""
        return (1.0 - self.p0, 0.0, self.p, 1.0 - self.p)

    def sample(self, rng: RandomStream, size: int | None = None):
        gen = rng.generator
        n = 1 if size is None else size
        u = gen.random(n)
        draws = np.zeros(n, dtype=np.int64)
        tail = u >= self.p0
        if np.any(tail):
            if self.p == 0.0:
                draws[tail] = 1
            else:
                v = gen.random(int(np.count_nonzero(tail)))
                # inverse CDF of the geometric tail on {1, 2, ...}; log1p
                # keeps the argument strictly negative even when v == 0
                draws[tail] = 1 + np.floor(np.log1p(-v) / math.log(self.p)).astype(np.int64)
        return int(draws[0]) if size is None else draws


@dataclass(frozen=True)
class FinitePmf:
    """Offspring law given by explicit weights on {0, ..., K}, K <= 64."""

    weights: tuple[float, ...]

    def __init__(self, weights) -> None:
        w = tuple(float(v) for v in weights)
        if len(w) == 0:
            raise ValueError("weights must be nonempty")
        if len(w) > SUPPORT_CAP + 1:
            raise ValueError(f"support cap is {SUPPORT_CAP}, got max value {len(w) - 1}")
        if any(v < 0.0 for v in w):
            raise ValueError("weights must be nonnegative")
        if abs(math.fsum(w) - 1.0) > _WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1 within {_WEIGHT_SUM_TOL}, got {math.fsum(w)}")
        object.__setattr__(self, "weights", w)

    def pgf(self, s):
        arr = _check_unit_interval(s)
        value = np.zeros_like(arr)
        for w in reversed(self.weights):
            value = value * arr + w
        return _scalar_like(value, s)

    def survival_map(self, r):
        # 1 - f(1-r) = r * T(1-r) with T(s) = sum_z w_z (1 + s + ... + s^{z-1});
        # every term is nonnegative, so no cancellation anywhere on [0, 1].
        if isinstance(r, float):
            s = 1.0 - r
            total = 0.0
            h = 0.0
            for w in self.weights[1:]:
                h = h * s + 1.0
                total += w * h
            return r * total
        arr = np.asarray(r, dtype=float)
        value = arr * self._tail_sum(1.0 - arr)
        return _scalar_like(value, r)

    def _tail_sum(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        total = np.zeros_like(s)
        h = np.zeros_like(s)  # h_z(s) = 1 + s + ... + s^{z-1}, h_0 = 0
        for w in self.weights[1:]:
            h = h * s + 1.0
            total = total + w * h
        return total

    def mean(self) -> float:
        return math.fsum(z * w for z, w in enumerate(self.weights))

    def second_factorial_moment(self) -> float:
        return math.fsum(z * (z - 1) * w for z, w in enumerate(self.weights))

    def variance(self) -> float:
        m = self.mean()
        return self.second_factorial_moment() + m - m * m

    def factorial_moment(self, k: int) -> float:
        return math.fsum(math.prod(range(z - k + 1, z + 1)) * w for z, w in enumerate(self.weights) if z >= k)

    def shape(self, s):
        if isinstance(s, float):
            _check_unit_interval(s)
            return self._shape_scalar(s)
        arr = _check_unit_interval(s)
        return _scalar_like(self._shape_impl(arr), s)

    def shape_from_survival(self, r):
        if isinstance(r, float):
            return self._shape_scalar(1.0 - r)
        arr = np.asarray(r, dtype=float)
        return _scalar_like(self._shape_impl(1.0 - arr), r)

    def _shape_scalar(self, s: float) -> float:
        m = self.mean()
        if m <= 0.0:
            raise ValueError("shape function requires positive mean offspring")
        h = 0.0
        h_cum = 0.0
        t_total = 0.0
        u_total = 0.0
        for w in self.weights[1:]:
            u_total += w * h_cum
            h = h * s + 1.0
            h_cum += h
            t_total += w * h
        return u_total / (m * t_total)

    def _shape_impl(self, s: np.ndarray) -> np.ndarray:
        # shape(s) = U(s) / (m * T(s)) with T as in survival_map and
        # U(s) = sum_z w_z sum_{j<z} h_j(s); this is the defining difference
        # 1/(1-f) - 1/(m(1-s)) with the common (1-s) factor cancelled
        # symbolically, hence exact up to rounding for every s in [0, 1].
        m = self.mean()
        if m <= 0.0:
            raise ValueError("shape function requires positive mean offspring")
        s = np.asarray(s, dtype=float)
        h = np.zeros_like(s)
        h_cum = np.zeros_like(s)  # sum_{j<z} h_j(s)
        t_total = np.zeros_like(s)
        u_total = np.zeros_like(s)
        for w in self.weights[1:]:
            u_total = u_total + w * h_cum  # uses h_cum for current z before update
            h = h * s + 1.0
            h_cum = h_cum + h
            t_total = t_total + w * h
        # the loop above associates h_cum(z) = sum_{j<z} h_j by construction:
        # at entry for weight w_z we have h = h_{z-1}, h_cum = sum_{j<=z-1} h_j.
        return u_total / (m * t_total)

    def shape_at_one(self) -> float:
        m = self.mean()
        if m <= 0.0:
            raise ValueError("shape function requires positive mean offspring")
        return self.second_factorial_moment() / (2.0 * m * m)

    def sample(self, rng: RandomStream, size: int | None = None):
        cdf = np.cumsum(self.weights)
        u = rng.generator.random(1 if size is None else size)
        draws = np.searchsorted(cdf, u, side="right").astype(np.int64)
        return int(draws[0]) if size is None else draws


OffspringLaw = Poisson | LinearFractional | FinitePmf
