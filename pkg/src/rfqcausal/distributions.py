"""Probability kernels for the generative RfQ model.

Skew Exponential Power (SEP) parameterization
---------------------------------------------
Two-piece skewing of the exponential-power kernel.  With
``z = (x - loc) / scale`` and ``a = asym``::

    g(y)  = shape / (2 Gamma(1/shape)) * exp(-|y|**shape)
    pdf   = 2 / (a + 1/a) / scale * g(z / a)     z >= 0
                                    g(z * a)     z <  0

``a > 1`` stretches the right tail, ``a < 1`` the left one and ``a = 1``
is symmetric; ``shape = 2, a = 1`` is a Gaussian with variance
``scale**2 / 2``.  Both branches have closed-form CDFs through the
regularized incomplete gamma function, so the CDF, quantile and sampler
need no numerical integration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

__all__ = [
    "InvalidParams",
    "SepParams",
    "sep_pdf",
    "sep_logpdf",
    "sep_cdf",
    "sep_sf",
    "sep_ppf",
    "sep_rvs",
    "best_quote_cdf",
    "best_quote_sf",
    "best_quote_pdf",
    "cover_density",
    "cover_cdf",
    "std_normal_cdf",
    "std_normal_pdf",
    "Quadrature",
    "gauss_legendre",
    "integrate",
]


class InvalidParams(ValueError):
    pass


@dataclass(frozen=True)
class SepParams:
    """Location, scale, shape and asymmetry of a SEP law.

    ``loc`` may be an array (a per-record location shift); the other three
    are scalars.
    """

    loc: float = 0.0
    scale: float = 1.0
    shape: float = 2.0
    asym: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidParams(f"SEP scale must be > 0, got {self.scale}")
        if not (np.isfinite(self.shape) and self.shape > 0):
            raise InvalidParams(f"SEP shape must be > 0, got {self.shape}")
        if not (np.isfinite(self.asym) and self.asym > 0):
            raise InvalidParams(f"SEP asymmetry must be > 0, got {self.asym}")
        if not np.all(np.isfinite(self.loc)):
            raise InvalidParams("SEP location must be finite")

    def shifted(self, loc) -> "SepParams":
        return SepParams(loc=loc, scale=self.scale, shape=self.shape, asym=self.asym)

    @property
    def mode(self):
        return self.loc

    def as_dict(self) -> dict:
        return {"loc": float(self.loc), "scale": self.scale, "shape": self.shape, "asym": self.asym}


def _z(x, p: SepParams):
    return (np.asarray(x, dtype=float) - p.loc) / p.scale


def sep_logpdf(x, p: SepParams):
    z = _z(x, p)
    a, b = p.asym, p.shape
    y = np.where(z >= 0, z / a, -z * a)
    lognorm = (
        math.log(2.0 / (a + 1.0 / a))
        - math.log(p.scale)
        + math.log(b)
        - math.log(2.0)
        - special.gammaln(1.0 / b)
    )
    return lognorm - y**b


def sep_pdf(x, p: SepParams):
    return np.exp(sep_logpdf(x, p))


def sep_cdf(x, p: SepParams):
    z = _z(x, p)
    a, b = p.asym, p.shape
    w_left = 1.0 / (1.0 + a * a)
    left = w_left * special.gammaincc(1.0 / b, np.abs(np.minimum(z, 0.0) * a) ** b)
    right = w_left + (1.0 - w_left) * special.gammainc(1.0 / b, (np.maximum(z, 0.0) / a) ** b)
    return np.where(z < 0, left, right)


def sep_sf(x, p: SepParams):
    z = _z(x, p)
    a, b = p.asym, p.shape
    w_left = 1.0 / (1.0 + a * a)
    left = 1.0 - w_left * special.gammaincc(1.0 / b, np.abs(np.minimum(z, 0.0) * a) ** b)
    right = (1.0 - w_left) * special.gammaincc(1.0 / b, (np.maximum(z, 0.0) / a) ** b)
    return np.where(z < 0, left, right)


def sep_ppf(u, p: SepParams):
    u = np.asarray(u, dtype=float)
    a, b = p.asym, p.shape
    w_left = 1.0 / (1.0 + a * a)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_left = special.gammainccinv(1.0 / b, np.clip(u / w_left, 0.0, 1.0))
        t_right = special.gammaincinv(1.0 / b, np.clip((u - w_left) / (1.0 - w_left), 0.0, 1.0))
    z = np.where(u <= w_left, -(t_left ** (1.0 / b)) / a, a * t_right ** (1.0 / b))
    return p.loc + p.scale * z


def sep_rvs(p: SepParams, size, rng: np.random.Generator):
    """Sample by mixing the two half-laws (each a power of a Gamma variate)."""
    a, b = p.asym, p.shape
    magnitude = rng.standard_gamma(1.0 / b, size=size) ** (1.0 / b)
    right = rng.random(size) < a * a / (1.0 + a * a)
    z = np.where(right, a * magnitude, -magnitude / a)
    return p.loc + p.scale * z


# -- competitor quotes ---------------------------------------------------------
#
# Under the smaller-is-better convention the client-best competitor quote is the
# minimum of the quoting dealers' spreads.  With k ~ Binomial(n, p_quote)
# quoting dealers, P(best > x) = sum_k C(n,k) pq^k (1-pq)^(n-k) (1-cdf)^k
# = (1 - pq cdf(x))^n; k = 0 means no competition (best = +inf).


def _check_count(n, p_quote):
    n = np.asarray(n)
    if np.any(n < 0):
        raise InvalidParams("number of dealers must be >= 0")
    if not (0.0 <= p_quote <= 1.0):
        raise InvalidParams(f"p_quote must lie in [0, 1], got {p_quote}")
    return n


def best_quote_sf(x, p: SepParams, n, p_quote: float = 1.0, side=None):
    """P(best competitor quote > x), i.e. no competitor undercuts ``x``."""
    n = _check_count(n, p_quote)
    return (1.0 - p_quote * sep_cdf(x, p)) ** n


def best_quote_cdf(x, p: SepParams, n, p_quote: float = 1.0, side=None):
    """P(best competitor quote <= x); ``side`` does not change the answer
    because spreads are margins on both sides."""
    return 1.0 - best_quote_sf(x, p, n, p_quote, side)


def best_quote_pdf(x, p: SepParams, n, p_quote: float = 1.0):
    """Defective density of the best competitor quote (mass (1-pq)^n sits at +inf)."""
    n = _check_count(n, p_quote)
    nm1 = np.maximum(n - 1, 0)
    return n * p_quote * sep_pdf(x, p) * (1.0 - p_quote * sep_cdf(x, p)) ** nm1


def cover_density(x, p: SepParams, n, side=None):
    """Density of the client-best of ``n`` i.i.d. SEP quotes: n pdf (1-cdf)^(n-1)."""
    n = np.asarray(n)
    if np.any(n < 1):
        raise InvalidParams("cover density needs n >= 1")
    return n * sep_pdf(x, p) * sep_sf(x, p) ** (n - 1)


def cover_cdf(x, p: SepParams, n, side=None):
    n = np.asarray(n)
    if np.any(n < 1):
        raise InvalidParams("cover distribution needs n >= 1")
    return 1.0 - sep_sf(x, p) ** n


# -- Gaussian ------------------------------------------------------------------


def std_normal_cdf(z):
    return special.ndtr(z)


def std_normal_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


# -- quadrature ----------------------------------------------------------------


@lru_cache(maxsize=32)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1]."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@dataclass(frozen=True)
class Quadrature:
    """Adaptive panel Gauss-Legendre for smooth 1-D integrands.

    Each panel is accepted when its ``order``-point estimate agrees with the
    sum over its two halves; infinite limits are mapped onto (-1, 1) first.
    """

    order: int = 15
    rtol: float = 1e-8
    atol: float = 1e-14
    max_panels: int = 2**12

    def __call__(self, fn, a: float, b: float) -> float:
        return self.integrate(fn, a, b)

    def _panel(self, fn, lo, hi):
        x, w = gauss_legendre(self.order)
        half = 0.5 * (hi - lo)
        return half * float(np.dot(w, fn(lo + half * (x + 1.0))))

    def integrate(self, fn, a: float, b: float) -> float:
        if a == b:
            return 0.0
        if a > b:
            return -self.integrate(fn, b, a)
        g, lo, hi = _finite_map(fn, a, b)
        coarse = sum(self._panel(g, l, h) for l, h in _split(lo, hi, 8))
        scale = max(abs(coarse), self.atol)
        stack = list(_split(lo, hi, 8))
        total = 0.0
        panels = len(stack)
        while stack:
            l, h = stack.pop()
            whole = self._panel(g, l, h)
            m = 0.5 * (l + h)
            halves = self._panel(g, l, m) + self._panel(g, m, h)
            tol = max(self.rtol * scale, self.atol) * (h - l) / (hi - lo)
            if abs(whole - halves) <= tol or panels >= self.max_panels or m in (l, h):
                total += halves
            else:
                stack.append((l, m))
                stack.append((m, h))
                panels += 1
        return total


def _split(lo, hi, k):
    edges = np.linspace(lo, hi, k + 1)
    return list(zip(edges[:-1], edges[1:]))


def _finite_map(fn, a, b):
    """Rewrite the integral of fn over (a, b) as one over a bounded interval."""
    if np.isfinite(a) and np.isfinite(b):
        return (lambda x: np.asarray(fn(x), dtype=float)), a, b
    if not np.isfinite(a) and not np.isfinite(b):
        # x = t / (1 - t^2), t in (-1, 1)
        def g(t):
            t = np.asarray(t, dtype=float)
            x = t / (1.0 - t * t)
            jac = (1.0 + t * t) / (1.0 - t * t) ** 2
            return np.asarray(fn(x), dtype=float) * jac

        return g, -1.0, 1.0
    if np.isfinite(a):
        # x = a + t / (1 - t), t in [0, 1)
        def g(t):
            t = np.asarray(t, dtype=float)
            return np.asarray(fn(a + t / (1.0 - t)), dtype=float) / (1.0 - t) ** 2

        return g, 0.0, 1.0

    def g(t):
        t = np.asarray(t, dtype=float)
        return np.asarray(fn(b - t / (1.0 - t)), dtype=float) / (1.0 - t) ** 2

    return g, 0.0, 1.0


_DEFAULT_QUADRATURE = Quadrature()


def integrate(fn, a: float, b: float, rtol: float = 1e-8) -> float:
    if rtol == _DEFAULT_QUADRATURE.rtol:
        return _DEFAULT_QUADRATURE(fn, a, b)
    return Quadrature(rtol=rtol)(fn, a, b)
