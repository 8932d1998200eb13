"""JAX kernels for the generative likelihood.

Everything here works on a parameter pytree expressed for the (possibly
standardized) design matrix handed in, so the same code serves fitting
(standardized features) and evaluation at user parameters (raw features,
identity standardization).

The SEP CDF is needed at every quadrature node.  Calling an incomplete
gamma routine per node is far too slow, so each evaluation builds a
cubic-Hermite table of ``P(1/shape, s**(2*shape))`` on a uniform grid in
``s = sqrt(|z| / asym-factor)`` (exact values and exact slopes at the
knots) and interpolates.  The square-root coordinate smooths the
``|z|**shape`` cusp at the mode; interpolation error is below 1e-10 for
shapes above one.  Gradients with respect to the shape flow through the
table construction.
"""

from __future__ import annotations

import math
from functools import partial

import numpy as np

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402
from jax import lax  # noqa: E402
from jax.scipy.special import gammaln, ndtr  # noqa: E402

TABLE_SIZE = 4097
TABLE_YMAX = 60.0
TAIL_Y = 45.0
GAUSS_WIDTH = 9.0
TINY = 1e-300
PQ_CAP = 1.0 - 1e-15

# status codes used by the likelihood
HIT_NO_COVER = 0
HIT_COVER = 1
COVERED = 2
OTHER_MISSED = 3
PASSED = 4


# -- incomplete gamma ---------------------------------------------------------------


def gammainc(a, y, n_series: int = 60, n_cf: int = 60):
    """Regularized lower incomplete gamma by series / continued fraction.

    Fixed iteration counts keep it differentiable in both arguments.
    """
    y = jnp.asarray(y, dtype=float)
    use_series = y < a + 1.0
    ys = jnp.where(use_series, y, 0.5)
    yc = jnp.where(use_series, a + 2.0, y)

    def series(k, c):
        term, total = c
        term = term * ys / (a + k)
        return term, total + term

    term0 = jnp.ones_like(ys) / a
    _, tot = lax.fori_loop(1, n_series, series, (term0, term0))
    pos = ys > 0
    ys_safe = jnp.where(pos, ys, 1.0)
    p_series = jnp.where(pos, jnp.exp(a * jnp.log(ys_safe) - ys - gammaln(a)) * tot, 0.0)

    # modified Lentz for the upper tail
    b = yc + 1.0 - a
    c = jnp.full_like(yc, 1.0 / TINY)
    d = 1.0 / b

    def frac(i, st):
        b, c, d, h = st
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        d = jnp.where(jnp.abs(d) < TINY, TINY, d)
        c = b + an / c
        c = jnp.where(jnp.abs(c) < TINY, TINY, c)
        d = 1.0 / d
        return b, c, d, h * d * c

    _, _, _, h = lax.fori_loop(1, n_cf, frac, (b, c, d, d))
    upper = jnp.exp(a * jnp.log(yc) - yc - gammaln(a)) * h
    return jnp.where(use_series, p_series, 1.0 - upper)


# -- SEP ------------------------------------------------------------------------------


def sep_table(shape):
    """Hermite table of G(s) = P(1/shape, s**(2 shape)) and of dG/dshape.

    The shape-derivative table is taken at fixed knots so that the
    interpolant's gradient never has to scatter back into the table.
    """
    b = lax.stop_gradient(shape)
    s_max = TABLE_YMAX ** (1.0 / (2.0 * b))
    s = jnp.linspace(0.0, 1.0, TABLE_SIZE) * s_max
    pos = s > 0
    log_s = jnp.log(jnp.where(pos, s, 1.0))

    def values(bb):
        y = jnp.where(pos, jnp.exp(2.0 * bb * log_s), 0.0)
        return gammainc(1.0 / bb, y), 2.0 * s * bb * jnp.exp(-y - gammaln(1.0 / bb))

    (g, dg), (gb, dgb) = jax.jvp(values, (b,), (jnp.ones_like(b),))
    return shape, s_max / (TABLE_SIZE - 1), g, dg, gb, dgb


def _interp(w, h, g, dg):
    """Cubic Hermite interpolant of a table in s = sqrt(w); w >= 0."""
    pos = w > 0
    s = jnp.where(pos, jnp.sqrt(jnp.where(pos, w, 1.0)), 0.0)
    t = s / h
    i = jnp.clip(jnp.floor(t), 0, TABLE_SIZE - 2).astype(jnp.int32)
    u = jnp.clip(t - i, 0.0, 1.0)
    u2, u3 = u * u, u * u * u
    return ((2 * u3 - 3 * u2 + 1) * g[i] + (u3 - 2 * u2 + u) * h * dg[i]
            + (-2 * u3 + 3 * u2) * g[i + 1] + (u3 - u2) * h * dg[i + 1])


@jax.custom_jvp
def _hermite_cdf(w, shape, h, g, dg, gb, dgb):
    return _interp(w, h, g, dg)


@_hermite_cdf.defjvp
def _hermite_cdf_jvp(primals, tangents):
    w, shape, h, g, dg, gb, dgb = primals
    w_dot, shape_dot = tangents[0], tangents[1]
    # dG/dw in closed form: shape * exp(-w**shape) / Gamma(1/shape)
    dens = shape * jnp.exp(-jnp.maximum(w, 0.0) ** shape - gammaln(1.0 / shape))
    return _interp(w, h, g, dg), dens * w_dot + _interp(w, h, gb, dgb) * shape_dot


def _half_cdf(w, table):
    """G(sqrt(w)) from the table; w >= 0."""
    return _hermite_cdf(w, *table)


def sep_cdf(x, loc, scale, shape, asym, table):
    z = (x - loc) / scale
    wl = 1.0 / (1.0 + asym * asym)
    neg = z < 0
    g = _half_cdf(jnp.where(neg, -z * asym, z / asym), table)
    return jnp.where(neg, wl * (1.0 - g), wl + (1.0 - wl) * g)


def sep_logpdf(x, loc, scale, shape, asym):
    z = (x - loc) / scale
    y = jnp.where(z >= 0, z / asym, -z * asym)
    pos = y > 0
    yb = jnp.where(pos, jnp.where(pos, y, 1.0) ** shape, 0.0)
    lognorm = (jnp.log(2.0 / (asym + 1.0 / asym)) - jnp.log(scale) + jnp.log(shape)
               - math.log(2.0) - gammaln(1.0 / shape))
    return lognorm - yb


def sep_tails(loc, scale, shape, asym):
    """Points beyond which the SEP density is below exp(-TAIL_Y)."""
    r = TAIL_Y ** (1.0 / shape)
    return loc - scale * r / asym, loc + scale * r * asym


# -- natural parameters -------------------------------------------------------------


def natural(theta):
    """Map the unconstrained pytree onto the quantities the model uses."""
    return dict(
        sres=jnp.exp(theta["log_sres"]),
        scale=jnp.exp(theta["log_scale"]),
        shape=jnp.exp(theta["log_shape"]),
        asym=jnp.exp(theta["log_asym"]),
        pq=jax.nn.sigmoid(theta["logit_pq"]),
    )


# -- quadrature helpers -------------------------------------------------------------


def _gl(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return jnp.asarray(x), jnp.asarray(w)


def _segment_nodes(edges, order):
    """Gauss-Legendre nodes/weights on consecutive segments of ``edges``.

    ``edges`` is (..., k+1) and nondecreasing; returns (..., k*order).
    """
    x, w = _gl(order)
    lo, hi = edges[..., :-1, None], edges[..., 1:, None]
    half = 0.5 * (hi - lo)
    nodes = lo + half * (x + 1.0)
    weights = half * w
    shape = edges.shape[:-1] + (-1,)
    return nodes.reshape(shape), weights.reshape(shape)


def _edges(lo, hi, breaks):
    hi = jnp.maximum(hi, lo)
    inner = [jnp.clip(b, lo, hi) for b in breaks]
    # odd-even transposition sort; elementwise min/max keeps the backward pass cheap
    for r in range(len(inner)):
        for i in range(r % 2, len(inner) - 1, 2):
            a, b = inner[i], inner[i + 1]
            inner[i], inner[i + 1] = jnp.minimum(a, b), jnp.maximum(a, b)
    return jnp.stack([lo, *inner, hi], axis=-1)


def _pow_survival(p_beat, n):
    """(1 - p_beat)**n with n possibly zero, stable at p_beat -> 1."""
    return jnp.exp(n * jnp.log1p(-jnp.minimum(p_beat, PQ_CAP)))


# -- per-record status masses -----------------------------------------------------


def _components(theta, X, ia_zero):
    """Reservation means (rows x IA states) and IA weights."""
    mu0 = theta["a_res"] + X @ theta["res"]
    if ia_zero:
        return mu0[:, None], jnp.ones((X.shape[0], 1))
    p_ia = jax.nn.sigmoid(-(theta["a_ia"] + X[:, 1:1 + theta["ia"].shape[0]] @ theta["ia"]))
    mu = jnp.stack([mu0, mu0 + theta["f_res"]], axis=1)
    return mu, jnp.stack([1.0 - p_ia, p_ia], axis=1)


def _pd_prob(theta, X, pd_zero):
    if pd_zero:
        return jnp.zeros(X.shape[0])
    return jax.nn.sigmoid(-(theta["a_p"] + X[:, 1:1 + theta["pd"].shape[0]] @ theta["pd"]))


def _covered_integral(x, nat, loc, mu, order):
    """int_{-inf}^{x} sep_pdf(t) accept(t) dt per row and IA state.

    ``accept(t)`` is the probability that the reservation spread is at
    least ``t``.
    """
    sres = nat["sres"]
    left, right = sep_tails(loc, nat["scale"], nat["shape"], nat["asym"])
    lo = jnp.broadcast_to(left[:, None], mu.shape)
    hi = jnp.minimum(jnp.minimum(x[:, None], mu + GAUSS_WIDTH * sres), right[:, None])
    lb = jnp.broadcast_to(loc[:, None], mu.shape)
    edges = _edges(lo, hi, [lb - nat["scale"] / nat["asym"], lb, lb + nat["scale"] * nat["asym"], mu])
    t, w = _segment_nodes(edges, order)
    dens = jnp.exp(sep_logpdf(t, loc[:, None, None], nat["scale"], nat["shape"], nat["asym"]))
    acc = ndtr((mu[..., None] - t) / sres)
    return jnp.sum(w * dens * acc, axis=-1)


def _other_integral(x, nat, loc, mu, n, table, order):
    """Missed to a competitor with at least one other quote also below ``x``.

    int_{-inf}^{x} n pq sep_pdf(t) accept(t) [(1-pq sep_cdf(t))**(n-1) - (1-pq sep_cdf(x))**(n-1)] dt
    """
    sres, pq = nat["sres"], nat["pq"]
    sep = (nat["scale"], nat["shape"], nat["asym"])
    left, right = sep_tails(loc, *sep)
    lo = jnp.broadcast_to(left[:, None], mu.shape)
    hi = jnp.minimum(jnp.minimum(x[:, None], mu + GAUSS_WIDTH * sres), right[:, None])
    lb = jnp.broadcast_to(loc[:, None], mu.shape)
    edges = _edges(lo, hi, [lb - nat["scale"] / nat["asym"], lb, lb + nat["scale"] * nat["asym"], mu])
    t, w = _segment_nodes(edges, order)
    m = jnp.maximum(n - 1, 0)[:, None, None]
    dens = jnp.exp(sep_logpdf(t, loc[:, None, None], *sep))
    acc = ndtr((mu[..., None] - t) / sres)
    inner = _pow_survival(pq * sep_cdf(t, loc[:, None, None], *sep, table), m)
    outer = _pow_survival(pq * sep_cdf(x, loc, *sep, table), jnp.maximum(n - 1, 0))[:, None]
    return jnp.sum(w * dens * acc * (inner - outer[..., None]), axis=-1) * (n * pq)[:, None]


def _passed_integral(x, nat, loc, mu, n, table, order):
    """int_{-inf}^{x} res_pdf(r) (1 - pq sep_cdf(r))**n dr per row and IA state."""
    sres = nat["sres"]
    lo = mu - GAUSS_WIDTH * sres
    hi = jnp.minimum(x[:, None], mu + GAUSS_WIDTH * sres)
    lb = jnp.broadcast_to(loc[:, None], mu.shape)
    edges = _edges(lo, hi, [lb - nat["scale"] / nat["asym"], lb, lb + nat["scale"] * nat["asym"], mu])
    t, w = _segment_nodes(edges, order)
    res_pdf = jnp.exp(-0.5 * ((t - mu[..., None]) / sres) ** 2) / (sres * math.sqrt(2.0 * math.pi))
    cdf = sep_cdf(t, loc[:, None, None], nat["scale"], nat["shape"], nat["asym"], table)
    return jnp.sum(w * res_pdf * _pow_survival(nat["pq"] * cdf, n[:, None, None]), axis=-1)


def hit_probability(theta, X, n, delta, pd_zero, ia_zero):
    nat = natural(theta)
    table = sep_table(nat["shape"])
    loc = theta["loc"] + X @ theta["dealer"]
    mu, w = _components(theta, X, ia_zero)
    cdf = sep_cdf(delta, loc, nat["scale"], nat["shape"], nat["asym"], table)
    accept = ndtr((mu - delta[:, None]) / nat["sres"])
    return (1.0 - _pd_prob(theta, X, pd_zero)) * jnp.sum(w * accept, axis=1) * _pow_survival(nat["pq"] * cdf, n)


def status_masses(theta, X, n, delta, pd_zero, ia_zero, order=20):
    """Hit, Covered, Passed and other-Missed probabilities for every row."""
    nat = natural(theta)
    table = sep_table(nat["shape"])
    loc = theta["loc"] + X @ theta["dealer"]
    mu, w = _components(theta, X, ia_zero)
    p_pd = _pd_prob(theta, X, pd_zero)
    p_beat = nat["pq"] * sep_cdf(delta, loc, nat["scale"], nat["shape"], nat["asym"], table)
    accept = ndtr((mu - delta[:, None]) / nat["sres"])
    hit = jnp.sum(w * accept, axis=1) * _pow_survival(p_beat, n)
    cov = n * nat["pq"] * _pow_survival(p_beat, jnp.maximum(n - 1, 0)) * jnp.sum(
        w * _covered_integral(delta, nat, loc, mu, order), axis=1)
    pas = jnp.sum(w * _passed_integral(delta, nat, loc, mu, n, table, order), axis=1)
    keep = 1.0 - p_pd
    return dict(hit=keep * hit, covered=keep * cov, passed=p_pd + keep * pas,
                other=keep * (1.0 - hit - cov - pas))


def _safe_log(p):
    return jnp.log(jnp.maximum(p, TINY))


@partial(jax.jit, static_argnames=("pd_zero", "ia_zero", "published", "order"))
def record_loglik(theta, data, pd_zero, ia_zero, published, order=20):
    """Per-row log-likelihood (densities for observed covers).

    ``data`` holds ``X, n, delta, cover, code`` for all rows and the index
    arrays ``i_cov`` (rows needing the covered integral) and ``i_pas``
    (passed rows) and ``i_oth`` (other-missed rows), each of which needs a
    single quadrature.
    """
    X, n, delta, cover, code = data["X"], data["n"], data["delta"], data["cover"], data["code"]
    nat = natural(theta)
    table = sep_table(nat["shape"])
    pq = nat["pq"]
    loc = theta["loc"] + X @ theta["dealer"]
    mu, w = _components(theta, X, ia_zero)
    keep = 1.0 - _pd_prob(theta, X, pd_zero)
    sep = (nat["scale"], nat["shape"], nat["asym"])

    p_beat = pq * sep_cdf(delta, loc, *sep, table)
    accept = jnp.sum(w * ndtr((mu - delta[:, None]) / nat["sres"]), axis=1)
    surv_n = _pow_survival(p_beat, n)
    surv_n1 = _pow_survival(p_beat, jnp.maximum(n - 1, 0))

    # hits
    if published:
        no_cover = accept * (1.0 - jnp.minimum(pq, PQ_CAP)) ** n
    else:
        no_cover = accept * surv_n
    c = jnp.where(code == HIT_COVER, cover, delta)
    pFc = pq * sep_cdf(c, loc, *sep, table)
    dens_c = n * pq * jnp.exp(sep_logpdf(c, loc, *sep)) * _pow_survival(pFc, jnp.maximum(n - 1, 0))
    with_cover = accept * dens_c

    # integrals on the rows that need them
    i_cov, i_pas, i_oth = data["i_cov"], data["i_pas"], data["i_oth"]
    cov = jnp.zeros_like(delta)
    pas = jnp.zeros_like(delta)
    other = jnp.zeros_like(delta)
    if i_cov.shape[0]:
        ic = jnp.sum(w[i_cov] * _covered_integral(delta[i_cov], nat, loc[i_cov], mu[i_cov], order), axis=1)
        cov = cov.at[i_cov].set(n[i_cov] * pq * surv_n1[i_cov] * ic)
    if i_pas.shape[0]:
        ip = jnp.sum(w[i_pas] * _passed_integral(delta[i_pas], nat, loc[i_pas], mu[i_pas], n[i_pas], table, order),
                     axis=1)
        pas = pas.at[i_pas].set(ip)
    if i_oth.shape[0]:
        io = jnp.sum(w[i_oth] * _other_integral(delta[i_oth], nat, loc[i_oth], mu[i_oth], n[i_oth], table, order),
                     axis=1)
        other = other.at[i_oth].set(io)

    p_pd = 1.0 - keep
    ll = jnp.select(
        [code == HIT_NO_COVER, code == HIT_COVER, code == COVERED, code == OTHER_MISSED],
        [_safe_log(keep * no_cover), _safe_log(keep * with_cover), _safe_log(keep * cov),
         _safe_log(keep * other)],
        _safe_log(p_pd + keep * pas),
    )
    return ll


def mean_loglik(theta, data, weights, pd_zero, ia_zero, published, order=20):
    ll = record_loglik(theta, data, pd_zero, ia_zero, published, order)
    return jnp.sum(weights * ll) / jnp.sum(weights)
