"""Generative hit-probability model: closed-form predictor and MLE fit.

The predictor marginalizes the latent PD/IA states and the Binomial
competitor participation in closed form::

    hit(delta) = (1 - p_pd) * sum_a P(IA=a) * accept_a(delta) * (1 - pq sep_cdf(delta))**n

where ``accept_a`` is the probability that the reservation spread of a
client in IA state ``a`` is at least ``delta``.

The likelihood uses the finest status information available per record:
hits with a published cover contribute the best-competitor density at the
cover, Covered records the probability that exactly one competitor beat
the quote and was acceptable, Passed records the price-discovery mass
plus the no-acceptable-quote mass, and the remaining missed records take
the residual probability.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize
from scipy.special import expit, logit, ndtr

import jax
import jax.numpy as jnp
from jax.flatten_util import ravel_pytree

from . import _likelihood as lk
from .distributions import SepParams, integrate, sep_cdf, sep_pdf, std_normal_pdf
from .domain import FeatureBundle, FeatureLayout, Outcome, RfqDataset, RfqStatus
from .simulator import GenerativeParams

MODEL_CARD_FORMAT = "rfqcausal.generative/1"
SEP_NOTE = (
    "two-piece exponential power: z=(x-loc)/scale, a=asym, b=shape; "
    "pdf = 2/(a+1/a)/scale * b/(2 Gamma(1/b)) * exp(-(z/a)**b) for z>=0 and "
    "exp(-(-z*a)**b) for z<0; dealer location = loc + coefficients . context"
)
GROUPS = ("sigma", "CF", "BF", "RF")


class DimensionMismatch(ValueError):
    pass


class NonFiniteLikelihood(FloatingPointError):
    def __init__(self, index: int, message: str = "non-finite log-likelihood"):
        super().__init__(f"{message} at record {index}")
        self.index = index


class InvalidInit(ValueError):
    pass


class DidNotConverge(RuntimeError):
    def __init__(self, report):
        super().__init__("generative fit did not converge")
        self.report = report


def _check_x(X, layout: FeatureLayout):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != layout.width:
        raise DimensionMismatch(f"expected {layout.width} features, got {X.shape[1]}")
    return X


def _context_matrix(context, layout):
    if isinstance(context, FeatureBundle):
        return context.as_vector()[None, :]
    return _check_x(context, layout)


# -- closed-form predictor ----------------------------------------------------------


def _mixture(params: GenerativeParams, X, ia_zero: bool):
    mu0 = params.reservation_mean(X, 0)
    if ia_zero:
        return mu0[:, None], np.ones((len(X), 1))
    p = params.ia_prob(X)
    return np.stack([mu0, mu0 + params.f_res], axis=1), np.stack([1 - p, p], axis=1)


@dataclass(frozen=True)
class GenerativePredictor:
    """Hit probability from a parameter set (satisfies the hit-model contract).

    ``pd_zero`` / ``ia_zero`` switch the latent client states off.
    """

    params: GenerativeParams
    pd_zero: bool = False
    ia_zero: bool = False
    name: str = "generative"

    @property
    def layout(self) -> FeatureLayout:
        return self.params.layout

    @property
    def monotone(self) -> bool:
        return True

    def _parts(self, delta, X):
        p = self.params
        X = _check_x(X, self.layout)
        delta = np.broadcast_to(np.asarray(delta, dtype=float), (len(X),))
        n = np.rint(X[:, self.layout.n_dealers_col])
        sep = p.dealer_sep(X)
        cdf = sep_cdf(delta, sep)
        mu, w = _mixture(p, X, self.ia_zero)
        keep = 1.0 - (0.0 if self.pd_zero else p.pd_prob(X))
        return p, X, delta, n, sep, cdf, mu, w, keep

    def hit_probability_by_ia(self, delta, X):
        """Hit probability given IA=0 and IA=1, columns (0, 1)."""
        p, X, delta, n, sep, cdf, mu, w, keep = self._parts(delta, X)
        mu0 = p.reservation_mean(X, 0)
        mu = np.stack([mu0, mu0 + p.f_res], axis=1)
        accept = ndtr((mu - delta[:, None]) / p.sigma_res)
        return (keep * (1.0 - p.p_quote * cdf) ** n)[:, None] * accept

    def predict(self, data: RfqDataset) -> np.ndarray:
        return self.predict_proba(data.delta_norm, data.X)

    def ia_prob(self, X):
        X = _check_x(X, self.layout)
        return np.zeros(len(X)) if self.ia_zero else self.params.ia_prob(X)

    def predict_proba(self, delta, X):
        p, X, delta, n, sep, cdf, mu, w, keep = self._parts(delta, X)
        accept = np.sum(w * ndtr((mu - delta[:, None]) / p.sigma_res), axis=1)
        return keep * accept * (1.0 - p.p_quote * cdf) ** n

    def derivative(self, delta, X):
        """Analytic derivative of the hit probability in the spread."""
        p, X, delta, n, sep, cdf, mu, w, keep = self._parts(delta, X)
        z = (mu - delta[:, None]) / p.sigma_res
        accept = np.sum(w * ndtr(z), axis=1)
        d_accept = -np.sum(w * std_normal_pdf(z), axis=1) / p.sigma_res
        base = 1.0 - p.p_quote * cdf
        unbeaten = base**n
        d_unbeaten = np.where(n > 0, -n * p.p_quote * sep_pdf(delta, sep) * base ** np.maximum(n - 1, 0), 0.0)
        return keep * (d_accept * unbeaten + accept * d_unbeaten)

    def describe(self) -> dict:
        return {"kind": self.name, "pd_zero": self.pd_zero, "ia_zero": self.ia_zero,
                "params": self.params.to_dict()}


def hit_probability(delta, context, params: GenerativeParams, pd_zero=False, ia_zero=False):
    """Closed-form P(hit | do(delta), RfQ, context)."""
    X = _context_matrix(context, params.layout)
    out = GenerativePredictor(params, pd_zero, ia_zero).predict_proba(delta, X)
    return float(out[0]) if np.ndim(delta) == 0 and len(out) == 1 else out


def status_probabilities(delta: float, context, params: GenerativeParams,
                         pd_zero=False, ia_zero=False, rtol: float = 1e-10) -> dict:
    """Status-group probabilities for one record by adaptive quadrature.

    Slow reference implementation; ``missed`` is computed directly (not as
    a residual), so ``hit + missed + passed`` is a genuine check.
    """
    X = _context_matrix(context, params.layout)
    x = X[0]
    n = int(round(x[params.layout.n_dealers_col]))
    pq = params.p_quote
    sep = params.dealer_sep(X)
    sep = SepParams(float(sep.loc[0]), sep.scale, sep.shape, sep.asym)
    mu, w = _mixture(params, X, ia_zero)
    mu, w = mu[0], w[0]
    sres = params.sigma_res
    p_pd = 0.0 if pd_zero else float(params.pd_prob(X)[0])
    cdf = lambda t: sep_cdf(t, sep)
    pdf = lambda t: sep_pdf(t, sep)
    best_pdf = lambda t: n * pq * pdf(t) * (1.0 - pq * cdf(t)) ** max(n - 1, 0)
    cdf_delta = float(cdf(delta))

    hit = cov = pas = mis = 0.0
    for mu_a, w_a in zip(mu, w):
        accept = lambda t: ndtr((mu_a - t) / sres)
        res_pdf = lambda t: std_normal_pdf((t - mu_a) / sres) / sres
        hit += w_a * float(accept(delta)) * (1.0 - pq * cdf_delta) ** n
        if n > 0:
            cov += w_a * n * pq * (1.0 - pq * cdf_delta) ** (n - 1) * integrate(
                lambda t: pdf(t) * accept(t), -np.inf, delta, rtol)
            mis += w_a * integrate(lambda t: best_pdf(t) * accept(t), -np.inf, delta, rtol)
        pas += w_a * integrate(lambda t: res_pdf(t) * (1.0 - pq * cdf(t)) ** n, -np.inf, delta, rtol)
    keep = 1.0 - p_pd
    return {
        "hit": keep * hit,
        "covered": keep * cov,
        "other_missed": keep * (mis - cov),
        "missed": keep * mis,
        "passed": p_pd + keep * pas,
    }


# -- parameter mapping --------------------------------------------------------------


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardization":
        m = X.mean(axis=0)
        s = X.std(axis=0)
        return cls(m, np.where(s > 1e-12, s, 1.0))

    @classmethod
    def identity(cls, width) -> "Standardization":
        return cls(np.zeros(width), np.ones(width))

    def apply(self, X):
        return (X - self.mean) / self.scale


def _to_theta(p: GenerativeParams, st: Standardization) -> dict:
    """GenerativeParams -> unconstrained pytree on standardized features."""
    m, s = st.mean, st.scale
    k = p.n_client
    res, dealer = p.res_coef * s, p.dealer_coef * s
    pd_cols = slice(1, 1 + k + 5)
    pd = p.pd_coef[pd_cols] * s[pd_cols]
    ia = p.ia_coef[1:1 + k] * s[1:1 + k]
    return {
        "a_res": p.a_res + p.res_coef @ m,
        "res": res,
        "log_sres": math.log(p.sigma_res),
        "f_res": p.f_res,
        "loc": p.sep.loc + p.dealer_coef @ m,
        "dealer": dealer,
        "log_scale": math.log(p.sep.scale),
        "log_shape": math.log(p.sep.shape),
        "log_asym": math.log(p.sep.asym),
        "logit_pq": float(logit(np.clip(p.p_quote, 1e-9, 1 - 1e-9))),
        "a_p": p.a_p + p.pd_coef[pd_cols] @ m[pd_cols],
        "pd": pd,
        "a_ia": p.a_ia + p.ia_coef[1:1 + k] @ m[1:1 + k],
        "ia": ia,
    }


def _from_theta(theta: dict, st: Standardization, template: GenerativeParams) -> GenerativeParams:
    m, s = st.mean, st.scale
    t = {k: np.asarray(v, dtype=float) for k, v in theta.items()}
    k = template.n_client
    lay = template.layout
    res = t["res"] / s
    dealer = t["dealer"] / s
    pd_cols = slice(1, 1 + k + 5)
    pd = t["pd"] / s[pd_cols]
    ia = t["ia"] / s[1:1 + k]
    split = lambda v: (float(v[0]), tuple(v[lay.client_slice]), tuple(v[lay.bond_slice]), tuple(v[lay.rfq_slice]))
    b_res, c_res, d_res, e_res = split(res)
    b_d, c_d, d_d, e_d = split(dealer)
    return template.replace(
        a_res=float(t["a_res"] - res @ m),
        b_res=b_res, c_res=c_res, d_res=d_res, e_res=e_res,
        f_res=float(t["f_res"]),
        sigma_res=float(np.exp(t["log_sres"])),
        sep=SepParams(float(t["loc"] - dealer @ m), float(np.exp(t["log_scale"])),
                      float(np.exp(t["log_shape"])), float(np.exp(t["log_asym"]))),
        b_d=b_d, c_d=c_d, d_d=d_d, e_d=e_d,
        p_quote=float(expit(t["logit_pq"])),
        a_p=float(t["a_p"] - pd @ m[pd_cols]),
        b_p=tuple(pd[:k]), c_p=tuple(pd[k:]),
        a_ia=float(t["a_ia"] - ia @ m[1:1 + k]),
        b_ia=tuple(ia),
    )


def _free_mask(theta: dict, layout: FeatureLayout, opts: "FitOptions") -> dict:
    """Boolean pytree: which unconstrained coordinates the optimizer moves."""
    cols = np.zeros(layout.width, dtype=bool)
    for g in opts.conditioning:
        cols[layout.columns_of(g)] = True
    k = layout.n_client
    mask = {name: np.ones(np.shape(v), dtype=bool) for name, v in theta.items()}
    mask["res"] = cols.copy()
    mask["dealer"] = cols.copy()
    mask["pd"] = cols[1:1 + k + 5].copy()
    mask["ia"] = cols[1:1 + k].copy()
    if opts.pd_zero:
        mask["a_p"] = np.zeros((), bool)
        mask["pd"][:] = False
    if opts.ia_zero:
        mask["a_ia"] = np.zeros((), bool)
        mask["ia"][:] = False
        mask["f_res"] = np.zeros((), bool)
    for name in opts.fixed:
        if name not in mask:
            raise InvalidInit(f"unknown parameter block {name!r}")
        mask[name] = np.zeros(np.shape(mask[name]), bool)
    return mask


def _zero_excluded(theta: dict, layout: FeatureLayout, conditioning) -> dict:
    cols = np.zeros(layout.width, dtype=bool)
    for g in conditioning:
        cols[layout.columns_of(g)] = True
    k = layout.n_client
    out = dict(theta)
    out["res"] = np.where(cols, theta["res"], 0.0)
    out["dealer"] = np.where(cols, theta["dealer"], 0.0)
    out["pd"] = np.where(cols[1:1 + k + 5], theta["pd"], 0.0)
    out["ia"] = np.where(cols[1:1 + k], theta["ia"], 0.0)
    return out


# -- data preparation ---------------------------------------------------------------


def likelihood_codes(data: RfqDataset, cover_policy: str = "published") -> np.ndarray:
    status = data.status
    outcome = data.outcome
    has_cover = np.isfinite(data.cover_norm)
    code = np.full(len(data), lk.OTHER_MISSED, dtype=np.int64)
    hit = outcome == Outcome.HIT
    code[hit & has_cover] = lk.HIT_COVER
    code[hit & ~has_cover] = lk.HIT_NO_COVER
    if cover_policy == "ignore":
        code[hit] = lk.HIT_NO_COVER
    code[status == RfqStatus.COVERED] = lk.COVERED
    code[outcome == Outcome.PASSED] = lk.PASSED
    return code


def _prepare(data: RfqDataset, st: Standardization, cover_policy: str) -> dict:
    code = likelihood_codes(data, cover_policy)
    if np.any(~np.isfinite(data.delta_norm)):
        raise NonFiniteLikelihood(int(np.flatnonzero(~np.isfinite(data.delta_norm))[0]), "non-finite spread")
    cover = np.where(code == lk.HIT_COVER, data.cover_norm, data.delta_norm)
    return {
        "X": jnp.asarray(st.apply(data.X)),
        "n": jnp.asarray(data.n_dealers.astype(float)),
        "delta": jnp.asarray(data.delta_norm),
        "cover": jnp.asarray(cover),
        "code": jnp.asarray(code),
        "i_cov": jnp.asarray(np.flatnonzero(code == lk.COVERED)),
        "i_pas": jnp.asarray(np.flatnonzero(code == lk.PASSED)),
        "i_oth": jnp.asarray(np.flatnonzero(code == lk.OTHER_MISSED)),
    }


def _theta_jnp(theta):
    return {k: jnp.asarray(v, dtype=float) for k, v in theta.items()}


def record_log_likelihood(data: RfqDataset, params: GenerativeParams, pd_zero=False, ia_zero=False,
                          cover_policy: str = "published") -> np.ndarray:
    """Per-record log-likelihood terms at ``params``."""
    if params.n_client != data.layout.n_client:
        raise DimensionMismatch("parameters and dataset disagree on client features")
    st = Standardization.identity(data.layout.width)
    prepared = _prepare(data, st, cover_policy)
    ll = np.asarray(lk.record_loglik(_theta_jnp(_to_theta(params, st)), prepared, pd_zero, ia_zero,
                                     cover_policy == "published"))
    bad = np.flatnonzero(~np.isfinite(ll))
    if bad.size:
        raise NonFiniteLikelihood(int(bad[0]))
    return ll


def log_likelihood(data: RfqDataset, params: GenerativeParams, pd_zero=False, ia_zero=False,
                   cover_policy: str = "published", weights=None) -> float:
    ll = record_log_likelihood(data, params, pd_zero, ia_zero, cover_policy)
    if weights is not None:
        ll = ll * np.asarray(weights, dtype=float)
    return float(math.fsum(ll))


def status_masses(delta, X, params: GenerativeParams, pd_zero=False, ia_zero=False, order: int = 20) -> dict:
    """Vectorized hit/covered/passed/other-missed probabilities (fixed quadrature)."""
    X = _check_x(X, params.layout)
    st = Standardization.identity(params.layout.width)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), (len(X),))
    n = np.rint(X[:, params.layout.n_dealers_col])
    out = lk.status_masses(_theta_jnp(_to_theta(params, st)), jnp.asarray(X), jnp.asarray(n),
                           jnp.asarray(delta), pd_zero, ia_zero, order)
    return {k: np.asarray(v) for k, v in out.items()}


# -- fitting -------------------------------------------------------------------------


@dataclass(frozen=True)
class FitOptions:
    """Switches for the generative MLE.

    ``conditioning`` lists the feature groups allowed into the regressions
    (excluded groups keep zero coefficients); ``fixed`` names parameter
    blocks held at their initial values.
    """

    pd_zero: bool = True
    ia_zero: bool = True
    cover_policy: str = "published"
    conditioning: tuple = GROUPS
    fixed: tuple = ()
    restarts: int = 3
    jitter: float = 0.1
    gtol: float = 1e-6
    ftol: float = 1e-10
    max_iter: int = 1000
    class_weights: bool = False
    standard_errors: bool = False
    quad_order: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.cover_policy not in ("published", "ignore"):
            raise ValueError(f"unknown cover policy {self.cover_policy!r}")
        unknown = set(self.conditioning) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown feature groups {sorted(unknown)}")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass
class GenerativeFitReport:
    params: GenerativeParams
    log_likelihood: float
    iterations: int
    converged: bool
    grad_max_norm: float
    rel_change: float
    standard_errors: dict | None = None
    options: FitOptions = field(default_factory=FitOptions)
    restarts: list = field(default_factory=list)
    n_records: int = 0
    data_hash: str = ""

    @property
    def predictor(self) -> GenerativePredictor:
        return GenerativePredictor(self.params, self.options.pd_zero, self.options.ia_zero)

    def model_card(self) -> dict:
        return {
            "format": MODEL_CARD_FORMAT,
            "sep_parameterization": SEP_NOTE,
            "flags": {"pd_zero": self.options.pd_zero, "ia_zero": self.options.ia_zero,
                      "cover_policy": self.options.cover_policy,
                      "conditioning": list(self.options.conditioning)},
            "seed": self.options.seed,
            "data_sha256": self.data_hash,
            "n_records": self.n_records,
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "converged": self.converged,
            "grad_max_norm": self.grad_max_norm,
            "rel_change": self.rel_change,
            "params": self.params.to_dict(),
            "standard_errors": self.standard_errors,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.model_card(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model_card(path: str | Path) -> GenerativePredictor:
    card = json.loads(Path(path).read_text(encoding="utf-8"))
    if card.get("format") != MODEL_CARD_FORMAT:
        raise ValueError(f"{path}: not a generative model card")
    flags = card["flags"]
    return GenerativePredictor(GenerativeParams.from_dict(card["params"]), flags["pd_zero"], flags["ia_zero"])


def data_hash(data: RfqDataset) -> str:
    h = hashlib.sha256()
    for arr in (data.X, data.delta_norm, data.status, data.cover_norm):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def default_init(data: RfqDataset, template: GenerativeParams | None = None) -> GenerativeParams:
    """Data-driven starting point with all slope coefficients at zero."""
    template = template or GenerativeParams(n_client=data.layout.n_client)
    d = data.delta_norm
    covers = data.cover_norm[np.isfinite(data.cover_norm)]
    ref = covers if covers.size >= 20 else d
    spread = max(float(np.subtract(*np.percentile(ref, [75, 25]))) / 1.35, 0.05)
    zeros = GenerativeParams(n_client=data.layout.n_client)
    return zeros.replace(
        lam0=template.lam0, lam_c=template.lam_c, lam_b=template.lam_b, lam_r=template.lam_r,
        lam_pd=template.lam_pd, lam_ia=template.lam_ia, lam_call=template.lam_call, lam_axe=template.lam_axe,
        call_prob=template.call_prob, drift=template.drift, horizon=template.horizon,
        tie_break=template.tie_break,
        a_res=float(np.percentile(d, 75)),
        sigma_res=max(float(np.std(d)), 0.05),
        sep=SepParams(float(np.median(ref)), spread, 2.0, 1.0),
        p_quote=0.5,
        a_p=2.0, a_ia=2.0,
    )


def _balanced_weights(hit):
    n = len(hit)
    n1 = int(hit.sum())
    n0 = n - n1
    if n0 == 0 or n1 == 0:
        return np.ones(n)
    return np.where(hit == 1, n / (2.0 * n1), n / (2.0 * n0))


def fit(data: RfqDataset, init: GenerativeParams | None = None, options: FitOptions | None = None,
        raise_on_failure: bool = False) -> GenerativeFitReport:
    """Maximum-likelihood fit by L-BFGS-B with automatic gradients."""
    opts = options or FitOptions()
    if len(data) == 0:
        raise ValueError("no records to fit")
    init = init or default_init(data)
    if init.n_client != data.layout.n_client:
        raise InvalidInit("init has the wrong number of client coefficients")

    st = Standardization.fit(data.X)
    prepared = _prepare(data, st, opts.cover_policy)
    weights = jnp.asarray(_balanced_weights(data.hit) if opts.class_weights else np.ones(len(data)))
    published = opts.cover_policy == "published"

    theta0 = _zero_excluded(_to_theta(init, st), data.layout, opts.conditioning)
    mask_tree = _free_mask(theta0, data.layout, opts)
    flat0, unravel = ravel_pytree(_theta_jnp(theta0))
    flat0 = np.asarray(flat0)
    mask, _ = ravel_pytree({k: jnp.asarray(v, dtype=float) for k, v in mask_tree.items()})
    free = np.flatnonzero(np.asarray(mask) > 0.5)
    if not np.all(np.isfinite(flat0)):
        raise InvalidInit("initial parameters are not finite")

    free_j = jnp.asarray(free)

    def objective(u_free, base, prepared, weights):
        flat = base.at[free_j].set(u_free)
        return -lk.mean_loglik(unravel(flat), prepared, weights, opts.pd_zero, opts.ia_zero, published,
                               opts.quad_order)

    value_and_grad = jax.jit(jax.value_and_grad(objective))

    def fun(u, base):
        v, g = value_and_grad(jnp.asarray(u), base, prepared, weights)
        v, g = float(v), np.asarray(g, dtype=float)
        if not np.isfinite(v):
            return 1e30, np.zeros_like(g)
        return v, g

    rng = np.random.default_rng(np.random.SeedSequence([opts.seed, 11]))
    base = jnp.asarray(flat0)
    runs = []
    for r in range(opts.restarts):
        u0 = flat0[free].copy()
        if r > 0:
            u0 = u0 + opts.jitter * rng.standard_normal(u0.shape)
        history = []
        res = optimize.minimize(
            fun, u0, args=(base,), jac=True, method="L-BFGS-B",
            options={"gtol": opts.gtol, "ftol": opts.ftol, "maxiter": opts.max_iter, "maxcor": 20},
            callback=lambda xk: history.append(xk.copy()),
        )
        v, g = fun(res.x, base)
        runs.append({"restart": r, "nll": v, "iterations": int(res.nit), "success": bool(res.success),
                     "message": str(res.message), "x": res.x, "grad_max": float(np.max(np.abs(g)))})

    best = min(runs, key=lambda d: (round(d["nll"], 10), float(np.linalg.norm(d["x"]))))
    flat = np.asarray(base).copy()
    flat[free] = best["x"]
    theta = {k: np.asarray(v) for k, v in unravel(jnp.asarray(flat)).items()}
    params = _from_theta(theta, st, init)

    ll = float(log_likelihood(data, params, opts.pd_zero, opts.ia_zero, opts.cover_policy))
    grad_max = best["grad_max"]
    prev_nll = [d["nll"] for d in runs]
    rel_change = abs(best["nll"] - sorted(prev_nll)[min(1, len(prev_nll) - 1)]) / max(abs(best["nll"]), 1.0)
    converged = best["success"] or grad_max <= opts.gtol

    se = None
    if opts.standard_errors:
        se = _standard_errors(lambda u, b: objective(u, b, prepared, weights), best["x"], base, free,
                              unravel, st, init, len(data))

    report = GenerativeFitReport(
        params=params,
        log_likelihood=ll,
        iterations=best["iterations"],
        converged=bool(converged),
        grad_max_norm=grad_max,
        rel_change=rel_change,
        standard_errors=se,
        options=opts,
        restarts=[{k: v for k, v in d.items() if k != "x"} for d in runs],
        n_records=len(data),
        data_hash=data_hash(data),
    )
    if raise_on_failure and not report.converged:
        raise DidNotConverge(report)
    return report


def _natural_vector(theta, st: Standardization, n_client: int):
    """Raw-unit parameters as a flat jax vector (for the delta method)."""
    m, s = jnp.asarray(st.mean), jnp.asarray(st.scale)
    k = n_client
    res = theta["res"] / s
    dealer = theta["dealer"] / s
    return jnp.concatenate([
        jnp.atleast_1d(theta["a_res"] - res @ m), res, jnp.atleast_1d(jnp.exp(theta["log_sres"])),
        jnp.atleast_1d(theta["loc"] - dealer @ m), dealer,
        jnp.exp(jnp.stack([theta["log_scale"], theta["log_shape"], theta["log_asym"]])),
        jnp.atleast_1d(jax.nn.sigmoid(theta["logit_pq"])),
        jnp.atleast_1d(theta["f_res"]),
        theta["pd"] / s[1:1 + k + 5], theta["ia"] / s[1:1 + k],
    ])


def natural_names(layout: FeatureLayout) -> list[str]:
    cols = list(layout.names)
    k = layout.n_client
    return (["a_res"] + [f"res:{c}" for c in cols] + ["sigma_res", "sep.loc"] + [f"dealer:{c}" for c in cols]
            + ["sep.scale", "sep.shape", "sep.asym", "p_quote", "f_res"]
            + [f"pd:{c}" for c in cols[1:1 + k + 5]] + [f"ia:{c}" for c in cols[1:1 + k]])


def _standard_errors(objective, u, base, free, unravel, st, init, n_records):
    """Observed-information standard errors in raw units via the delta method."""
    u = jnp.asarray(u)
    grad = jax.grad(objective)
    hvp = jax.jit(lambda v: jax.jvp(lambda x: grad(x, base), (u,), (v,))[1])
    eye = np.eye(len(u))
    # one Hessian-vector product per column keeps memory at one gradient pass
    hess = np.column_stack([np.asarray(hvp(jnp.asarray(e))) for e in eye]) * n_records
    hess = 0.5 * (hess + hess.T)
    try:
        cov_u = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        cov_u = np.linalg.pinv(hess)

    def nat(uf):
        return _natural_vector(unravel(base.at[free].set(uf)), st, init.n_client)

    J = np.asarray(jax.jacobian(nat)(u))
    cov = J @ cov_u @ J.T
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return dict(zip(natural_names(init.layout), map(float, se)))


def fit_generative(data: RfqDataset, init=None, **option_kw) -> GenerativeFitReport:
    return fit(data, init, FitOptions(**option_kw))


def replace_options(opts: FitOptions, **kw) -> FitOptions:
    return dataclasses.replace(opts, **kw)
