"""Generative sampler of the RfQ process with intervention support.

A simulation is split in two stages so that interventions can reuse the
same random draws (common random numbers):

``draw_latents``
    contexts, arrival, call/axe, PD/IA, competitor participation and
    quotes, reservation spreads, policy noise and Brownian increments;
``resolve``
    applies the deterministic status rules for a given vector of quoted
    spreads.

Randomness comes from one 64-bit seed.  Rows are generated in fixed-size
blocks, each with its own ``SeedSequence([seed, stream, block])`` stream,
so blocks can be produced in any order (or in parallel) with identical
results.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .distributions import SepParams, sep_rvs
from .domain import (
    BOND_FEATURES,
    FeatureBundle,
    FeatureLayout,
    RfqDataset,
    RfqStatus,
)

BLOCK = 4096
N_MAX_DEALERS = 6
MID_START = 100.0


class InvalidConfig(ValueError):
    pass


def _vec(values, n, name):
    arr = tuple(float(v) for v in (values if values is not None else [0.0] * n))
    if len(arr) != n:
        raise InvalidConfig(f"{name} needs {n} entries, got {len(arr)}")
    return arr


@dataclass(frozen=True)
class GenerativeParams:
    """Every parameter of the generative RfQ model.

    Context vectors follow :class:`FeatureLayout` (``[sigma, CF, BF, RF]``).
    The dealer-quote location is ``sep.loc + b_d*sigma + c_d.CF + d_d.BF +
    e_d.RF`` (the intercept lives in ``sep.loc``).  PD and IA use the
    convention ``P(=1) = 1 / (1 + exp(a + b.CF [+ c.BF]))``, so a large
    positive intercept switches the mechanism off.
    """

    n_client: int = 2
    # arrival intensity (per unit time)
    lam0: float = 1.0
    lam_c: tuple = None
    lam_b: tuple = None
    lam_r: tuple = None
    lam_pd: float = 0.0
    lam_ia: float = 0.0
    lam_call: float = 0.0
    lam_axe: float = 0.0
    call_prob: tuple = (0.1, 0.3)
    # reservation spread (normalized), Gaussian
    a_res: float = 1.0
    b_res: float = 0.0
    c_res: tuple = None
    d_res: tuple = None
    e_res: tuple = None
    f_res: float = 0.0
    sigma_res: float = 0.5
    # competitor quotes (normalized), SEP
    sep: SepParams = SepParams(loc=0.6, scale=0.4, shape=1.6, asym=1.3)
    b_d: float = 0.0
    c_d: tuple = None
    d_d: tuple = None
    e_d: tuple = None
    # latent client states
    a_p: float = 50.0
    b_p: tuple = None
    c_p: tuple = None
    a_ia: float = 50.0
    b_ia: tuple = None
    p_quote: float = 0.8
    drift: float = 0.0
    horizon: float = 1.0
    tie_break: float = 1.0

    def __post_init__(self):
        k, nb, nr = self.n_client, len(BOND_FEATURES), 2
        for name, n in (("lam_c", k), ("lam_b", nb), ("lam_r", nr), ("c_res", k), ("d_res", nb),
                        ("e_res", nr), ("c_d", k), ("d_d", nb), ("e_d", nr), ("b_p", k),
                        ("c_p", nb), ("b_ia", k)):
            object.__setattr__(self, name, _vec(getattr(self, name), n, name))
        if isinstance(self.sep, dict):
            object.__setattr__(self, "sep", SepParams(**self.sep))
        object.__setattr__(self, "call_prob", tuple(float(v) for v in self.call_prob))
        if not self.sigma_res > 0:
            raise InvalidConfig("sigma_res must be positive")
        if not 0.0 <= self.p_quote <= 1.0:
            raise InvalidConfig("p_quote must lie in [0, 1]")
        if not 0.0 <= self.tie_break <= 1.0:
            raise InvalidConfig("tie_break must lie in [0, 1]")
        if len(self.call_prob) != 2 or not all(0.0 <= p <= 1.0 for p in self.call_prob):
            raise InvalidConfig("call_prob must be two probabilities (axe=0, axe=1)")

    @property
    def layout(self) -> FeatureLayout:
        return FeatureLayout(n_client=self.n_client)

    def replace(self, **changes) -> "GenerativeParams":
        return dataclasses.replace(self, **changes)

    # full-width coefficient vectors aligned with the context layout
    @property
    def res_coef(self) -> np.ndarray:
        return np.array((self.b_res,) + self.c_res + self.d_res + self.e_res)

    @property
    def dealer_coef(self) -> np.ndarray:
        return np.array((self.b_d,) + self.c_d + self.d_d + self.e_d)

    @property
    def pd_coef(self) -> np.ndarray:
        return np.array((0.0,) + self.b_p + self.c_p + (0.0, 0.0))

    @property
    def ia_coef(self) -> np.ndarray:
        return np.array((0.0,) + self.b_ia + (0.0,) * (len(BOND_FEATURES) + 2))

    @property
    def intensity_coef(self) -> np.ndarray:
        return np.array((0.0,) + self.lam_c + self.lam_b + self.lam_r)

    def reservation_mean(self, X, ia=0):
        return self.a_res + np.asarray(X) @ self.res_coef + self.f_res * np.asarray(ia)

    def dealer_loc(self, X):
        return self.sep.loc + np.asarray(X) @ self.dealer_coef

    def dealer_sep(self, X) -> SepParams:
        return self.sep.shifted(self.dealer_loc(X))

    def pd_prob(self, X):
        return expit(-(self.a_p + np.asarray(X) @ self.pd_coef))

    def ia_prob(self, X):
        return expit(-(self.a_ia + np.asarray(X) @ self.ia_coef))

    def to_dict(self) -> dict:
        out = {}
        for fld in dataclasses.fields(self):
            v = getattr(self, fld.name)
            if isinstance(v, SepParams):
                v = v.as_dict()
            elif isinstance(v, tuple):
                v = list(v)
            out[fld.name] = v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GenerativeParams":
        d = dict(d)
        if "sep" in d and isinstance(d["sep"], dict):
            d["sep"] = SepParams(**d["sep"])
        names = {fld.name for fld in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidConfig(f"unknown parameter names {sorted(unknown)}")
        return cls(**d)


def rfq_arrival_intensity(params: GenerativeParams, X, pd=0, ia=0, call=0, axe=0):
    """Linear conditional RfQ intensity, clamped at zero."""
    lam = (
        params.lam0
        + np.asarray(X, dtype=float) @ params.intensity_coef
        + params.lam_pd * np.asarray(pd)
        + params.lam_ia * np.asarray(ia)
        + params.lam_call * np.asarray(call)
        + params.lam_axe * np.asarray(axe)
    )
    return np.maximum(lam, 0.0)


def sample_arrival_times(rate: float, horizon: float, rng: np.random.Generator,
                         rate_fn=None, rate_max: float | None = None) -> np.ndarray:
    """Event times of a Poisson process on ``[0, horizon)`` by thinning.

    With ``rate_fn`` (a function of time) candidates are drawn at
    ``rate_max`` and kept with probability ``rate_fn(t) / rate_max``.
    """
    if rate_fn is None:
        rate_fn = lambda t: np.full_like(t, rate)
        rate_max = rate
    if rate_max is None or rate_max <= 0:
        return np.empty(0)
    n = rng.poisson(rate_max * horizon)
    t = np.sort(rng.uniform(0.0, horizon, size=n))
    keep = rng.random(n) * rate_max < np.maximum(rate_fn(t), 0.0)
    return t[keep]


# -- scenario configuration -------------------------------------------------------


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float
    floor: float | None = None

    def draw(self, rng, size):
        x = self.mean + self.sd * rng.standard_normal(size)
        return x if self.floor is None else np.maximum(x, self.floor)


@dataclass(frozen=True)
class FeatureSampler:
    """Independent feature draws; ``n_dealers`` is uniform on ``{n_min..n_max}``."""

    n_client: int = 2
    sigma: Normal = Normal(0.3, 0.08, 0.02)
    client: Normal = Normal(0.0, 1.0)
    dv01: Normal = Normal(0.08, 0.02, 0.005)
    days_to_maturity: Normal = Normal(2500.0, 1200.0, 30.0)
    freq_buy: Normal = Normal(1.5, 0.5, 0.05)
    freq_sell: Normal = Normal(1.5, 0.5, 0.05)
    avg_dealers: Normal = Normal(4.0, 1.0, 1.0)
    n_min: int = 1
    n_max: int = 6
    log_volume: Normal = Normal(math.log(5.0), 0.5)
    delta_benchmark: Normal = Normal(0.1, 0.02, 0.01)

    @property
    def layout(self) -> FeatureLayout:
        return FeatureLayout(self.n_client)

    def draw_client(self, rng, size):
        return self.client.draw(rng, (size, self.n_client)).reshape(size, self.n_client)

    def draw_bond(self, rng, size):
        return np.column_stack([getattr(self, name).draw(rng, size) for name in BOND_FEATURES])

    def draw_n(self, rng, size):
        return rng.integers(self.n_min, self.n_max + 1, size=size)


@dataclass(frozen=True)
class HistoricalPolicy:
    """Confounded dealer policy: ``delta = g0 + g_sigma*sigma + g_bond*(BF.w)
    + g_client*(CF.u) + g_axe*axe + noise``."""

    intercept: float = 0.6
    sigma_coef: float = 0.0
    bond_coef: float = 0.0
    bond_weights: tuple = (0.0,) * len(BOND_FEATURES)
    client_coef: float = 0.0
    client_weights: tuple | None = None
    axe_coef: float = -0.1
    noise_sd: float = 0.25

    def mean(self, X, axe, layout: FeatureLayout):
        X = np.asarray(X)
        out = self.intercept + self.sigma_coef * X[:, 0] + self.axe_coef * np.asarray(axe)
        if self.bond_coef:
            out = out + self.bond_coef * (X[:, layout.bond_slice] @ np.asarray(self.bond_weights, float))
        if self.client_coef:
            u = np.asarray(self.client_weights or [1.0] * layout.n_client, float)
            out = out + self.client_coef * (X[:, layout.client_slice] @ u)
        return out


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete description of one synthetic experiment.

    ``dealer_policy`` is ``"historical"`` (spreads from ``policy``) or
    ``"intervention"`` (spreads drawn uniformly from ``delta_grid``,
    independent of everything else).  ``call_policy`` is ``"historical"``
    (Bernoulli ``params.call_prob[axe]``) or an integer for do(call=c).
    ``candidate_dt`` switches on candidate rows: each row becomes an RfQ
    with probability ``min(1, intensity * dt)``.  ``n_clients`` /
    ``n_bonds`` draw a fixed roster of client and bond feature vectors
    (from ``cell_seed``, defaulting to ``seed``) and ``cell`` pins every
    row to one (client, bond) pair.
    """

    params: GenerativeParams = field(default_factory=GenerativeParams)
    n_rfqs: int = 10_000
    sampler: FeatureSampler = field(default_factory=FeatureSampler)
    dealer_policy: str = "historical"
    policy: HistoricalPolicy = field(default_factory=HistoricalPolicy)
    delta_grid: tuple = ()
    call_policy: str | int = "historical"
    axe_prob: float = 0.2
    candidate_dt: float | None = None
    n_clients: int | None = None
    n_bonds: int | None = None
    cell: tuple | None = None
    seed: int = 0
    cell_seed: int | None = None

    def __post_init__(self):
        if self.n_rfqs < 1:
            raise InvalidConfig("n_rfqs must be >= 1")
        if self.dealer_policy not in ("historical", "intervention"):
            raise InvalidConfig(f"unknown dealer policy {self.dealer_policy!r}")
        if self.dealer_policy == "intervention" and len(self.delta_grid) == 0:
            raise InvalidConfig("intervention policy needs a non-empty delta_grid")
        if self.call_policy != "historical" and int(self.call_policy) not in (0, 1):
            raise InvalidConfig("call_policy must be 'historical', 0 or 1")
        if self.sampler.n_client != self.params.n_client:
            raise InvalidConfig("sampler and params disagree on the number of client features")
        if self.sampler.n_max > N_MAX_DEALERS:
            raise InvalidConfig(f"at most {N_MAX_DEALERS} competing dealers are supported")
        if self.cell is not None and (self.n_clients is None or self.n_bonds is None):
            raise InvalidConfig("a fixed cell needs n_clients and n_bonds")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "delta_grid", tuple(float(d) for d in self.delta_grid))

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def intervene(self, delta=None, call=None) -> "ScenarioConfig":
        """Return the config under do(delta) and/or do(call)."""
        changes = {}
        if delta is not None:
            grid = np.atleast_1d(np.asarray(delta, dtype=float))
            changes.update(dealer_policy="intervention", delta_grid=tuple(grid))
        if call is not None:
            changes.update(call_policy=int(call))
        return self.replace(**changes)


# -- latent draws ---------------------------------------------------------------

_STREAM_ROWS = 0
_STREAM_CELLS = 1


@dataclass
class Latents:
    X: np.ndarray
    side: np.ndarray
    volume: np.ndarray
    delta_benchmark: np.ndarray
    client_id: np.ndarray
    bond_id: np.ndarray
    axe: np.ndarray
    call: np.ndarray
    pd: np.ndarray
    ia: np.ndarray
    rfq: np.ndarray
    k: np.ndarray
    quotes: np.ndarray  # (N, N_MAX_DEALERS); +inf where the dealer does not quote
    delta_res: np.ndarray
    policy_noise: np.ndarray
    grid_u: np.ndarray
    tie_u: np.ndarray
    brownian: np.ndarray
    gaps: np.ndarray

    def __len__(self):
        return len(self.pd)

    def subset(self, idx) -> "Latents":
        return Latents(**{fld.name: getattr(self, fld.name)[idx] for fld in dataclasses.fields(self)})


def _cell_features(config: ScenarioConfig):
    seed = config.seed if config.cell_seed is None else config.cell_seed
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _STREAM_CELLS])))
    s = config.sampler
    client = s.draw_client(rng, config.n_clients)
    bond = s.draw_bond(rng, config.n_bonds)
    return client, bond


def _draw_block(config: ScenarioConfig, block: int, size: int, cells) -> dict:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, _STREAM_ROWS, block])))
    s, p = config.sampler, config.params
    lay = s.layout

    if cells is not None:
        client_tab, bond_tab = cells
        if config.cell is not None:
            cid = np.full(size, int(config.cell[0]))
            bid = np.full(size, int(config.cell[1]))
            rng.integers(0, 1, size=(2, size))  # keep stream layout identical
        else:
            cid = rng.integers(0, config.n_clients, size=size)
            bid = rng.integers(0, config.n_bonds, size=size)
        client = client_tab[cid]
        bond = bond_tab[bid]
    else:
        cid = np.full(size, -1)
        bid = np.full(size, -1)
        client = s.draw_client(rng, size)
        bond = s.draw_bond(rng, size)

    sigma = s.sigma.draw(rng, size)
    n = s.draw_n(rng, size)
    volume = np.exp(s.log_volume.draw(rng, size))
    dbench = s.delta_benchmark.draw(rng, size)
    side = np.where(rng.random(size) < 0.5, -1, 1)
    dv01 = bond[:, 0]
    X = np.empty((size, lay.width))
    X[:, 0] = sigma
    X[:, lay.client_slice] = client
    X[:, lay.bond_slice] = bond
    X[:, lay.n_dealers_col] = n
    X[:, lay.n_dealers_col + 1] = volume * dv01

    axe = (rng.random(size) < config.axe_prob).astype(np.int64)
    u_call = rng.random(size)
    if config.call_policy == "historical":
        call = (u_call < np.where(axe == 1, p.call_prob[1], p.call_prob[0])).astype(np.int64)
    else:
        call = np.full(size, int(config.call_policy), dtype=np.int64)
    pd = (rng.random(size) < p.pd_prob(X)).astype(np.int64)
    ia = (rng.random(size) < p.ia_prob(X)).astype(np.int64)
    u_rfq = rng.random(size)
    if config.candidate_dt is None:
        rfq = np.ones(size, dtype=np.int64)
    else:
        lam = rfq_arrival_intensity(p, X, pd, ia, call, axe)
        rfq = (u_rfq < np.minimum(lam * config.candidate_dt, 1.0)).astype(np.int64)

    participate = rng.random((size, N_MAX_DEALERS)) < p.p_quote
    within = np.arange(N_MAX_DEALERS)[None, :] < n[:, None]
    quoting = participate & within
    raw = sep_rvs(SepParams(0.0, p.sep.scale, p.sep.shape, p.sep.asym), (size, N_MAX_DEALERS), rng)
    quotes = np.where(quoting, raw + p.dealer_loc(X)[:, None], np.inf)
    k = quoting.sum(axis=1)

    res = p.reservation_mean(X, ia) + p.sigma_res * rng.standard_normal(size)
    return dict(
        X=X, side=side, volume=volume, delta_benchmark=dbench, client_id=cid, bond_id=bid,
        axe=axe, call=call, pd=pd, ia=ia, rfq=rfq, k=k, quotes=quotes, delta_res=res,
        policy_noise=rng.standard_normal(size), grid_u=rng.random(size), tie_u=rng.random(size),
        brownian=rng.standard_normal(size), gaps=rng.standard_exponential(size),
    )


def draw_latents(config: ScenarioConfig, n: int | None = None) -> Latents:
    n = config.n_rfqs if n is None else n
    cells = _cell_features(config) if config.n_clients is not None else None
    blocks = []
    for b, start in enumerate(range(0, n, BLOCK)):
        blocks.append(_draw_block(config, b, min(BLOCK, n - start), cells))
    return Latents(**{name: np.concatenate([blk[name] for blk in blocks]) for name in blocks[0]})


def policy_spreads(config: ScenarioConfig, lat: Latents) -> np.ndarray:
    if config.dealer_policy == "intervention":
        grid = np.asarray(config.delta_grid)
        idx = np.minimum((lat.grid_u * len(grid)).astype(np.int64), len(grid) - 1)
        return grid[idx]
    pol = config.policy
    return pol.mean(lat.X, lat.axe, config.sampler.layout) + pol.noise_sd * lat.policy_noise


@dataclass
class Resolution:
    status: np.ndarray
    hit: np.ndarray
    cover_norm: np.ndarray
    best: np.ndarray


def resolve(lat: Latents, delta_norm, tie_break: float = 1.0) -> Resolution:
    """Apply the deterministic status rules to quoted normalized spreads."""
    delta = np.broadcast_to(np.asarray(delta_norm, dtype=float), lat.pd.shape)
    quotes = lat.quotes
    best = quotes.min(axis=1)
    below = (quotes < delta[:, None]).sum(axis=1)
    tied = best == delta
    trade_intent = lat.pd == 0
    win_tie = lat.tie_u < tie_break

    beats = (delta < best) | (tied & win_tie)
    hit = trade_intent & beats & (delta <= lat.delta_res)
    missed = trade_intent & ~beats & (best <= lat.delta_res)

    status = np.full(delta.shape, int(RfqStatus.PASSED), dtype=np.int64)
    status[hit & ~tied] = RfqStatus.DONE
    status[hit & tied] = RfqStatus.TIED_DONE
    status[missed & tied] = RfqStatus.TIED_TRADED_AWAY
    status[missed & ~tied & (below == 1)] = RfqStatus.COVERED
    status[missed & ~tied & (below >= 2)] = RfqStatus.OTHER_TRADED_AWAY

    cover = np.full(delta.shape, np.nan)
    has_comp = np.isfinite(best)
    cover[hit & has_comp] = best[hit & has_comp]
    covered = status == RfqStatus.COVERED
    cover[covered] = delta[covered]
    return Resolution(status=status, hit=hit.astype(np.int64), cover_norm=cover, best=best)


@dataclass
class SyntheticDataset:
    """Simulated RfQs plus the latent draws that produced them.

    ``records`` and ``latents`` are aligned row by row.  In candidate mode
    ``candidates`` holds every candidate row (including those that did not
    turn into an RfQ) with ``rfq`` and ``hit`` flags.
    """

    records: RfqDataset
    latents: Latents
    config: ScenarioConfig
    candidates: dict | None = None

    def __len__(self):
        return len(self.records)

    def write(self, path: str | Path, latent_path: str | Path | None = None) -> None:
        path = Path(path)
        self.records.to_csv(path)
        latent_path = latent_path or path.with_name(path.stem + "_latents.csv")
        write_latents_csv(self.latents, latent_path)


def write_latents_csv(lat: Latents, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pd", "ia", "delta_res", "k"] + [f"quote_{j + 1}" for j in range(N_MAX_DEALERS)] + ["brownian"])
        for i in range(len(lat)):
            cells = ["" if not np.isfinite(v) else repr(float(v)) for v in lat.quotes[i]]
            w.writerow([int(lat.pd[i]), int(lat.ia[i]), repr(float(lat.delta_res[i])), int(lat.k[i])]
                       + cells + [repr(float(lat.brownian[i]))])


def _records(config: ScenarioConfig, lat: Latents, delta: np.ndarray, res: Resolution) -> RfqDataset:
    p = config.params
    lam = rfq_arrival_intensity(p, lat.X, lat.pd, lat.ia, lat.call, lat.axe)
    timestamp = np.cumsum(lat.gaps / np.maximum(lam, 1e-9))
    h = p.horizon
    mid_end = MID_START + p.drift * lat.ia * h + lat.X[:, 0] * math.sqrt(h) * lat.brownian
    return RfqDataset(
        layout=config.sampler.layout,
        timestamp=timestamp,
        side=lat.side,
        volume=lat.volume,
        X=lat.X,
        delta_norm=delta,
        delta_benchmark=lat.delta_benchmark,
        status=res.status,
        cover_norm=res.cover_norm,
        call=lat.call,
        axe=lat.axe,
        mid_t=np.full(len(lat), MID_START),
        mid_end=mid_end,
        client_id=lat.client_id,
        bond_id=lat.bond_id,
        meta={"seed": config.seed},
    )


def simulate(config: ScenarioConfig) -> SyntheticDataset:
    """Sample a synthetic RfQ dataset from the generative model."""
    lat = draw_latents(config)
    delta = policy_spreads(config, lat)
    res = resolve(lat, delta, config.params.tie_break)
    candidates = None
    if config.candidate_dt is not None:
        candidates = dict(
            client_id=lat.client_id, bond_id=lat.bond_id, call=lat.call, axe=lat.axe,
            rfq=lat.rfq, hit=res.hit * lat.rfq, X=lat.X,
        )
        keep = np.flatnonzero(lat.rfq == 1)
        lat = lat.subset(keep)
        delta = delta[keep]
        res = Resolution(res.status[keep], res.hit[keep], res.cover_norm[keep], res.best[keep])
    return SyntheticDataset(records=_records(config, lat, delta, res), latents=lat,
                            config=config, candidates=candidates)


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    stderr: float
    n: int

    def __iter__(self):
        yield self.value
        yield self.stderr


def interventional_sample(
    config: ScenarioConfig,
    delta: float,
    context: FeatureBundle | np.ndarray | None = None,
    n_mc: int = 100_000,
    seed: int | None = None,
) -> tuple[Latents, Resolution]:
    """Latent draws and resolved statuses under do(delta).

    With ``context`` every row is pinned to that feature vector and the
    context-dependent latents are redrawn accordingly; otherwise contexts
    come from the scenario's feature sampler.
    """
    if n_mc < 1:
        raise InvalidConfig("n_mc must be >= 1")
    cfg = config.replace(n_rfqs=n_mc, candidate_dt=None,
                         seed=config.seed if seed is None else seed).intervene(delta=delta)
    lat = draw_latents(cfg)
    if context is not None:
        x = context.as_vector() if isinstance(context, FeatureBundle) else np.asarray(context, float)
        if x.shape != (cfg.sampler.layout.width,):
            raise InvalidConfig("context does not match the feature layout")
        lat.X[:] = x
        lat = _redraw_context_dependent(cfg, lat)
    return lat, resolve(lat, np.full(len(lat), float(delta)), cfg.params.tie_break)


def interventional_hit_prob(
    config: ScenarioConfig,
    delta: float,
    context: FeatureBundle | np.ndarray | None = None,
    n_mc: int = 100_000,
    seed: int | None = None,
) -> MonteCarloEstimate:
    """Monte Carlo estimate of P(hit | do(delta), RfQ, context).

    Without ``context`` the contexts are drawn from the scenario's feature
    sampler, giving the population-level interventional hit rate.
    """
    _, res = interventional_sample(config, delta, context, n_mc, seed)
    p = float(res.hit.mean())
    return MonteCarloEstimate(p, math.sqrt(max(p * (1 - p), 1e-300) / n_mc), n_mc)


def _redraw_context_dependent(cfg: ScenarioConfig, lat: Latents) -> Latents:
    """Recompute the context-dependent quantities after pinning features.

    The uniforms/normals behind PD, IA, quotes and the reservation spread
    are recovered from a fresh stream so the result is a valid draw at the
    pinned context.
    """
    p = cfg.params
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 7, len(lat)])))
    n = len(lat)
    X = lat.X
    lat.pd = (rng.random(n) < p.pd_prob(X)).astype(np.int64)
    lat.ia = (rng.random(n) < p.ia_prob(X)).astype(np.int64)
    raw = sep_rvs(SepParams(0.0, p.sep.scale, p.sep.shape, p.sep.asym), (n, N_MAX_DEALERS), rng)
    participate = rng.random((n, N_MAX_DEALERS)) < p.p_quote
    nd = np.rint(X[:, cfg.sampler.layout.n_dealers_col]).astype(np.int64)
    quoting = participate & (np.arange(N_MAX_DEALERS)[None, :] < nd[:, None])
    lat.quotes = np.where(quoting, raw + p.dealer_loc(X)[:, None], np.inf)
    lat.k = quoting.sum(axis=1)
    lat.delta_res = p.reservation_mean(X, lat.ia) + p.sigma_res * rng.standard_normal(n)
    return lat
