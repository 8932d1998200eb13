"""Core RfQ vocabulary: sides, statuses, feature bundles, records and datasets.

Spreads are stored normalized by the liquidity benchmark (``delta_norm``)
together with the benchmark itself, so the price-unit half-spread is
``delta_norm * delta_benchmark``.  The client prefers a *smaller* half-spread
on both sides: a quote wins when it is no larger than every competing quote
and no larger than the client's reservation spread.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


class Side(enum.IntEnum):
    """Dealer side; the value is the multiplier ``s`` in ``P = P_m + s * delta``."""

    BUY = -1
    SELL = 1

    @classmethod
    def parse(cls, value) -> "Side":
        if isinstance(value, str):
            key = value.strip().lower()
            if key in ("buy", "b", "-1"):
                return cls.BUY
            if key in ("sell", "s", "1", "+1"):
                return cls.SELL
            raise ValueError(f"unknown side {value!r}")
        return cls(int(value))


class Outcome(enum.IntEnum):
    HIT = 0
    MISSED = 1
    PASSED = 2


class RfqStatus(enum.IntEnum):
    """Raw platform status of an RfQ from the dealer's point of view."""

    DONE = 0
    TIED_DONE = 1
    TIED_TRADED_AWAY = 2
    COVERED = 3
    OTHER_TRADED_AWAY = 4
    PASSED = 5

    @property
    def label(self) -> str:
        return _STATUS_LABELS[self]

    @classmethod
    def parse(cls, value) -> "RfqStatus":
        if isinstance(value, RfqStatus):
            return value
        if isinstance(value, str):
            key = value.strip().replace(" ", "").replace("_", "").lower()
            for status, label in _STATUS_LABELS.items():
                if label.lower() == key:
                    return status
            raise ValueError(f"unknown RfQ status {value!r}")
        return cls(int(value))


_STATUS_LABELS = {
    RfqStatus.DONE: "Done",
    RfqStatus.TIED_DONE: "TiedDone",
    RfqStatus.TIED_TRADED_AWAY: "TiedTradedAway",
    RfqStatus.COVERED: "Covered",
    RfqStatus.OTHER_TRADED_AWAY: "OtherTradedAway",
    RfqStatus.PASSED: "Passed",
}

# indexed by RfqStatus value
_GROUPING = np.array(
    [Outcome.HIT, Outcome.HIT, Outcome.MISSED, Outcome.MISSED, Outcome.MISSED, Outcome.PASSED],
    dtype=np.int8,
)


def group_status(raw: RfqStatus) -> Outcome:
    """Collapse a raw platform status into Hit / Missed / Passed."""
    return Outcome(int(_GROUPING[int(RfqStatus.parse(raw))]))


def group_status_array(codes: np.ndarray) -> np.ndarray:
    return _GROUPING[np.asarray(codes, dtype=np.int64)]


BOND_FEATURES = ("dv01", "days_to_maturity", "freq_buy", "freq_sell", "avg_dealers")
RFQ_FEATURES = ("n_dealers", "dv01_exposure")


@dataclass(frozen=True)
class FeatureLayout:
    """Column layout of a context vector ``[sigma, CF..., BF..., RF...]``."""

    n_client: int = 2

    @property
    def n_bond(self) -> int:
        return len(BOND_FEATURES)

    @property
    def n_rfq(self) -> int:
        return len(RFQ_FEATURES)

    @property
    def width(self) -> int:
        return 1 + self.n_client + self.n_bond + self.n_rfq

    @property
    def client_slice(self) -> slice:
        return slice(1, 1 + self.n_client)

    @property
    def bond_slice(self) -> slice:
        start = 1 + self.n_client
        return slice(start, start + self.n_bond)

    @property
    def rfq_slice(self) -> slice:
        start = 1 + self.n_client + self.n_bond
        return slice(start, start + self.n_rfq)

    @property
    def n_dealers_col(self) -> int:
        return self.rfq_slice.start

    @property
    def names(self) -> tuple[str, ...]:
        client = tuple(f"client_f{i + 1}" for i in range(self.n_client))
        return ("sigma",) + client + BOND_FEATURES + RFQ_FEATURES

    def group_of(self, name: str) -> str:
        if name == "sigma":
            return "sigma"
        if name.startswith("client_f"):
            return "CF"
        if name in BOND_FEATURES:
            return "BF"
        if name in RFQ_FEATURES:
            return "RF"
        raise KeyError(name)

    def columns_of(self, group: str) -> list[int]:
        """Column indices belonging to a variable group (sigma, CF, BF, RF)."""
        return [i for i, name in enumerate(self.names) if self.group_of(name) == group]


@dataclass(frozen=True)
class FeatureBundle:
    client: tuple[float, ...]
    bond: tuple[float, ...]
    rfq: tuple[float, ...]
    volatility: float

    def __post_init__(self):
        object.__setattr__(self, "client", tuple(float(v) for v in self.client))
        object.__setattr__(self, "bond", tuple(float(v) for v in self.bond))
        object.__setattr__(self, "rfq", tuple(float(v) for v in self.rfq))
        values = self.client + self.bond + self.rfq + (float(self.volatility),)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("feature values must be finite")
        if self.volatility < 0:
            raise ValueError("volatility must be nonnegative")
        if len(self.bond) != len(BOND_FEATURES) or len(self.rfq) != len(RFQ_FEATURES):
            raise ValueError("bond/rfq feature vectors do not match the fixed schema")
        if self.n_dealers < 0:
            raise ValueError("n_dealers must be nonnegative")

    @property
    def n_dealers(self) -> int:
        return int(round(self.rfq[0]))

    @property
    def layout(self) -> FeatureLayout:
        return FeatureLayout(n_client=len(self.client))

    def as_vector(self) -> np.ndarray:
        return np.array((self.volatility,) + self.client + self.bond + self.rfq)

    @classmethod
    def from_vector(cls, x: Sequence[float], layout: FeatureLayout) -> "FeatureBundle":
        x = np.asarray(x, dtype=float)
        if x.shape != (layout.width,):
            raise ValueError(f"expected context of width {layout.width}, got {x.shape}")
        return cls(
            client=tuple(x[layout.client_slice]),
            bond=tuple(x[layout.bond_slice]),
            rfq=tuple(x[layout.rfq_slice]),
            volatility=float(x[0]),
        )


class RevenueKind(enum.Enum):
    INSTANTANEOUS = "instantaneous"
    ROUND_TRIP = "round_trip"
    END_OF_DAY = "end_of_day"
    SHORT_TERM = "short_term"


class MissingMidPath(ValueError):
    pass


class NonPositiveHorizon(ValueError):
    pass


@dataclass(frozen=True)
class RevenueObservation:
    kind: RevenueKind
    value: float
    horizon: float


@dataclass(frozen=True)
class RfqRecord:
    timestamp: float
    side: Side
    volume: float
    features: FeatureBundle
    delta_norm: float
    delta_benchmark: float
    status: RfqStatus
    cover_norm: float | None = None
    call: int = 0
    axe: int = 0
    mid_path: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.volume > 0:
            raise ValueError("volume must be positive")
        if not self.delta_benchmark > 0:
            raise ValueError("delta_benchmark must be positive")
        object.__setattr__(self, "side", Side(self.side))
        object.__setattr__(self, "status", RfqStatus.parse(self.status))

    @property
    def outcome(self) -> Outcome:
        return group_status(self.status)

    @property
    def delta(self) -> float:
        """Quoted half-spread in price units."""
        return self.delta_norm * self.delta_benchmark

    @property
    def is_hit(self) -> bool:
        return self.outcome is Outcome.HIT


def revenue(
    record: RfqRecord,
    kind: RevenueKind,
    horizon: float | None = None,
    counterpart: RfqRecord | None = None,
) -> RevenueObservation:
    """Realized revenue of one RfQ under the chosen definition.

    Mark-to-market kinds use ``v*delta + s*v*(P_end - P_start)`` on a hit and
    zero otherwise.  ``ROUND_TRIP`` needs the closing opposite-side
    ``counterpart``; its mid path end is read from the counterpart's start.
    """
    kind = RevenueKind(kind)
    if kind is RevenueKind.INSTANTANEOUS:
        value = record.volume * record.delta if record.is_hit else 0.0
        return RevenueObservation(kind, value, 0.0)

    if horizon is not None and not horizon > 0:
        raise NonPositiveHorizon(f"horizon must be positive, got {horizon}")
    s = int(record.side)
    v = record.volume

    if kind is RevenueKind.ROUND_TRIP:
        if counterpart is None or record.mid_path is None or counterpart.mid_path is None:
            raise MissingMidPath("round-trip revenue needs both legs' mid prices")
        if int(counterpart.side) != -s:
            raise ValueError("round-trip counterpart must be on the opposite side")
        if not (record.is_hit and counterpart.is_hit):
            return RevenueObservation(kind, 0.0, horizon or counterpart.timestamp - record.timestamp)
        dmid = counterpart.mid_path[0] - record.mid_path[0]
        value = v * record.delta + v * counterpart.delta + s * v * dmid
        return RevenueObservation(kind, value, counterpart.timestamp - record.timestamp)

    if record.mid_path is None:
        raise MissingMidPath(f"{kind.value} needs the mid-price path of the record")
    if not record.is_hit:
        return RevenueObservation(kind, 0.0, horizon or 0.0)
    start, end = record.mid_path
    value = v * record.delta + s * v * (end - start)
    return RevenueObservation(kind, value, horizon or 0.0)


def expected_short_term_revenue(record: RfqRecord, drift: float, horizon: float) -> float:
    """Mean of the short-term flow value given a hit-conditional drift."""
    if not horizon > 0:
        raise NonPositiveHorizon(f"horizon must be positive, got {horizon}")
    if not record.is_hit:
        return 0.0
    return record.volume * (record.delta + int(record.side) * drift * horizon)


@dataclass
class RfqDataset:
    """Columnar collection of RfQ records sharing one feature layout."""

    layout: FeatureLayout
    timestamp: np.ndarray
    side: np.ndarray
    volume: np.ndarray
    X: np.ndarray
    delta_norm: np.ndarray
    delta_benchmark: np.ndarray
    status: np.ndarray
    cover_norm: np.ndarray
    call: np.ndarray
    axe: np.ndarray
    mid_t: np.ndarray
    mid_end: np.ndarray
    client_id: np.ndarray | None = None
    bond_id: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.timestamp)
        self.X = np.asarray(self.X, dtype=float).reshape(n, self.layout.width)
        for name in ("timestamp", "volume", "delta_norm", "delta_benchmark", "cover_norm", "mid_t", "mid_end"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("side", "status", "call", "axe"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        for name in ("side", "volume", "delta_norm", "delta_benchmark", "status",
                     "cover_norm", "call", "axe", "mid_t", "mid_end"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has the wrong length")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("missing or non-finite feature values are rejected")

    def __len__(self) -> int:
        return len(self.timestamp)

    @property
    def outcome(self) -> np.ndarray:
        return group_status_array(self.status)

    @property
    def hit(self) -> np.ndarray:
        return (self.outcome == Outcome.HIT).astype(np.int64)

    @property
    def n_dealers(self) -> np.ndarray:
        return np.rint(self.X[:, self.layout.n_dealers_col]).astype(np.int64)

    @property
    def sigma(self) -> np.ndarray:
        return self.X[:, 0]

    def subset(self, idx) -> "RfqDataset":
        idx = np.asarray(idx)
        opt = lambda a: None if a is None else a[idx]
        return RfqDataset(
            layout=self.layout,
            timestamp=self.timestamp[idx],
            side=self.side[idx],
            volume=self.volume[idx],
            X=self.X[idx],
            delta_norm=self.delta_norm[idx],
            delta_benchmark=self.delta_benchmark[idx],
            status=self.status[idx],
            cover_norm=self.cover_norm[idx],
            call=self.call[idx],
            axe=self.axe[idx],
            mid_t=self.mid_t[idx],
            mid_end=self.mid_end[idx],
            client_id=opt(self.client_id),
            bond_id=opt(self.bond_id),
            meta=dict(self.meta),
        )

    def with_columns(self, **columns) -> "RfqDataset":
        kw = {name: getattr(self, name) for name in self.__dataclass_fields__}
        kw.update(columns)
        kw["meta"] = dict(kw["meta"])
        return RfqDataset(**kw)

    def record(self, i: int) -> RfqRecord:
        cover = self.cover_norm[i]
        mid_t, mid_end = self.mid_t[i], self.mid_end[i]
        return RfqRecord(
            timestamp=float(self.timestamp[i]),
            side=Side(int(self.side[i])),
            volume=float(self.volume[i]),
            features=FeatureBundle.from_vector(self.X[i], self.layout),
            delta_norm=float(self.delta_norm[i]),
            delta_benchmark=float(self.delta_benchmark[i]),
            status=RfqStatus(int(self.status[i])),
            cover_norm=None if math.isnan(cover) else float(cover),
            call=int(self.call[i]),
            axe=int(self.axe[i]),
            mid_path=None if (math.isnan(mid_t) or math.isnan(mid_end)) else (float(mid_t), float(mid_end)),
        )

    def records(self) -> Iterator[RfqRecord]:
        for i in range(len(self)):
            yield self.record(i)

    @classmethod
    def from_records(cls, records: Iterable[RfqRecord]) -> "RfqDataset":
        records = list(records)
        if not records:
            raise ValueError("no records")
        layout = records[0].features.layout
        nan = float("nan")
        return cls(
            layout=layout,
            timestamp=[r.timestamp for r in records],
            side=[int(r.side) for r in records],
            volume=[r.volume for r in records],
            X=np.array([r.features.as_vector() for r in records]),
            delta_norm=[r.delta_norm for r in records],
            delta_benchmark=[r.delta_benchmark for r in records],
            status=[int(r.status) for r in records],
            cover_norm=[nan if r.cover_norm is None else r.cover_norm for r in records],
            call=[r.call for r in records],
            axe=[r.axe for r in records],
            mid_t=[nan if r.mid_path is None else r.mid_path[0] for r in records],
            mid_end=[nan if r.mid_path is None else r.mid_path[1] for r in records],
        )

    # -- CSV ---------------------------------------------------------------

    def csv_header(self) -> list[str]:
        client = [f"client_f{i + 1}" for i in range(self.layout.n_client)]
        return (
            ["timestamp", "side", "volume", "n_dealers", "sigma", *BOND_FEATURES, "dv01_exposure"]
            + client
            + ["delta_norm", "delta_benchmark", "status", "cover_norm", "call", "axe", "mid_t", "mid_end"]
        )

    def to_csv(self, path: str | Path) -> None:
        lay = self.layout
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.csv_header())
            for i in range(len(self)):
                x = self.X[i]
                w.writerow(
                    [_fmt(self.timestamp[i]), int(self.side[i]), _fmt(self.volume[i]),
                     int(round(x[lay.n_dealers_col])), _fmt(x[0])]
                    + [_fmt(v) for v in x[lay.bond_slice]]
                    + [_fmt(x[lay.rfq_slice.start + 1])]
                    + [_fmt(v) for v in x[lay.client_slice]]
                    + [_fmt(self.delta_norm[i]), _fmt(self.delta_benchmark[i]),
                       RfqStatus(int(self.status[i])).label, _fmt(self.cover_norm[i]),
                       int(self.call[i]), int(self.axe[i]), _fmt(self.mid_t[i]), _fmt(self.mid_end[i])]
                )

    @classmethod
    def read_csv(cls, path: str | Path) -> "RfqDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            rows = list(reader)
        n_client = sum(1 for h in header if h.startswith("client_f"))
        layout = FeatureLayout(n_client=n_client)
        missing = [h for h in ("timestamp", "side", "volume", "delta_norm", "status") if h not in header]
        if missing:
            raise ValueError(f"CSV {path} lacks columns {missing}")

        def col(name, parse=float):
            return [parse(r[name]) for r in rows]

        def opt(name):
            return [_parse_opt(r.get(name, "")) for r in rows]

        X = np.empty((len(rows), layout.width))
        X[:, 0] = col("sigma")
        for j in range(n_client):
            X[:, 1 + j] = col(f"client_f{j + 1}")
        for j, name in enumerate(BOND_FEATURES):
            X[:, layout.bond_slice.start + j] = col(name)
        X[:, layout.n_dealers_col] = col("n_dealers")
        X[:, layout.n_dealers_col + 1] = col("dv01_exposure")
        return cls(
            layout=layout,
            timestamp=col("timestamp"),
            side=col("side", lambda s: int(Side.parse(s))),
            volume=col("volume"),
            X=X,
            delta_norm=col("delta_norm"),
            delta_benchmark=col("delta_benchmark"),
            status=col("status", lambda s: int(RfqStatus.parse(s))),
            cover_norm=opt("cover_norm"),
            call=col("call", int),
            axe=col("axe", int),
            mid_t=opt("mid_t"),
            mid_end=opt("mid_end"),
        )


def _fmt(v) -> str:
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def _parse_opt(s: str) -> float:
    s = (s or "").strip()
    return float(s) if s else float("nan")
