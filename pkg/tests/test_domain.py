import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rfqcausal.domain import (
    FeatureBundle, FeatureLayout, MissingMidPath, NonPositiveHorizon, Outcome, RevenueKind, RfqDataset, RfqRecord,
    RfqStatus, Side, expected_short_term_revenue, group_status, revenue,
)


def bundle(n=4, sigma=0.3):
    return FeatureBundle(client=(0.1, -0.2), bond=(0.08, 2500.0, 1.5, 1.5, 4.0), rfq=(n, 0.4), volatility=sigma)


def record(status=RfqStatus.DONE, delta=0.5, volume=10.0, side=1, mid=(100.0, 100.0), cover=None, ts=0.0):
    return RfqRecord(timestamp=ts, side=side, volume=volume, features=bundle(), delta_norm=delta,
                     delta_benchmark=1.0, status=status, cover_norm=cover, mid_path=mid)


@pytest.mark.parametrize("raw, grouped", [
    (RfqStatus.DONE, Outcome.HIT), (RfqStatus.TIED_DONE, Outcome.HIT),
    (RfqStatus.TIED_TRADED_AWAY, Outcome.MISSED), (RfqStatus.COVERED, Outcome.MISSED),
    (RfqStatus.OTHER_TRADED_AWAY, Outcome.MISSED), (RfqStatus.PASSED, Outcome.PASSED),
])
def test_group_status_mapping(raw, grouped):
    assert group_status(raw) is grouped
    assert group_status(raw.label) is grouped


def test_group_status_surjective():
    assert {group_status(s) for s in RfqStatus} == set(Outcome)


def test_side_parse():
    assert Side.parse("buy") is Side.BUY and Side.parse("+1") is Side.SELL and Side.parse(-1) is Side.BUY
    with pytest.raises(ValueError):
        Side.parse("hold")


def test_revenue_examples():
    assert revenue(record(mid=(100.0, 100.0)), RevenueKind.END_OF_DAY).value == pytest.approx(5.0)
    assert revenue(record(mid=(100.0, 99.8)), RevenueKind.SHORT_TERM, horizon=1.0).value == pytest.approx(3.0)
    passed = record(status=RfqStatus.PASSED, mid=(100.0, 93.0))
    for kind in (RevenueKind.INSTANTANEOUS, RevenueKind.END_OF_DAY):
        assert revenue(passed, kind).value == 0.0


def test_revenue_errors():
    with pytest.raises(MissingMidPath):
        revenue(record(mid=None), RevenueKind.END_OF_DAY)
    with pytest.raises(NonPositiveHorizon):
        revenue(record(), RevenueKind.SHORT_TERM, horizon=0.0)


def test_round_trip_revenue():
    buy = record(side=-1, mid=(100.0, 100.0), ts=0.0, delta=0.5)
    sell = record(side=1, mid=(100.4, 100.4), ts=60.0, delta=0.25)
    obs = revenue(buy, RevenueKind.ROUND_TRIP, counterpart=sell)
    # 10*0.5 + 10*0.25 + (-1)*10*0.4
    assert obs.value == pytest.approx(3.5)
    assert obs.horizon == 60.0


def test_short_term_equals_instantaneous_without_moves():
    rec = record(mid=(100.0, 100.0))
    assert revenue(rec, RevenueKind.SHORT_TERM, horizon=1.0).value == revenue(rec, RevenueKind.INSTANTANEOUS).value
    assert expected_short_term_revenue(rec, 0.0, 1.0) == pytest.approx(5.0)


def test_instantaneous_revenue_over_corpus(small_data):
    for i in range(0, len(small_data), 97):
        rec = small_data.record(i)
        expected = rec.volume * rec.delta if rec.is_hit else 0.0
        assert revenue(rec, RevenueKind.INSTANTANEOUS).value == pytest.approx(expected, abs=0, rel=0)


def test_record_validation():
    with pytest.raises(ValueError):
        record(volume=0.0)
    with pytest.raises(ValueError):
        FeatureBundle(client=(0.0,), bond=(1.0,) * 5, rfq=(2, 0.1), volatility=-0.1)
    with pytest.raises(ValueError):
        FeatureBundle(client=(math.nan,), bond=(1.0,) * 5, rfq=(2, 0.1), volatility=0.1)


@given(st.lists(st.floats(-1e3, 1e3), min_size=10, max_size=10), st.floats(0, 5))
def test_bundle_vector_round_trip(values, sigma):
    lay = FeatureLayout(2)
    x = np.array([sigma] + values[:2] + values[2:7] + [3.0, values[8]])
    assert np.array_equal(FeatureBundle.from_vector(x, lay).as_vector(), x)


def test_csv_round_trip(tmp_path, small_data):
    part = small_data.subset(np.arange(50))
    path = tmp_path / "rfqs.csv"
    part.to_csv(path)
    back = RfqDataset.read_csv(path)
    assert len(back) == 50
    np.testing.assert_array_equal(back.status, part.status)
    np.testing.assert_array_equal(back.X, part.X)
    np.testing.assert_array_equal(back.delta_norm, part.delta_norm)
    np.testing.assert_array_equal(np.isnan(back.cover_norm), np.isnan(part.cover_norm))
    header = path.read_text().splitlines()[0].split(",")
    assert header[:5] == ["timestamp", "side", "volume", "n_dealers", "sigma"]


def test_cover_not_better_than_winning_quote(small_data):
    hit = small_data.hit == 1
    cov = small_data.cover_norm
    ok = hit & np.isfinite(cov)
    assert np.all(cov[ok] >= small_data.delta_norm[ok])
