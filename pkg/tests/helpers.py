import numpy as np

from rfqcausal.domain import FeatureLayout, RfqDataset, RfqStatus


def make_dataset(delta, X, hit, n_client=None, timestamp=None):
    """An RfqDataset from raw arrays; misses are recorded as Covered."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = len(X)
    if n_client is None:
        n_client = X.shape[1] - 8
    lay = FeatureLayout(n_client)
    hit = np.asarray(hit)
    return RfqDataset(
        layout=lay,
        timestamp=np.arange(n, dtype=float) if timestamp is None else timestamp,
        side=np.ones(n),
        volume=np.ones(n),
        X=X,
        delta_norm=np.asarray(delta, dtype=float),
        delta_benchmark=np.ones(n),
        status=np.where(hit == 1, int(RfqStatus.DONE), int(RfqStatus.COVERED)),
        cover_norm=np.full(n, np.nan),
        call=np.zeros(n),
        axe=np.zeros(n),
        mid_t=np.full(n, 100.0),
        mid_end=np.full(n, 100.0),
    )


def logistic_data(rng, n, weights, intercept=0.0):
    """Rows whose hit law is an exact logistic in [delta, X] (n_client = 1)."""
    Z = rng.standard_normal((n, len(weights)))
    p = 1.0 / (1.0 + np.exp(-(intercept + Z @ np.asarray(weights))))
    y = (rng.random(n) < p).astype(int)
    return Z, y
