"""Baseline profile of the natural dataset (the reference temperature).

Fits per-channel means and standard deviations (exact two-pass by default,
optional exponential smoother over batches), the lo/hi watermarks at one
sigma, the normative mean layer, its 23-bin z-score histogram, and the
10th/90th percentile envelope of each region feature over natural samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .latent_io import LatentDataset

SIGMA_FLOOR = 1e-12
PROFILE_VERSION = 1


@dataclass
class BaselineProfile:
    channels: int
    height: int
    width: int
    mu_base: np.ndarray  # (C,)
    sigma_base: np.ndarray  # (C,)
    normative_layer: np.ndarray  # (L,)
    normative_hist: np.ndarray  # (23,) counts over z-scored normative layer
    feature_lo: np.ndarray  # per-region-feature low percentile
    feature_hi: np.ndarray  # per-region-feature high percentile
    feature_names: tuple[str, ...]
    d_count: int
    alpha: float | None = None  # None = equal-weight two-pass fit

    def __post_init__(self):
        self.mu_base = np.asarray(self.mu_base, dtype=np.float64)
        self.sigma_base = np.asarray(self.sigma_base, dtype=np.float64)
        self.normative_layer = np.asarray(self.normative_layer, dtype=np.float64)
        self.normative_hist = np.asarray(self.normative_hist, dtype=np.int64)
        self.feature_lo = np.asarray(self.feature_lo, dtype=np.float64)
        self.feature_hi = np.asarray(self.feature_hi, dtype=np.float64)
        if np.any(self.sigma_base < 0):
            raise ValueError("sigma_base must be non-negative")
        if np.any(self.feature_lo > self.feature_hi):
            raise ValueError("feature_lo must not exceed feature_hi")

    @property
    def length(self) -> int:
        return self.channels * self.height * self.width

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    @property
    def lo(self) -> np.ndarray:
        """Per-channel low watermark, mu - sigma."""
        return self.mu_base - self.sigma_base

    @property
    def hi(self) -> np.ndarray:
        """Per-channel high watermark, mu + sigma."""
        return self.mu_base + self.sigma_base


def _require_naturals(naturals: LatentDataset) -> None:
    if len(naturals) == 0:
        raise ValueError("empty input: need at least one natural sample")
    if np.any(naturals.labels != 0):
        raise ValueError("profile requires label-0 samples only")


def _channel_view(matrix: np.ndarray, channels: int) -> np.ndarray:
    # (n, L) -> (n, C, H*W)
    n = matrix.shape[0]
    return matrix.reshape(n, channels, -1)


def fit_channel_stats(
    naturals: LatentDataset,
    alpha: float | None = None,
    batch_size: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel baseline mean and standard deviation.

    With ``alpha=None`` (default) all samples are weighted equally via an
    exact two-pass computation. With a smoothing factor the stats are
    updated batch-by-batch as ``stat <- (1-alpha)*stat + alpha*stat_batch``
    on the mean and the variance, seeded from the first batch; the returned
    sigma is the square root of the smoothed variance.
    """
    _require_naturals(naturals)
    c = naturals.shape[0]
    values = naturals.stack().astype(np.float64)
    per_channel = _channel_view(values, c)
    if alpha is None:
        mu = per_channel.mean(axis=(0, 2))
        var = ((per_channel - mu[None, :, None]) ** 2).mean(axis=(0, 2))
        return mu, np.sqrt(var)
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    mu = None
    var = None
    for start in range(0, len(naturals), batch_size):
        chunk = per_channel[start : start + batch_size]
        b_mu = chunk.mean(axis=(0, 2))
        b_var = chunk.var(axis=(0, 2))
        if mu is None:
            mu, var = b_mu, b_var
        else:
            mu = (1.0 - alpha) * mu + alpha * b_mu
            var = (1.0 - alpha) * var + alpha * b_var
    return mu, np.sqrt(var)


def fit_normative_layer(naturals: LatentDataset) -> np.ndarray:
    """Element-wise mean latent vector over the natural samples."""
    _require_naturals(naturals)
    return naturals.stack().astype(np.float64).mean(axis=0)


def nearest_rank_quantile(sorted_values: np.ndarray, q: float) -> float:
    n = sorted_values.size
    rank = min(max(int(math.ceil(q * n)), 1), n)
    return float(sorted_values[rank - 1])


def fit_feature_percentiles(
    region_features: np.ndarray, lo_pct: float = 0.10, hi_pct: float = 0.90
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-rank percentile envelope per region feature.

    ``region_features`` is (n_samples, n_features) over natural samples.
    """
    feats = np.asarray(region_features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 10:
        raise ValueError("insufficient samples: need >= 10 natural samples")
    if not 0.0 < lo_pct < hi_pct < 1.0:
        raise ValueError("need 0 < lo_pct < hi_pct < 1")
    lo = np.empty(feats.shape[1])
    hi = np.empty(feats.shape[1])
    for j in range(feats.shape[1]):
        col = np.sort(feats[:, j])
        lo[j] = nearest_rank_quantile(col, lo_pct)
        hi[j] = nearest_rank_quantile(col, hi_pct)
    return lo, hi


def fit_profile(
    naturals: LatentDataset,
    alpha: float | None = None,
    lo_pct: float = 0.10,
    hi_pct: float = 0.90,
    batch_size: int = 256,
) -> BaselineProfile:
    """Fit the full baseline profile from a clean dataset."""
    from . import features  # deferred: features builds on this module's types

    _require_naturals(naturals)
    c, h, w = naturals.shape
    mu, sigma = fit_channel_stats(naturals, alpha=alpha, batch_size=batch_size)
    normative = fit_normative_layer(naturals)
    z_norm = features.zscore_values(normative, mu, sigma, c)
    hist = features.histogram23(z_norm)
    region = np.stack(
        [
            features.region_features(
                features.indicator_sets_values(s.values.astype(np.float64), mu, sigma, c)
            )
            for s in naturals.samples
        ]
    )
    f_lo, f_hi = fit_feature_percentiles(region, lo_pct, hi_pct)
    return BaselineProfile(
        channels=c,
        height=h,
        width=w,
        mu_base=mu,
        sigma_base=sigma,
        normative_layer=normative,
        normative_hist=hist,
        feature_lo=f_lo,
        feature_hi=f_hi,
        feature_names=tuple(features.REGION_FEATURE_NAMES),
        d_count=len(naturals),
        alpha=alpha,
    )


# ---------------------------------------------------------------------------
# text serialization (versioned key/value + arrays, one record per line)


def _fmt_array(a: np.ndarray) -> str:
    if a.dtype.kind == "i":
        return " ".join(str(int(v)) for v in a)
    return " ".join(repr(float(v)) for v in a)


def profile_to_text(profile: BaselineProfile) -> str:
    lines = [
        "format afv-baseline-profile",
        f"version {PROFILE_VERSION}",
        f"channels {profile.channels}",
        f"height {profile.height}",
        f"width {profile.width}",
        f"d_count {profile.d_count}",
        f"alpha {'none' if profile.alpha is None else repr(profile.alpha)}",
        f"feature_names {' '.join(profile.feature_names)}",
        f"mu_base {_fmt_array(profile.mu_base)}",
        f"sigma_base {_fmt_array(profile.sigma_base)}",
        f"normative_layer {_fmt_array(profile.normative_layer)}",
        f"normative_hist {_fmt_array(profile.normative_hist)}",
        f"feature_lo {_fmt_array(profile.feature_lo)}",
        f"feature_hi {_fmt_array(profile.feature_hi)}",
    ]
    return "\n".join(lines) + "\n"


def profile_from_text(text: str) -> BaselineProfile:
    fields: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        fields[key] = rest
    if fields.get("format") != "afv-baseline-profile":
        raise ValueError("not a baseline profile file")
    if int(fields["version"]) != PROFILE_VERSION:
        raise ValueError(f"unsupported profile version {fields['version']}")
    alpha_s = fields["alpha"]

    def arr(key, dtype=np.float64):
        return np.array(fields[key].split(), dtype=dtype)

    return BaselineProfile(
        channels=int(fields["channels"]),
        height=int(fields["height"]),
        width=int(fields["width"]),
        mu_base=arr("mu_base"),
        sigma_base=arr("sigma_base"),
        normative_layer=arr("normative_layer"),
        normative_hist=arr("normative_hist", np.int64),
        feature_lo=arr("feature_lo"),
        feature_hi=arr("feature_hi"),
        feature_names=tuple(fields["feature_names"].split()),
        d_count=int(fields["d_count"]),
        alpha=None if alpha_s == "none" else float(alpha_s),
    )


def save_profile(profile: BaselineProfile, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(profile_to_text(profile))


def load_profile(path: str) -> BaselineProfile:
    with open(path, "r", encoding="utf-8") as f:
        return profile_from_text(f.read())
