"""Anomaly feature vector (AFV) extraction.

Turns one latent tensor plus a fitted baseline profile into a fixed-layout
feature vector: watermark indicator sets and their count/signal
aggregations, 25 region features, 27 extrema features, 72 histogram
comparison features, 5 A/B test p-values, and 3 earth-mover tail
distances. The canonical core layout has 132 features; PCA/LDA/RNN
embedding columns are appended separately after table-level fitting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import stat_tests
from .baseline import SIGMA_FLOOR, BaselineProfile
from .latent_io import LatentDataset, LatentTensor

GUARD = 1e-12
HIST_BINS = 23
HIST_RANGE = 3.0
BIN_WIDTH = 2.0 * HIST_RANGE / HIST_BINS
# tail/center slices of the 23 bins, split at roughly +/- one sigma
LEFT_SLICE = slice(0, 8)
CENTER_SLICE = slice(8, 15)
RIGHT_SLICE = slice(15, 23)

REGION_FEATURE_NAMES = (
    "error_density",
    "right_error_count",
    "left_error_count",
    "overall_error_count",
    "right_fraction",
    "left_fraction",
    "right_left_imbalance",
    "right_anomaly_signal",
    "left_anomaly_signal",
    "overall_anomaly_signal",
    "right_norm_signal",
    "left_norm_signal",
    "overall_norm_signal",
    "anomaly_error",
    "within_anomaly_error",
    "overall_error",
    "anomaly_within_ratio",
    "anomaly_per_error",
    "within_per_nonerror",
    "within_area_norm",
    "within_overall_ratio",
    "overall_error_ratio",
    "average_anomaly_score",
    "average_within_score",
    "average_overall_score",
)
AB_TEST_NAMES = ("p_normal", "p_channel_means", "p_mean", "p_distribution", "p_variance")
EMD_NAMES = ("emd_left", "emd_center", "emd_right")


@dataclass(frozen=True)
class FeatureToggles:
    """Optional feature-group switches; region + extrema are always on."""

    histograms: bool = True
    stat_tests: bool = True
    wasserstein: bool = True
    pca: bool = False
    lda: bool = False
    rnn_votes: bool = False
    test_subsample: int = 1000
    test_seed: int = 0


@dataclass(frozen=True)
class FeatureLayout:
    """Ordered (group, name) index map shared by every AFV of a run."""

    entries: tuple[tuple[str, str], ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for _, name in self.entries)

    def index_of(self, name: str) -> int:
        for i, (_, n) in enumerate(self.entries):
            if n == name:
                return i
        raise KeyError(name)

    def group_indices(self, group: str) -> np.ndarray:
        return np.array([i for i, (g, _) in enumerate(self.entries) if g == group], dtype=int)

    def extend(self, extra: list[tuple[str, str]]) -> "FeatureLayout":
        return FeatureLayout(self.entries + tuple(extra))


@dataclass
class Afv:
    values: np.ndarray
    layout: FeatureLayout
    label: int = 0
    attack_success: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.layout),):
            raise ValueError("AFV length does not match layout")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("AFV values must be finite")


@dataclass
class IndicatorSets:
    """Disjoint below/within/above watermark membership plus z-scores."""

    s_lo: np.ndarray
    s_mi: np.ndarray
    s_hi: np.ndarray
    s_ov: np.ndarray
    z: np.ndarray


class Aggregates(NamedTuple):
    c_lo: float
    c_mi: float
    c_hi: float
    c_ov: float
    z_lo: float
    z_mi: float
    z_hi: float
    z_ov: float


def _ratio(num: float, den: float) -> float:
    return num / max(den, GUARD)


def zscore_values(values: np.ndarray, mu: np.ndarray, sigma: np.ndarray, channels: int) -> np.ndarray:
    hw = values.size // channels
    mu_flat = np.repeat(mu, hw)
    sd_flat = np.repeat(np.maximum(sigma, SIGMA_FLOOR), hw)
    return (values - mu_flat) / sd_flat


def indicator_sets_values(
    values: np.ndarray, mu: np.ndarray, sigma: np.ndarray, channels: int
) -> IndicatorSets:
    hw = values.size // channels
    lo_flat = np.repeat(mu - sigma, hw)
    hi_flat = np.repeat(mu + sigma, hw)
    s_lo = values <= lo_flat
    # sigma=0 collapses lo == hi; lo wins the tie so the partition stays disjoint
    s_hi = (values >= hi_flat) & ~s_lo
    s_mi = ~(s_lo | s_hi)
    return IndicatorSets(s_lo, s_mi, s_hi, s_lo | s_hi, zscore_values(values, mu, sigma, channels))


def _check_shape(v: LatentTensor, profile: BaselineProfile) -> None:
    if v.shape != profile.shape:
        raise ValueError(f"shape mismatch: tensor {v.shape} vs profile {profile.shape}")


def zscore(v: LatentTensor, profile: BaselineProfile) -> np.ndarray:
    """Channel-wise z-scores of a tensor against the baseline."""
    _check_shape(v, profile)
    return zscore_values(
        v.values.astype(np.float64), profile.mu_base, profile.sigma_base, profile.channels
    )


def indicator_sets(v: LatentTensor, profile: BaselineProfile) -> IndicatorSets:
    """Watermark membership of each value; boundary values go to the tails."""
    _check_shape(v, profile)
    return indicator_sets_values(
        v.values.astype(np.float64), profile.mu_base, profile.sigma_base, profile.channels
    )


def aggregate(sets: IndicatorSets) -> Aggregates:
    """Count and absolute-z-signal totals per indicator set."""
    az = np.abs(sets.z)
    return Aggregates(
        c_lo=float(np.count_nonzero(sets.s_lo)),
        c_mi=float(np.count_nonzero(sets.s_mi)),
        c_hi=float(np.count_nonzero(sets.s_hi)),
        c_ov=float(np.count_nonzero(sets.s_ov)),
        z_lo=float(az[sets.s_lo].sum()),
        z_mi=float(az[sets.s_mi].sum()),
        z_hi=float(az[sets.s_hi].sum()),
        z_ov=float(az[sets.s_ov].sum()),
    )


def region_features(sets: IndicatorSets) -> np.ndarray:
    """The 25 region-based count/signal features."""
    a = aggregate(sets)
    n = float(sets.z.size)
    tail_z = a.z_lo + a.z_hi
    tail_c = a.c_lo + a.c_hi
    return np.array(
        [
            _ratio(tail_c, n),
            a.c_hi,
            a.c_lo,
            a.c_ov,
            _ratio(a.c_hi, n),
            _ratio(a.c_lo, n),
            _ratio(a.c_hi - a.c_lo, n),
            a.z_hi,
            a.z_lo,
            a.z_ov,
            _ratio(a.z_hi, n),
            _ratio(a.z_lo, n),
            _ratio(a.z_ov, n),
            tail_z,
            a.z_mi,
            a.z_ov,
            _ratio(tail_z, a.z_mi),
            _ratio(tail_z, tail_c),
            a.z_mi / (a.c_mi + 1.0),  # denominator +1 kept as designed
            _ratio(a.z_mi, n),
            _ratio(a.z_mi, a.z_ov),
            _ratio(a.z_ov, n),
            _ratio(tail_z, tail_c),
            _ratio(a.z_mi, a.c_mi),
            _ratio(a.z_ov, a.c_ov),
        ]
    )


def extrema_features(region: np.ndarray, profile: BaselineProfile) -> np.ndarray:
    """Score + per-feature flags for region values outside the percentile envelope."""
    if region.shape != profile.feature_lo.shape:
        raise ValueError("region feature count does not match profile percentiles")
    flags = ((region >= profile.feature_hi) | (region <= profile.feature_lo)).astype(np.float64)
    score = float(flags.sum())
    return np.concatenate(([score, score / flags.size], flags))


def histogram23(z: np.ndarray) -> np.ndarray:
    """23-bin count histogram of z over [-3, 3]; out-of-range clamps to edge bins."""
    idx = np.floor((np.asarray(z, dtype=np.float64) + HIST_RANGE) / BIN_WIDTH).astype(np.int64)
    np.clip(idx, 0, HIST_BINS - 1, out=idx)
    return np.bincount(idx, minlength=HIST_BINS)


def histogram_features(h_obs: np.ndarray, h_ref: np.ndarray) -> np.ndarray:
    """Observed counts, squared differences, relative errors, and their stats (72)."""
    ho = np.asarray(h_obs, dtype=np.float64)
    hr = np.asarray(h_ref, dtype=np.float64)
    if ho.shape != (HIST_BINS,) or hr.shape != (HIST_BINS,):
        raise ValueError(f"histograms must have {HIST_BINS} bins")
    diff = ho - hr
    rel = diff / np.maximum(hr, 1.0)  # count domain, so the floor is one count
    return np.concatenate(
        (ho, diff**2, rel, [float(rel.sum()), float(rel.mean()), float(rel.var())])
    )


def _slice_emd(obs: np.ndarray, ref: np.ndarray) -> float:
    mo, mr = float(obs.sum()), float(ref.sum())
    if mo <= 0.0 or mr <= 0.0:
        return 0.0
    delta = obs / mo - ref / mr
    return BIN_WIDTH * float(np.abs(np.cumsum(delta)).sum())


def wasserstein_tail_features(h_obs: np.ndarray, h_ref: np.ndarray) -> np.ndarray:
    """Exact 1D earth-mover distance between tail/center slices of two histograms."""
    ho = np.asarray(h_obs, dtype=np.float64)
    hr = np.asarray(h_ref, dtype=np.float64)
    if ho.shape != (HIST_BINS,) or hr.shape != (HIST_BINS,):
        raise ValueError(f"histograms must have {HIST_BINS} bins")
    return np.array(
        [
            _slice_emd(ho[LEFT_SLICE], hr[LEFT_SLICE]),
            _slice_emd(ho[CENTER_SLICE], hr[CENTER_SLICE]),
            _slice_emd(ho[RIGHT_SLICE], hr[RIGHT_SLICE]),
        ]
    )


def build_layout(toggles: FeatureToggles) -> FeatureLayout:
    entries: list[tuple[str, str]] = [("region", n) for n in REGION_FEATURE_NAMES]
    entries += [("extrema", "extreme_score"), ("extrema", "extreme_score_ratio")]
    entries += [("extrema", f"extreme_flag_{n}") for n in REGION_FEATURE_NAMES]
    if toggles.histograms:
        entries += [("hist_count", f"hist_count_{b:02d}") for b in range(HIST_BINS)]
        entries += [("hist_sqdiff", f"hist_sqdiff_{b:02d}") for b in range(HIST_BINS)]
        entries += [("hist_relerr", f"hist_relerr_{b:02d}") for b in range(HIST_BINS)]
        entries += [
            ("hist_relerr_stats", "relerr_sum"),
            ("hist_relerr_stats", "relerr_mean"),
            ("hist_relerr_stats", "relerr_var"),
        ]
    if toggles.stat_tests:
        entries += [("ab_tests", n) for n in AB_TEST_NAMES]
    if toggles.wasserstein:
        entries += [("emd", n) for n in EMD_NAMES]
    return FeatureLayout(tuple(entries))


@dataclass
class _TestContext:
    """Per-profile precomputation for the A/B test features."""

    obs_idx: np.ndarray
    ref_idx: np.ndarray
    z_ref: np.ndarray
    ch_ref: np.ndarray
    use_channel_means: bool
    channels: int


def _make_test_context(profile: BaselineProfile, toggles: FeatureToggles) -> _TestContext:
    n = min(toggles.test_subsample, profile.length)
    rng = np.random.default_rng(toggles.test_seed)
    obs_idx = np.sort(rng.choice(profile.length, size=n, replace=False))
    ref_idx = np.sort(rng.choice(profile.length, size=n, replace=False))
    z_ref = zscore_values(
        profile.normative_layer, profile.mu_base, profile.sigma_base, profile.channels
    )
    ch_ref = z_ref.reshape(profile.channels, -1).mean(axis=1)
    # Mann-Whitney needs >= 8 values per side; fall back to value subsamples
    # when the layer has too few channels for channel-mean populations.
    return _TestContext(obs_idx, ref_idx, z_ref, ch_ref, profile.channels >= 8, profile.channels)


def _p_or_zero(fn, *args) -> float:
    # Degenerate inputs (e.g. a constant tensor) read as maximally anomalous.
    try:
        return fn(*args).p_value
    except ValueError:
        return 0.0


def _ab_test_features(z_obs: np.ndarray, ctx: _TestContext) -> np.ndarray:
    obs = z_obs[ctx.obs_idx]
    ref = ctx.z_ref[ctx.ref_idx]
    if ctx.use_channel_means:
        ch_obs = z_obs.reshape(ctx.channels, -1).mean(axis=1)
        p_channel = _p_or_zero(stat_tests.mann_whitney_u, ch_obs, ctx.ch_ref)
    else:
        p_channel = _p_or_zero(stat_tests.mann_whitney_u, obs, ref)
    return np.array(
        [
            _p_or_zero(stat_tests.ks_one_sample_normal, obs),
            p_channel,
            _p_or_zero(stat_tests.t_test_welch, obs, ref),
            _p_or_zero(stat_tests.ks_two_sample, obs, ref),
            _p_or_zero(stat_tests.bartlett, obs, ref),
        ]
    )


def _core_vector(
    values: np.ndarray,
    profile: BaselineProfile,
    toggles: FeatureToggles,
    ctx: _TestContext | None,
) -> np.ndarray:
    sets = indicator_sets_values(values, profile.mu_base, profile.sigma_base, profile.channels)
    region = region_features(sets)
    parts = [region, extrema_features(region, profile)]
    if toggles.histograms or toggles.wasserstein:
        h_obs = histogram23(sets.z)
    if toggles.histograms:
        parts.append(histogram_features(h_obs, profile.normative_hist))
    if toggles.stat_tests:
        parts.append(_ab_test_features(sets.z, ctx))
    if toggles.wasserstein:
        parts.append(wasserstein_tail_features(h_obs, profile.normative_hist))
    return np.concatenate(parts)


def extract_afv(
    v: LatentTensor,
    profile: BaselineProfile,
    toggles: FeatureToggles = FeatureToggles(),
    label: int = 0,
    attack_success: bool = True,
) -> Afv:
    """Extract one sample's AFV under the canonical layout."""
    _check_shape(v, profile)
    ctx = _make_test_context(profile, toggles) if toggles.stat_tests else None
    vec = _core_vector(v.values.astype(np.float64), profile, toggles, ctx)
    return Afv(vec, build_layout(toggles), label=label, attack_success=attack_success)


def extract_matrix(
    dataset: LatentDataset,
    profile: BaselineProfile,
    toggles: FeatureToggles = FeatureToggles(),
) -> tuple[np.ndarray, FeatureLayout]:
    """Extract AFVs for a whole dataset; rows keep the dataset's sample order."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.shape != profile.shape:
        raise ValueError(f"shape mismatch: dataset {dataset.shape} vs profile {profile.shape}")
    ctx = _make_test_context(profile, toggles) if toggles.stat_tests else None
    layout = build_layout(toggles)
    out = np.empty((len(dataset), len(layout)))
    for i, s in enumerate(dataset.samples):
        out[i] = _core_vector(s.values.astype(np.float64), profile, toggles, ctx)
    return out, layout
