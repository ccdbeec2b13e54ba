"""Independent brute-force reference implementations.

Everything here is deliberately written as plain Python loops over scalars,
straight from the feature definitions, so the vectorized library path is
checked against a second, structurally different implementation. Keep this
module free of afvkit imports.
"""

import math

GUARD = 1e-12
BINS = 23
BIN_WIDTH = 6.0 / BINS


def zscores(values, mu, sigma, channels):
    hw = len(values) // channels
    out = []
    for k, v in enumerate(values):
        c = k // hw
        out.append((v - mu[c]) / max(sigma[c], GUARD))
    return out


def aggregates(values, mu, sigma, channels):
    """(c_lo, c_mi, c_hi, c_ov, z_lo, z_mi, z_hi, z_ov) by direct looping."""
    hw = len(values) // channels
    c_lo = c_mi = c_hi = 0
    z_lo = z_mi = z_hi = 0.0
    for k, v in enumerate(values):
        c = k // hw
        lo = mu[c] - sigma[c]
        hi = mu[c] + sigma[c]
        az = abs((v - mu[c]) / max(sigma[c], GUARD))
        if v <= lo:
            c_lo += 1
            z_lo += az
        elif v >= hi:
            c_hi += 1
            z_hi += az
        else:
            c_mi += 1
            z_mi += az
    return c_lo, c_mi, c_hi, c_lo + c_hi, z_lo, z_mi, z_hi, z_lo + z_hi


def region_features(values, mu, sigma, channels):
    c_lo, c_mi, c_hi, c_ov, z_lo, z_mi, z_hi, z_ov = aggregates(values, mu, sigma, channels)
    n = float(len(values))

    def r(num, den):
        return num / max(den, GUARD)

    return [
        r(c_lo + c_hi, n),
        float(c_hi),
        float(c_lo),
        float(c_ov),
        r(c_hi, n),
        r(c_lo, n),
        r(c_hi - c_lo, n),
        z_hi,
        z_lo,
        z_ov,
        r(z_hi, n),
        r(z_lo, n),
        r(z_ov, n),
        z_lo + z_hi,
        z_mi,
        z_ov,
        r(z_lo + z_hi, z_mi),
        r(z_lo + z_hi, c_lo + c_hi),
        z_mi / (c_mi + 1.0),
        r(z_mi, n),
        r(z_mi, z_ov),
        r(z_ov, n),
        r(z_lo + z_hi, c_lo + c_hi),
        r(z_mi, c_mi),
        r(z_ov, c_ov),
    ]


def extrema_features(region, feature_lo, feature_hi):
    flags = []
    for f, lo, hi in zip(region, feature_lo, feature_hi):
        flags.append(1.0 if (f >= hi or f <= lo) else 0.0)
    score = sum(flags)
    return [score, score / len(flags)] + flags


def histogram(z):
    bins = [0] * BINS
    for v in z:
        i = int(math.floor((v + 3.0) / BIN_WIDTH))
        if i < 0:
            i = 0
        elif i > BINS - 1:
            i = BINS - 1
        bins[i] += 1
    return bins


def histogram_features(h_obs, h_ref):
    out = [float(c) for c in h_obs]
    for o, r in zip(h_obs, h_ref):
        out.append(float(o - r) ** 2)
    rel = [float(o - r) / max(float(r), 1.0) for o, r in zip(h_obs, h_ref)]
    out.extend(rel)
    mean = sum(rel) / len(rel)
    var = sum((x - mean) ** 2 for x in rel) / len(rel)
    out.extend([sum(rel), mean, var])
    return out


def emd_sorted_transport(mass_a, mass_b, spacing):
    """1D optimal transport by greedily matching sorted CDF mass."""
    a = list(mass_a)
    b = list(mass_b)
    i = j = 0
    work = 0.0
    while i < len(a) and j < len(b):
        if a[i] <= 1e-15:
            i += 1
            continue
        if b[j] <= 1e-15:
            j += 1
            continue
        moved = min(a[i], b[j])
        work += moved * abs(i - j) * spacing
        a[i] -= moved
        b[j] -= moved
    return work


def wasserstein_tails(h_obs, h_ref):
    out = []
    for lo, hi in ((0, 8), (8, 15), (15, BINS)):
        so = float(sum(h_obs[lo:hi]))
        sr = float(sum(h_ref[lo:hi]))
        if so <= 0.0 or sr <= 0.0:
            out.append(0.0)
            continue
        pa = [c / so for c in h_obs[lo:hi]]
        pb = [c / sr for c in h_ref[lo:hi]]
        out.append(emd_sorted_transport(pa, pb, BIN_WIDTH))
    return out


def core_features(values, mu, sigma, channels, feature_lo, feature_hi, h_ref):
    """Region + extrema + histogram + EMD features (A/B tests excluded)."""
    region = region_features(values, mu, sigma, channels)
    z = zscores(values, mu, sigma, channels)
    h_obs = histogram(z)
    return (
        region
        + extrema_features(region, feature_lo, feature_hi)
        + histogram_features(h_obs, h_ref)
        + wasserstein_tails(h_obs, h_ref)
    )
