import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))  # make tests/oracles.py importable

from afvkit.latent_io import LatentDataset, LatentTensor


def make_dataset(
    rng: np.random.Generator,
    n: int,
    channels: int = 4,
    height: int = 2,
    width: int = 2,
    labels=None,
    mu=None,
    sigma=None,
    class_names=None,
) -> LatentDataset:
    """Gaussian synthetic dataset with per-channel location/scale."""
    c = channels
    mu = np.zeros(c) if mu is None else np.asarray(mu, dtype=float)
    sigma = np.ones(c) if sigma is None else np.asarray(sigma, dtype=float)
    hw = height * width
    samples = []
    for _ in range(n):
        vals = rng.standard_normal(c * hw) * np.repeat(sigma, hw) + np.repeat(mu, hw)
        samples.append(LatentTensor(vals, c, height, width))
    if labels is None:
        labels = np.zeros(n, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if class_names is None:
        class_names = {int(v): f"class_{int(v)}" for v in np.unique(labels)}
        class_names.setdefault(0, "clean")
    return LatentDataset(samples, labels, np.ones(n, dtype=bool), class_names)
