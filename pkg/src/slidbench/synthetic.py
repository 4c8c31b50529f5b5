"""Synthetic 16-class MFCC-like data for trainability checks and demos.

Each class has its own coefficient mean, per-coefficient scale and temporal
AR(1) smoothing; a sequence is class-filtered Gaussian noise around the
class mean.
"""

import numpy as np

from . import registry
from .model import FeatureSet


def class_generators(k=13, n_classes=registry.N_LANGUAGES, seed=0, separation=1.0):
    rng = np.random.default_rng([seed, 99])
    means = rng.standard_normal((n_classes, k)) * separation
    scales = rng.uniform(0.5, 1.5, size=(n_classes, k))
    rho = rng.uniform(0.0, 0.9, size=n_classes)
    return means, scales, rho


def make_sequence(rng, mean, scale, rho, length):
    k = mean.size
    noise = rng.standard_normal((length, k))
    z = np.empty_like(noise)
    z[0] = noise[0]
    gain = np.sqrt(1.0 - rho**2)
    for t in range(1, length):
        z[t] = rho * z[t - 1] + gain * noise[t]
    return (mean + scale * z).astype(np.float32)


def make_dataset(per_class, t_range=(50, 120), k=13, seed=0, data_seed=1, separation=1.0, prefix="s"):
    """``per_class`` sequences for each of the 16 classes, lengths uniform in
    ``t_range`` (inclusive). Class generators depend only on ``seed``."""
    means, scales, rho = class_generators(k, seed=seed, separation=separation)
    rng = np.random.default_rng([seed, data_seed])
    ids, seqs, labels = [], [], []
    for c in range(registry.N_LANGUAGES):
        for i in range(per_class):
            length = int(rng.integers(t_range[0], t_range[1] + 1))
            seqs.append(make_sequence(rng, means[c], scales[c], rho[c], length))
            ids.append(f"{prefix}{c:02d}_{i:05d}")
            labels.append(c)
    return FeatureSet(ids, seqs, np.asarray(labels, dtype=np.int64))
