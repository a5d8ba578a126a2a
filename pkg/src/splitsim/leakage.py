"""Mutual-information leakage proxy between raw inputs and smashed data.

The estimator is the plug-in histogram MI in nats:

    I(X;Y) = sum_{x,y} P(x,y) * log( P(x,y) / (P(x) P(y)) )

over an equal-width binning of each variable's observed range; empty cells
contribute nothing. The per-cell terms are sorted before summation, which
makes I(X;Y) and I(Y;X) bitwise identical (same term multiset).

An honest-but-curious server sees the smashed activations; the leakage
score of a client segment is the mean MI over sampled
(input feature, smashed unit) scalar pairs, so lower scores mean the cut
output tells the server less about the raw input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .errors import DimensionError, InputError
from .protocols import STREAM_LEAKAGE, keyed_rng

Array = np.ndarray


@dataclass
class MIEstimate:
    """Histogram MI in nats, clamped at zero."""

    value: float
    bins: int
    samples: int
    degenerate: bool = False

    def __post_init__(self):
        if self.bins < 2:
            raise InputError("need at least 2 bins")


def mi_from_joint(joint: Array) -> float:
    """MI in nats of a joint histogram (counts or probabilities).

    Cell terms are accumulated in sorted order: transposing the joint
    permutes but never changes the terms, so symmetry holds bitwise.
    """
    # Canonical C layout: a transposed view must take the exact same
    # arithmetic path as an equal contiguous array, or bitwise symmetry
    # breaks in the reductions below.
    joint = np.ascontiguousarray(joint, dtype=np.float64)
    if joint.ndim != 2:
        raise DimensionError("joint histogram must be 2-D")
    total = joint.sum()
    if total <= 0:
        raise InputError("joint histogram is empty")
    p = joint / total
    # Marginals are summed in sorted order over a forced-contiguous buffer:
    # both the sort order and the reduction path are then independent of
    # whether the caller's joint arrived transposed, which keeps
    # mi(x, y) == mi(y, x) bitwise.
    def marginal(m):
        return np.sort(np.ascontiguousarray(m), axis=1).sum(axis=1)

    px = marginal(p)
    py = marginal(p.T)
    ix, iy = np.nonzero(p)
    terms = p[ix, iy] * np.log(p[ix, iy] / (px[ix] * py[iy]))
    value = float(np.sort(terms).sum())
    return max(value, 0.0)


def mutual_information(x: Sequence[float], y: Sequence[float], bins: int = 16) -> MIEstimate:
    """Plug-in MI between two scalar sample vectors.

    Equal-width bins over each variable's observed range. A constant
    variable has no observable range; the estimate is 0 and flagged
    degenerate.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise DimensionError("x and y must have the same length")
    if bins < 2:
        raise InputError("need at least 2 bins")
    if len(x) < bins:
        raise InputError("need at least as many samples as bins")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        return MIEstimate(0.0, bins, len(x), degenerate=True)
    joint, _, _ = np.histogram2d(x, y, bins=bins)
    return MIEstimate(mi_from_joint(joint), bins, len(x))


@dataclass
class LeakageScore:
    value: float
    pairs: int
    bins: int


def smashed_leakage_score(
    client_layers,
    probe_features: Array,
    bins: int = 16,
    n_pairs: int = 64,
    seed: int = 0,
    pairs: Sequence[tuple[int, int]] | None = None,
) -> LeakageScore:
    """Mean pairwise MI between input features and cut-layer units.

    Pairs are ``n_pairs`` random (feature index, unit index) draws from a
    seeded stream unless given explicitly. Accumulation follows the pair
    list order, so scores are deterministic.
    """
    probe_features = nn.as_tensor(probe_features)
    if probe_features.shape[0] == 0:
        raise InputError("probe dataset is empty")
    smashed = nn.forward(client_layers, probe_features).output
    d_in = probe_features.shape[1]
    d_out = smashed.shape[1]
    if pairs is None:
        rng = keyed_rng(seed, STREAM_LEAKAGE)
        pairs = [
            (int(rng.integers(d_in)), int(rng.integers(d_out)))
            for _ in range(n_pairs)
        ]
    values = [
        mutual_information(probe_features[:, f], smashed[:, u], bins).value
        for f, u in pairs
    ]
    return LeakageScore(value=float(np.mean(values)), pairs=len(pairs), bins=bins)
