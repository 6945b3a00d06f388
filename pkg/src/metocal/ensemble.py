"""Permutation-invariant summaries of exchangeable forecast ensembles.

Individual members of an exchangeable ensemble carry no identity, so only
summaries that are invariant to member relabeling (mean, standard deviation)
may enter a calibration model. Members are sorted before summation so the
invariance holds bit-exactly, not merely to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from metocal.errors import DataError


@dataclass(frozen=True)
class EnsembleSummary:
    """Mean and sample standard deviation (divisor m-1) of one ensemble."""

    mean: float
    sd: float
    size: int


def summarize_ensemble(members) -> EnsembleSummary:
    """Summarize an exchangeable ensemble by its mean and sample sd.

    Requires at least two finite members. The sd uses divisor m-1 and is
    zero exactly when all members are equal.
    """
    arr = np.asarray(members, dtype=np.float64)
    if arr.ndim != 1:
        raise DataError(f"ensemble members must be a 1-d vector, got shape {arr.shape}")
    m = arr.shape[0]
    if m < 2:
        raise DataError(f"ensemble needs at least 2 members, got {m}")
    if not np.all(np.isfinite(arr)):
        raise DataError("ensemble contains a non-finite member")
    srt = np.sort(arr)
    mean = float(np.add.reduce(srt) / m)
    dev = srt - mean
    sd = float(np.sqrt(np.add.reduce(dev * dev) / (m - 1)))
    return EnsembleSummary(mean=mean, sd=sd, size=m)
