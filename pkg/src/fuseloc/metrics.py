"""Localization-error statistics and empirical CDF curves."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class MetricsSummary:
    mean: float
    median: float
    cdf90: float
    count: int
    sorted_errors: np.ndarray

    def row(self) -> tuple[float, float, float]:
        return (self.mean, self.median, self.cdf90)


def euclidean_errors(estimates, truths) -> np.ndarray:
    """Per-sample Euclidean distance in meters between estimate and truth."""
    est = np.asarray(estimates, dtype=np.float64)
    tru = np.asarray(truths, dtype=np.float64)
    if est.shape != tru.shape:
        raise ValueError(f"length/shape mismatch: {est.shape} vs {tru.shape}")
    return np.linalg.norm(est - tru, axis=-1)


def _quantile(sorted_errors: np.ndarray, q: float) -> float:
    """Linear-interpolation quantile at rank q*(N-1) of pre-sorted data."""
    n = sorted_errors.size
    if n == 1:
        return float(sorted_errors[0])
    rank = q * (n - 1)
    lo = math.floor(rank)
    hi = math.ceil(rank)
    frac = rank - lo
    return float(sorted_errors[lo] + (sorted_errors[hi] - sorted_errors[lo]) * frac)


def summarize(errors) -> MetricsSummary:
    """Mean, median and 90th-percentile error of a non-empty error list."""
    arr = np.asarray(errors, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot summarize an empty error list")
    srt = np.sort(arr.ravel())
    return MetricsSummary(
        mean=float(srt.mean()),
        median=_quantile(srt, 0.5),
        cdf90=_quantile(srt, 0.9),
        count=int(srt.size),
        sorted_errors=srt,
    )


def empirical_cdf(errors, value: float) -> float:
    """Fraction of errors less than or equal to ``value``."""
    srt = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    return float(np.searchsorted(srt, value, side="right")) / srt.size


def cdf_curve(errors, resolution: int = 256) -> np.ndarray:
    """Empirical CDF sampled on a uniform grid from 0 to the largest error.

    Returns an (resolution, 2) array of (error, fraction <= error); the
    curve is non-decreasing and ends at 1.0.
    """
    arr = np.asarray(errors, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("cannot build a CDF from an empty error list")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    srt = np.sort(arr)
    grid = np.linspace(0.0, srt[-1], resolution)
    frac = np.searchsorted(srt, grid, side="right") / srt.size
    return np.column_stack([grid, frac])


def format_summary_table(rows: dict[str, MetricsSummary]) -> str:
    """Aligned text table of (method, mean, median, cdf@0.9)."""
    name_w = max([len(k) for k in rows] + [6])
    lines = [f"{'method':<{name_w}}  {'mean':>8}  {'median':>8}  {'cdf@0.9':>8}  {'count':>6}"]
    for name, s in rows.items():
        lines.append(f"{name:<{name_w}}  {s.mean:>8.3f}  {s.median:>8.3f}  "
                     f"{s.cdf90:>8.3f}  {s.count:>6d}")
    return "\n".join(lines)
