"""Classical reference methods: trilateration from ranges (measured or
derived from received power) and nearest-fingerprint interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RANGE_CLIP_M = (0.1, 50.0)


class BaselineError(ValueError):
    pass


@dataclass
class AnchorMap:
    """Known 2-D anchor positions, keyed by id, for one anchor family."""

    positions: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.positions = {k: np.asarray(v, dtype=np.float64)
                          for k, v in self.positions.items()}
        for k, v in self.positions.items():
            if v.shape != (2,) or not np.all(np.isfinite(v)):
                raise BaselineError(f"anchor {k!r} position invalid: {v}")

    def __len__(self) -> int:
        return len(self.positions)

    def array(self, ids=None) -> np.ndarray:
        keys = list(self.positions) if ids is None else list(ids)
        return np.stack([self.positions[k] for k in keys])


# ---------------------------------------------------------------------------
# received power to range


@dataclass
class PathLossModel:
    """Log-distance model: power = ref_power - 10*exponent*log10(d/1m)."""

    ref_power_dbm: float
    exponent: float

    def __post_init__(self):
        if self.exponent <= 0:
            raise BaselineError(f"path-loss exponent must be positive, got {self.exponent}")

    def range_to_rssi(self, distance_m) -> np.ndarray:
        d = np.asarray(distance_m, dtype=np.float64)
        return self.ref_power_dbm - 10.0 * self.exponent * np.log10(d)


def fit_path_loss(distances_m, rssi_dbm) -> PathLossModel:
    """Least squares over log-distance; needs spread in the distances."""
    d = np.asarray(distances_m, dtype=np.float64)
    r = np.asarray(rssi_dbm, dtype=np.float64)
    good = np.isfinite(d) & np.isfinite(r) & (d > 0)
    if good.sum() < 2:
        raise BaselineError("need at least two valid (distance, rssi) pairs")
    x = np.log10(d[good])
    if np.ptp(x) < 1e-9:
        raise BaselineError("distances must span a range to fit the exponent")
    slope, intercept = np.polyfit(x, r[good], 1)
    exponent = max(-slope / 10.0, 1e-3)
    return PathLossModel(ref_power_dbm=float(intercept), exponent=float(exponent))


def rssi_to_range(rssi_dbm, model: PathLossModel) -> np.ndarray:
    """Invert the log-distance model; output clipped to [0.1, 50] m."""
    r = np.asarray(rssi_dbm, dtype=np.float64)
    d = 10.0 ** ((model.ref_power_dbm - r) / (10.0 * model.exponent))
    return np.clip(d, *RANGE_CLIP_M)


# ---------------------------------------------------------------------------
# trilateration


@dataclass
class TrilaterationResult:
    position: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    ill_conditioned: bool


def _collinear(anchors: np.ndarray, tol: float = 1e-9) -> bool:
    centered = anchors - anchors.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    return s.size < 2 or s[1] <= tol * max(s[0], 1.0)


def trilaterate(ranges: dict[str, float], anchors: AnchorMap,
                initial_guess=None, max_iterations: int = 100,
                step_tolerance: float = 1e-9) -> TrilaterationResult:
    """Gauss-Newton fit of a position to anchor ranges.

    Minimizes the sum of squared (distance - range) residuals starting
    from the anchor centroid; a damped retry (Levenberg style) handles
    steps that would increase the residual. Collinear anchor geometry
    is solved anyway but flagged ill-conditioned.
    """
    ids = [k for k, v in ranges.items() if np.isfinite(v)]
    if len(ids) < 3:
        raise BaselineError(f"trilateration needs at least 3 ranges, got {len(ids)}")
    missing = [k for k in ids if k not in anchors.positions]
    if missing:
        raise BaselineError(f"ranges reference unknown anchors: {missing}")
    a = anchors.array(ids)
    r = np.array([float(ranges[k]) for k in ids])
    ill = _collinear(a)

    p = np.asarray(initial_guess, dtype=np.float64) if initial_guess is not None \
        else a.mean(axis=0)
    converged = False
    iterations = 0
    damping = 1e-3
    for iterations in range(1, max_iterations + 1):
        diff = p - a
        dist = np.linalg.norm(diff, axis=1)
        dist = np.maximum(dist, 1e-12)
        residual = dist - r
        jac = diff / dist[:, None]
        jtj = jac.T @ jac
        jtr = jac.T @ residual
        try:
            step = np.linalg.solve(jtj, jtr)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(jtj + damping * np.eye(2), jtr)
        new_p = p - step
        new_res = np.linalg.norm(np.linalg.norm(new_p - a, axis=1) - r)
        if new_res > np.linalg.norm(residual):
            step = np.linalg.solve(jtj + damping * np.eye(2), jtr)
            new_p = p - step
        p = new_p
        if np.linalg.norm(step) < step_tolerance:
            converged = True
            break
    final_residual = float(np.linalg.norm(np.linalg.norm(p - a, axis=1) - r))
    return TrilaterationResult(
        position=p,
        residual_norm=final_residual,
        iterations=iterations,
        converged=converged,
        ill_conditioned=ill,
    )


# ---------------------------------------------------------------------------
# fingerprinting


def knn_fingerprint(query: np.ndarray, features: np.ndarray, coords: np.ndarray,
                    k: int = 2) -> np.ndarray:
    """Inverse-distance interpolation of the k nearest fingerprints.

    Euclidean metric in (standardized) feature space; exact feature
    matches dominate through the 1e-9 distance floor, and equal
    distances break toward the lower database index. A database smaller
    than k degrades to the single nearest entry.
    """
    features = np.asarray(features, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    if features.shape[0] == 0:
        raise BaselineError("empty fingerprint database")
    if features.shape[0] != coords.shape[0]:
        raise BaselineError(f"{features.shape[0]} fingerprints vs {coords.shape[0]} coords")
    d = np.linalg.norm(features - query, axis=1)
    if features.shape[0] < k:
        return coords[int(np.argmin(d))].copy()
    nearest = np.argsort(d, kind="stable")[:k]
    if d[nearest[0]] == 0.0:
        return coords[nearest[0]].copy()
    w = 1.0 / (d[nearest] + 1e-9)
    return (w[:, None] * coords[nearest]).sum(axis=0) / w.sum()
