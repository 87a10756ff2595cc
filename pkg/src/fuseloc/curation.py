"""Measurement curation: CSI calibration and compression, clipping,
standardization, and sliding-window extraction.

Raw channel snapshots arrive in FFT storage order. Curation drops the
null subcarriers, reorders the survivors into signed (fft-shifted)
order so the spectrum is contiguous, L1-normalizes the amplitudes to
cancel receiver gain, and compresses each spectrum to the coefficients
of a least-squares polynomial over rescaled subcarrier indices.

Scalar sensors are clipped (UWB range at 10 m, RSSI at 0 dBm); missing
anchor readings are imputed at the clip value and flagged invalid in a
mask that travels with the features.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

UWB_RANGE_CLIP_M = 10.0
RSSI_CLIP_DBM = 0.0
UWB_POWER_IMPUTE_DBM = 0.0  # missing power readings land at the dBm ceiling

SENSOR_NAMES = ("rssi", "csi", "uwb", "imu")


class CurationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# raw data model


@dataclass
class RawSample:
    """One time step of multi-modal measurements; NaN marks a missing reading."""

    timestamp: float
    rssi: np.ndarray        # (L_w,) dBm
    csi: np.ndarray         # (L_w, N_c) complex
    uwb_range: np.ndarray   # (L_u,) meters
    uwb_power: np.ndarray   # (L_u,) dBm
    imu: np.ndarray         # (9,) accel, gyro, magnetic
    coord: np.ndarray       # (2,) ground-truth meters

    def __post_init__(self):
        if not np.all(np.isfinite(self.coord)):
            raise CurationError(f"ground-truth coordinate must be finite, got {self.coord}")


@dataclass
class Recording:
    """Column-stacked series of RawSamples plus dataset-level constants."""

    timestamps: np.ndarray   # (N,)
    coords: np.ndarray       # (N, 2)
    rssi: np.ndarray         # (N, L_w)
    csi: np.ndarray          # (N, L_w, N_c) complex
    uwb_range: np.ndarray    # (N, L_u)
    uwb_power: np.ndarray    # (N, L_u)
    imu: np.ndarray          # (N, 9)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.timestamps.shape[0]

    @property
    def l_wifi(self) -> int:
        return self.rssi.shape[1]

    @property
    def l_uwb(self) -> int:
        return self.uwb_range.shape[1]

    @property
    def n_subcarriers(self) -> int:
        return self.csi.shape[2]

    def sample(self, i: int) -> RawSample:
        return RawSample(
            timestamp=float(self.timestamps[i]),
            rssi=self.rssi[i],
            csi=self.csi[i],
            uwb_range=self.uwb_range[i],
            uwb_power=self.uwb_power[i],
            imu=self.imu[i],
            coord=self.coords[i],
        )


# ---------------------------------------------------------------------------
# CSI calibration and compression


def default_null_indices(n_subcarriers: int = 64) -> tuple[int, ...]:
    """Guard and DC bins of 20 MHz OFDM, in FFT storage order.

    For 64 subcarriers these are signed indices -32..-27, 0 and 27..31,
    leaving 52 survivors. Other sizes null only the DC bin.
    """
    if n_subcarriers == 64:
        signed = list(range(-32, -26)) + [0] + list(range(27, 32))
        return tuple(sorted(s % 64 for s in signed))
    return (0,)


def flipped_subcarrier_indices(n_subcarriers: int, null_indices) -> np.ndarray:
    """Signed indices of surviving subcarriers, in flipped (shifted) order."""
    nulls = set(int(i) for i in null_indices)
    bad = [i for i in nulls if not 0 <= i < n_subcarriers]
    if bad:
        raise CurationError(f"null indices {bad} outside [0, {n_subcarriers})")
    signed = np.arange(-(n_subcarriers // 2), n_subcarriers - n_subcarriers // 2)
    keep = np.array([s % n_subcarriers not in nulls for s in signed])
    if not keep.any():
        raise CurationError("every subcarrier is null")
    return signed[keep]


def remove_null_and_flip(raw_csi: np.ndarray, null_indices) -> np.ndarray:
    """Amplitudes of non-null subcarriers, reordered to signed order."""
    raw_csi = np.asarray(raw_csi)
    n = raw_csi.shape[-1]
    signed = flipped_subcarrier_indices(n, null_indices)
    shifted = np.fft.fftshift(np.abs(raw_csi), axes=-1)
    positions = signed + n // 2  # signed order starts at -n//2
    return shifted[..., positions]


def normalize_csi(amplitudes: np.ndarray) -> np.ndarray:
    """L1-normalize a spectrum so receiver gain cancels out."""
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    total = amplitudes.sum()
    if total <= 0.0:
        raise CurationError("dead capture: all CSI amplitudes are zero")
    return amplitudes / total


@dataclass
class CsiPolyCoeffs:
    """Polynomial compression of one calibrated spectrum.

    Coefficients are in the rescaled basis: subcarrier indices mapped
    affinely onto [-1, 1] before fitting, which keeps the normal
    equations well conditioned.
    """

    coeffs: np.ndarray
    order: int

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != (self.order + 1,):
            raise CurationError(
                f"expected {self.order + 1} coefficients, got shape {self.coeffs.shape}")
        if not np.all(np.isfinite(self.coeffs)):
            raise CurationError("polynomial coefficients must be finite")


def _rescale_indices(indices: np.ndarray) -> np.ndarray:
    lo, hi = indices.min(), indices.max()
    half = (hi - lo) / 2.0
    if half == 0.0:
        return np.zeros_like(indices, dtype=np.float64)
    return (indices - (lo + hi) / 2.0) / half


def polynomial_basis(subcarrier_indices, order: int) -> np.ndarray:
    """Vandermonde basis over indices rescaled to [-1, 1]."""
    idx = np.asarray(subcarrier_indices, dtype=np.float64)
    return np.polynomial.polynomial.polyvander(_rescale_indices(idx), order)


def fit_polynomial(amplitudes, subcarrier_indices, order: int) -> CsiPolyCoeffs:
    """Least-squares polynomial compression of one spectrum."""
    amps = np.asarray(amplitudes, dtype=np.float64)
    idx = np.asarray(subcarrier_indices, dtype=np.float64)
    if amps.shape != idx.shape:
        raise CurationError(f"amplitudes {amps.shape} vs indices {idx.shape}")
    if len(np.unique(idx)) != idx.size:
        raise CurationError("subcarrier indices must be distinct")
    if amps.size <= order:
        raise CurationError(
            f"need more than order={order} points to fit, got {amps.size}")
    basis = polynomial_basis(idx, order)
    coeffs, _, rank, _ = np.linalg.lstsq(basis, amps, rcond=None)
    if rank < order + 1:
        raise CurationError(f"rank-deficient polynomial basis (rank {rank})")
    return CsiPolyCoeffs(coeffs, order)


def eval_polynomial(fit: CsiPolyCoeffs, subcarrier_indices) -> np.ndarray:
    """Reconstruct the spectrum a fit describes, on the same index grid."""
    return polynomial_basis(subcarrier_indices, fit.order) @ fit.coeffs


# ---------------------------------------------------------------------------
# clipping


def clip_rssi(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clip at 0 dBm; missing values land at the clip with mask 0."""
    values = np.asarray(values, dtype=np.float64)
    mask = np.isfinite(values).astype(np.float64)
    clipped = np.where(mask > 0, np.minimum(values, RSSI_CLIP_DBM), RSSI_CLIP_DBM)
    return clipped, mask


def clip_uwb(ranges: np.ndarray, powers: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Clip ranges at 10 m; a missing reading invalidates the whole anchor."""
    ranges = np.asarray(ranges, dtype=np.float64)
    powers = np.asarray(powers, dtype=np.float64)
    mask = (np.isfinite(ranges) & np.isfinite(powers)).astype(np.float64)
    r = np.where(mask > 0, np.minimum(ranges, UWB_RANGE_CLIP_M), UWB_RANGE_CLIP_M)
    p = np.where(mask > 0, powers, UWB_POWER_IMPUTE_DBM)
    return r, p, mask


def clip_features(sample: RawSample) -> RawSample:
    """Clipped copy of a sample with missing readings imputed.

    The per-anchor validity masks are recoverable from the original
    sample (``np.isfinite``); ``curate_sample`` carries them forward.
    """
    rssi, _ = clip_rssi(sample.rssi)
    ranges, powers, _ = clip_uwb(sample.uwb_range, sample.uwb_power)
    return replace(sample, rssi=rssi, uwb_range=ranges, uwb_power=powers)


# ---------------------------------------------------------------------------
# full per-sample curation


@dataclass
class CurationConfig:
    n_subcarriers: int = 64
    null_indices: tuple[int, ...] = ()
    poly_order: int = 8

    def __post_init__(self):
        if not self.null_indices:
            self.null_indices = default_null_indices(self.n_subcarriers)
        self.null_indices = tuple(sorted(int(i) for i in self.null_indices))

    @property
    def surviving_indices(self) -> np.ndarray:
        return flipped_subcarrier_indices(self.n_subcarriers, self.null_indices)

    @property
    def coeffs_per_anchor(self) -> int:
        return self.poly_order + 1


@dataclass
class CuratedSample:
    """Feature view of one time step after calibration and clipping."""

    rssi: np.ndarray        # (L_w,)
    csi_coeffs: np.ndarray  # (L_w * (P+1),)
    uwb: np.ndarray         # (2*L_u,) ranges then powers
    imu: np.ndarray         # (9,)
    coord: np.ndarray       # (2,)
    wifi_mask: np.ndarray   # (L_w,)
    uwb_mask: np.ndarray    # (L_u,)


def curate_sample(sample: RawSample, config: CurationConfig) -> CuratedSample:
    rssi, wifi_mask = clip_rssi(sample.rssi)
    ranges, powers, uwb_mask = clip_uwb(sample.uwb_range, sample.uwb_power)
    idx = config.surviving_indices
    k = config.coeffs_per_anchor
    coeffs = np.zeros(sample.csi.shape[0] * k)
    for a in range(sample.csi.shape[0]):
        row = sample.csi[a]
        if wifi_mask[a] == 0.0 or not np.all(np.isfinite(np.abs(row))):
            wifi_mask[a] = 0.0
            continue
        amps = remove_null_and_flip(row, config.null_indices)
        if amps.sum() <= 0.0:
            wifi_mask[a] = 0.0
            continue
        fit = fit_polynomial(normalize_csi(amps), idx, config.poly_order)
        coeffs[a * k:(a + 1) * k] = fit.coeffs
    return CuratedSample(
        rssi=rssi,
        csi_coeffs=coeffs,
        uwb=np.concatenate([ranges, powers]),
        imu=np.asarray(sample.imu, dtype=np.float64),
        coord=np.asarray(sample.coord, dtype=np.float64),
        wifi_mask=wifi_mask,
        uwb_mask=uwb_mask,
    )


# ---------------------------------------------------------------------------
# dataset-level curation


@dataclass
class CuratedDataset:
    """Aligned per-sensor feature streams, one row per time step.

    Stream layouts (validity masks ride along as features):
      rssi: [rssi_0..rssi_{Lw-1}, wifi_mask_0..]
      csi:  [coef_{a0,0}..coef_{a0,P}, ..., wifi_mask_0..]
      uwb:  [range_0.., power_0.., uwb_mask_0..]
      imu:  [accel xyz, gyro xyz, magnetic xyz]

    ``stats`` is None until ``standardize`` fills it; values then hold
    the training-split feature means and deviations actually applied.
    """

    streams: dict[str, np.ndarray]
    coords: np.ndarray
    timestamps: np.ndarray
    config: CurationConfig
    l_wifi: int
    l_uwb: int
    stats: dict[str, tuple[np.ndarray, np.ndarray]] | None = None

    def __len__(self) -> int:
        return self.coords.shape[0]

    def stream_dims(self) -> dict[str, int]:
        return {name: arr.shape[1] for name, arr in self.streams.items()}


def curate_recording(recording: Recording, config: CurationConfig) -> CuratedDataset:
    """Vectorized curation of a whole recording.

    Equivalent to ``curate_sample`` row by row (the tests assert this);
    the polynomial fit is batched through a shared pseudoinverse.
    """
    if recording.n_subcarriers != config.n_subcarriers:
        raise CurationError(
            f"recording has {recording.n_subcarriers} subcarriers, "
            f"config says {config.n_subcarriers}")
    n, l_w = recording.rssi.shape
    l_u = recording.uwb_range.shape[1]

    rssi_mask = np.isfinite(recording.rssi)
    rssi = np.where(rssi_mask, np.minimum(recording.rssi, RSSI_CLIP_DBM), RSSI_CLIP_DBM)
    uwb_mask = np.isfinite(recording.uwb_range) & np.isfinite(recording.uwb_power)
    uwb_r = np.where(uwb_mask, np.minimum(recording.uwb_range, UWB_RANGE_CLIP_M),
                     UWB_RANGE_CLIP_M)
    uwb_p = np.where(uwb_mask, recording.uwb_power, UWB_POWER_IMPUTE_DBM)

    amps = np.abs(recording.csi)                      # (N, L_w, N_c)
    csi_valid = np.all(np.isfinite(amps), axis=2)
    idx = config.surviving_indices
    positions = idx + config.n_subcarriers // 2
    flipped = np.fft.fftshift(amps, axes=2)[:, :, positions]
    totals = flipped.sum(axis=2)
    alive = csi_valid & (totals > 0.0)
    wifi_mask = (rssi_mask & alive).astype(np.float64)
    safe_tot = np.where(totals > 0.0, totals, 1.0)
    normed = np.where(np.isfinite(flipped), flipped, 0.0) / safe_tot[:, :, None]
    basis = polynomial_basis(idx, config.poly_order)
    solver = np.linalg.pinv(basis).T                  # (N_k, P+1)
    coeffs = normed.reshape(n * l_w, -1) @ solver
    coeffs = coeffs.reshape(n, l_w, config.coeffs_per_anchor)
    coeffs[~alive] = 0.0

    streams = {
        "rssi": np.concatenate([rssi, wifi_mask], axis=1),
        "csi": np.concatenate([coeffs.reshape(n, -1), wifi_mask], axis=1),
        "uwb": np.concatenate([uwb_r, uwb_p, uwb_mask.astype(np.float64)], axis=1),
        "imu": np.asarray(recording.imu, dtype=np.float64),
    }
    return CuratedDataset(
        streams=streams,
        coords=np.asarray(recording.coords, dtype=np.float64),
        timestamps=np.asarray(recording.timestamps, dtype=np.float64),
        config=config,
        l_wifi=l_w,
        l_uwb=l_u,
    )


def standardize(dataset: CuratedDataset, train_rows: int) -> CuratedDataset:
    """Zero-mean unit-deviation features, statistics from the training rows.

    Population (1/N) deviation; near-constant columns pass through with
    the deviation treated as one.
    """
    if not 0 < train_rows <= len(dataset):
        raise CurationError(f"train_rows={train_rows} outside (0, {len(dataset)}]")
    if dataset.stats is not None:
        raise CurationError("dataset is already standardized")
    streams = {}
    stats = {}
    for name, arr in dataset.streams.items():
        head = arr[:train_rows]
        mean = head.mean(axis=0)
        std = head.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)
        streams[name] = (arr - mean) / std
        stats[name] = (mean, std)
    return CuratedDataset(
        streams=streams,
        coords=dataset.coords,
        timestamps=dataset.timestamps,
        config=dataset.config,
        l_wifi=dataset.l_wifi,
        l_uwb=dataset.l_uwb,
        stats=stats,
    )


def apply_standardization(dataset: CuratedDataset,
                          stats: dict[str, tuple[np.ndarray, np.ndarray]]) -> CuratedDataset:
    """Standardize with previously computed statistics (e.g. at inference)."""
    if dataset.stats is not None:
        raise CurationError("dataset is already standardized")
    streams = {name: (arr - stats[name][0]) / stats[name][1]
               for name, arr in dataset.streams.items()}
    return CuratedDataset(
        streams=streams, coords=dataset.coords, timestamps=dataset.timestamps,
        config=dataset.config, l_wifi=dataset.l_wifi, l_uwb=dataset.l_uwb, stats=stats,
    )


# ---------------------------------------------------------------------------
# windowing


@dataclass
class MultiModalWindow:
    """T consecutive curated steps of every stream, labeled at the last step."""

    streams: dict[str, np.ndarray]  # sensor -> (T, d) view
    target: np.ndarray              # coordinate at the final step
    timestamps: np.ndarray          # (T,)
    start: int

    @property
    def length(self) -> int:
        return self.timestamps.shape[0]


def window_count(n_samples: int, length: int, stride: int) -> int:
    if n_samples < length:
        return 0
    return (n_samples - length) // stride + 1


def window_sequences(dataset: CuratedDataset, length: int,
                     stride: int = 1) -> list[MultiModalWindow]:
    """Sliding windows at offsets 0, stride, 2*stride, ...

    Feature matrices are views into the dataset, so the result is cheap
    even for long recordings.
    """
    if length < 1 or stride < 1:
        raise CurationError(f"length and stride must be positive, got {length}, {stride}")
    n = len(dataset)
    if n < length:
        warnings.warn(f"recording of {n} samples is shorter than one window ({length})")
        return []
    windows = []
    for start in range(0, n - length + 1, stride):
        end = start + length
        windows.append(MultiModalWindow(
            streams={name: arr[start:end] for name, arr in dataset.streams.items()},
            target=dataset.coords[end - 1],
            timestamps=dataset.timestamps[start:end],
            start=start,
        ))
    return windows


def stack_windows(windows: list[MultiModalWindow],
                  sensors: tuple[str, ...]) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Batch windows into per-sensor (B, T, d) arrays plus (B, 2) targets."""
    batch = {s: np.stack([w.streams[s] for w in windows]) for s in sensors}
    targets = np.stack([w.target for w in windows])
    return batch, targets
