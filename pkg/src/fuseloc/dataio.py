"""On-disk formats: recording and curated-dataset CSVs, JSON manifests,
anchor maps, and the key=value config files the CLI consumes.

Recordings serialize one row per time step; missing readings are empty
fields. Floats round-trip losslessly (shortest-repr formatting).
"""

from __future__ import annotations

import json
import typing
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np
import pandas as pd

from .curation import CurationConfig, CuratedDataset, Recording

RECORDING_FORMAT_VERSION = 1
CURATED_FORMAT_VERSION = 1


class ConfigFileError(ValueError):
    pass


class DataFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# recordings


def _recording_columns(l_w: int, l_u: int, n_c: int) -> list[str]:
    cols = ["timestamp", "x", "y"]
    cols += [f"rssi_{i}" for i in range(l_w)]
    for i in range(l_w):
        for k in range(n_c):
            cols += [f"csi_{i}_{k}_re", f"csi_{i}_{k}_im"]
    for j in range(l_u):
        cols += [f"uwb_{j}_range", f"uwb_{j}_power"]
    cols += [f"imu_{i}" for i in range(9)]
    return cols


def write_recording(recording: Recording, directory) -> tuple[Path, Path]:
    """Emit <dir>/recording.csv and <dir>/manifest.json; returns both paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n, l_w = recording.rssi.shape
    l_u = recording.uwb_range.shape[1]
    n_c = recording.n_subcarriers

    blocks = [recording.timestamps[:, None], recording.coords, recording.rssi]
    csi = recording.csi.reshape(n, l_w * n_c)
    interleaved = np.empty((n, l_w * n_c * 2))
    interleaved[:, 0::2] = csi.real
    interleaved[:, 1::2] = csi.imag
    blocks.append(interleaved)
    uwb = np.empty((n, 2 * l_u))
    uwb[:, 0::2] = recording.uwb_range
    uwb[:, 1::2] = recording.uwb_power
    blocks.append(uwb)
    blocks.append(recording.imu)
    frame = pd.DataFrame(np.concatenate(blocks, axis=1),
                         columns=_recording_columns(l_w, l_u, n_c))
    csv_path = directory / "recording.csv"
    frame.to_csv(csv_path, index=False)

    manifest = {
        "format_version": RECORDING_FORMAT_VERSION,
        "kind": "recording",
        "n_samples": n,
        "l_wifi": l_w,
        "l_uwb": l_u,
        "n_subcarriers": n_c,
    }
    manifest.update({k: v for k, v in recording.meta.items() if not k.startswith("_")})
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return csv_path, manifest_path


def read_recording(directory) -> Recording:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    csv_path = directory / "recording.csv"
    if not manifest_path.exists() or not csv_path.exists():
        raise DataFormatError(f"no recording found under {directory}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != RECORDING_FORMAT_VERSION:
        raise DataFormatError(
            f"unsupported recording format {manifest.get('format_version')!r} "
            f"in {manifest_path}")
    l_w, l_u, n_c = manifest["l_wifi"], manifest["l_uwb"], manifest["n_subcarriers"]
    frame = pd.read_csv(csv_path, float_precision="round_trip")
    expected = _recording_columns(l_w, l_u, n_c)
    if list(frame.columns) != expected:
        raise DataFormatError(f"column layout of {csv_path} does not match its manifest")
    data = frame.to_numpy(dtype=np.float64)
    n = data.shape[0]
    ofs = 3
    rssi = data[:, ofs:ofs + l_w]
    ofs += l_w
    csi_flat = data[:, ofs:ofs + 2 * l_w * n_c]
    ofs += 2 * l_w * n_c
    csi = (csi_flat[:, 0::2] + 1j * csi_flat[:, 1::2]).reshape(n, l_w, n_c)
    uwb = data[:, ofs:ofs + 2 * l_u]
    ofs += 2 * l_u
    imu = data[:, ofs:ofs + 9]
    meta = {k: v for k, v in manifest.items()
            if k not in ("format_version", "kind", "n_samples", "l_wifi",
                         "l_uwb", "n_subcarriers")}
    return Recording(
        timestamps=data[:, 0],
        coords=data[:, 1:3],
        rssi=rssi,
        csi=csi,
        uwb_range=uwb[:, 0::2],
        uwb_power=uwb[:, 1::2],
        imu=imu,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# curated datasets


def write_curated(dataset: CuratedDataset, directory,
                  split_info: dict | None = None,
                  source_manifest: dict | None = None) -> tuple[Path, Path]:
    """Emit <dir>/curated.csv + manifest; features stay in physical units,
    standardization statistics (if any) ride in the manifest."""
    if dataset.stats is not None:
        raise DataFormatError("write the unstandardized dataset; stats go in the manifest")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    l_w, l_u = dataset.l_wifi, dataset.l_uwb
    k = dataset.config.coeffs_per_anchor

    rssi = dataset.streams["rssi"][:, :l_w]
    wifi_mask = dataset.streams["rssi"][:, l_w:]
    coeffs = dataset.streams["csi"][:, :l_w * k]
    uwb = dataset.streams["uwb"][:, :2 * l_u]
    uwb_mask = dataset.streams["uwb"][:, 2 * l_u:]
    cols: dict[str, np.ndarray] = {
        "timestamp": dataset.timestamps,
        "x": dataset.coords[:, 0],
        "y": dataset.coords[:, 1],
    }
    for i in range(l_w):
        cols[f"rssi_{i}"] = rssi[:, i]
    for i in range(l_w):
        for p in range(k):
            cols[f"csicoef_{i}_{p}"] = coeffs[:, i * k + p]
    for j in range(l_u):
        cols[f"uwb_{j}_range"] = uwb[:, j]
        cols[f"uwb_{j}_power"] = uwb[:, l_u + j]
    for i in range(9):
        cols[f"imu_{i}"] = dataset.streams["imu"][:, i]
    for i in range(l_w):
        cols[f"wifi_mask_{i}"] = wifi_mask[:, i]
    for j in range(l_u):
        cols[f"uwb_mask_{j}"] = uwb_mask[:, j]
    csv_path = directory / "curated.csv"
    pd.DataFrame(cols).to_csv(csv_path, index=False)

    manifest = {
        "format_version": CURATED_FORMAT_VERSION,
        "kind": "curated",
        "n_samples": len(dataset),
        "l_wifi": l_w,
        "l_uwb": l_u,
        "n_subcarriers": dataset.config.n_subcarriers,
        "null_indices": list(dataset.config.null_indices),
        "poly_order": dataset.config.poly_order,
        "stream_dims": dataset.stream_dims(),
    }
    if split_info:
        manifest["split"] = split_info
    if source_manifest:
        manifest["source"] = source_manifest
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return csv_path, manifest_path


def read_curated(directory) -> tuple[CuratedDataset, dict]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    csv_path = directory / "curated.csv"
    if not manifest_path.exists() or not csv_path.exists():
        raise DataFormatError(f"no curated dataset found under {directory}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != CURATED_FORMAT_VERSION:
        raise DataFormatError(
            f"unsupported curated format {manifest.get('format_version')!r}")
    l_w, l_u = manifest["l_wifi"], manifest["l_uwb"]
    config = CurationConfig(
        n_subcarriers=manifest["n_subcarriers"],
        null_indices=tuple(manifest["null_indices"]),
        poly_order=manifest["poly_order"],
    )
    k = config.coeffs_per_anchor
    frame = pd.read_csv(csv_path, float_precision="round_trip")
    data = frame.to_numpy(dtype=np.float64)
    ofs = 3
    rssi = data[:, ofs:ofs + l_w]
    ofs += l_w
    coeffs = data[:, ofs:ofs + l_w * k]
    ofs += l_w * k
    uwb_rp = data[:, ofs:ofs + 2 * l_u]
    ofs += 2 * l_u
    imu = data[:, ofs:ofs + 9]
    ofs += 9
    wifi_mask = data[:, ofs:ofs + l_w]
    ofs += l_w
    uwb_mask = data[:, ofs:ofs + l_u]
    uwb_r = uwb_rp[:, 0::2]
    uwb_p = uwb_rp[:, 1::2]
    streams = {
        "rssi": np.concatenate([rssi, wifi_mask], axis=1),
        "csi": np.concatenate([coeffs, wifi_mask], axis=1),
        "uwb": np.concatenate([uwb_r, uwb_p, uwb_mask], axis=1),
        "imu": imu,
    }
    dataset = CuratedDataset(
        streams=streams,
        coords=data[:, 1:3],
        timestamps=data[:, 0],
        config=config,
        l_wifi=l_w,
        l_uwb=l_u,
    )
    return dataset, manifest


# ---------------------------------------------------------------------------
# anchors


def write_anchors(path, wifi_anchors: np.ndarray, uwb_anchors: np.ndarray) -> Path:
    """Anchor map as CSV rows of (id, x, y, type)."""
    path = Path(path)
    rows = ["id,x,y,type"]
    for i, (x, y) in enumerate(np.asarray(wifi_anchors)):
        rows.append(f"wifi_{i},{float(x)!r},{float(y)!r},wifi")
    for j, (x, y) in enumerate(np.asarray(uwb_anchors)):
        rows.append(f"uwb_{j},{float(x)!r},{float(y)!r},uwb")
    path.write_text("\n".join(rows) + "\n")
    return path


def read_anchors(path) -> dict[str, dict[str, np.ndarray]]:
    """Anchor positions grouped by type: {'wifi': {id: xy}, 'uwb': {id: xy}}."""
    frame = pd.read_csv(path, float_precision="round_trip")
    needed = {"id", "x", "y", "type"}
    if not needed.issubset(frame.columns):
        raise DataFormatError(f"anchor file {path} must have columns {sorted(needed)}")
    out: dict[str, dict[str, np.ndarray]] = {}
    for _, row in frame.iterrows():
        out.setdefault(str(row["type"]), {})[str(row["id"])] = \
            np.array([float(row["x"]), float(row["y"])])
    return out


# ---------------------------------------------------------------------------
# key=value config files


def parse_config_text(text: str) -> dict[str, str]:
    """Lines of ``key = value``; blank lines and # comments are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigFileError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigFileError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _coerce(value: str, hint):
    origin = typing.get_origin(hint)
    if origin in (tuple, list):
        args = typing.get_args(hint)
        inner = args[0] if args else str
        items = [v.strip() for v in value.split(",") if v.strip()]
        return tuple(_coerce(v, inner) for v in items)
    if hint is bool:
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigFileError(f"expected a boolean, got {value!r}")
    if hint is int:
        return int(value)
    if hint is float:
        return float(value)
    return value


def config_from_mapping(cls, raw: dict[str, str], path: str = "<config>"):
    """Build a config dataclass from string key=value pairs.

    Unknown keys are an error (named, with the file), so typos die
    loudly instead of silently using a default.
    """
    hints = typing.get_type_hints(cls)
    known = {f.name: hints[f.name] for f in dataclass_fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigFileError(
                f"{path}: unknown key {key!r} (valid: {', '.join(sorted(known))})")
        try:
            kwargs[key] = _coerce(value, known[key])
        except (ValueError, ConfigFileError) as exc:
            raise ConfigFileError(f"{path}: bad value for {key!r}: {exc}") from exc
    return cls(**kwargs)


def load_config(cls, path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {path}: {exc}") from exc
    return config_from_mapping(cls, parse_config_text(text), str(path))
