"""File formats: PSD and budget CSVs, landscape CSV, binary time-series
records with a JSON header, and key: value reports."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .params import CavityParams, DampingModel, MechanicalMode, SystemParams
from .spectra import FrequencyGrid, Psd, Sidedness, SpectrumError, Units

RECORD_MAGIC = b"TINSIM-RECORD\n"
RECORD_SCHEMA_VERSION = 1


def _fmt(x):
    return repr(float(x))


# --- PSD CSV -------------------------------------------------------------------------

def write_psd_csv(path, psd):
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# units={psd.units.value} sidedness={psd.sidedness.value}\n")
        fh.write("frequency_hz,value\n")
        for f, v in zip(psd.frequencies, psd.values):
            fh.write(f"{_fmt(f)},{_fmt(v)}\n")
    return path


def _parse_header_tags(line):
    tags = {}
    for tok in line.lstrip("#").split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            tags[k.strip().lower()] = v.strip()
    return tags


def read_psd_csv(path, units=None, value_column=None, rtol=1e-6):
    """Read a PSD CSV.

    Accepts the native format as well as exports with extra comment lines
    and arbitrary column order, as long as a header names a frequency column
    (containing "freq") and the value column (``value_column``, "value", or the
    only other column). Frequencies must be uniformly spaced.
    """
    tags = {}
    rows = []
    header = None
    with Path(path).open() as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                tags.update(_parse_header_tags(line))
                continue
            cells = [c.strip() for c in line.split(",")]
            if header is None:
                try:
                    [float(c) for c in cells]
                except ValueError:
                    header = [c.lower() for c in cells]
                    continue
                header = ["frequency_hz", "value"][:len(cells)]
            rows.append([float(c) for c in cells])
    if not rows:
        raise SpectrumError(f"{path}: no data rows")
    f_cols = [i for i, h in enumerate(header) if "freq" in h]
    if len(f_cols) != 1:
        raise SpectrumError(f"{path}: cannot identify the frequency column in {header}")
    fi = f_cols[0]
    if value_column is not None:
        if value_column.lower() not in header:
            raise SpectrumError(f"{path}: no column named {value_column!r}")
        vi = header.index(value_column.lower())
    elif "value" in header:
        vi = header.index("value")
    else:
        others = [i for i in range(len(header)) if i != fi]
        if len(others) != 1:
            raise SpectrumError(f"{path}: ambiguous value column; pass value_column")
        vi = others[0]
    data = np.array(rows, dtype=float)
    order = np.argsort(data[:, fi])
    f = data[order, fi]
    v = data[order, vi]
    if f.size < 2:
        raise SpectrumError(f"{path}: need at least two rows")
    steps = np.diff(f)
    df = (f[-1] - f[0]) / (f.size - 1)
    if np.any(np.abs(steps - df) > rtol * max(df, 1e-300) + 1e-9 * abs(f[-1])):
        raise SpectrumError(f"{path}: frequencies are not uniformly spaced")
    unit = Units(units if units is not None else tags.get("units", Units.M2_PER_HZ.value))
    side = Sidedness(tags.get("sidedness", Sidedness.ONE_SIDED.value))
    return Psd(FrequencyGrid(float(f[0]), float(df), f.size), v, unit, side)


def write_columns_csv(path, columns, header_comment=None):
    """Write equal-length named columns (dict name -> array) as CSV."""
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    n = {a.shape[0] for a in arrays}
    if len(n) != 1:
        raise ValueError("columns must have equal length")
    with path.open("w", newline="") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*arrays):
            w.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else
                        (int(x) if isinstance(x, (bool, np.bool_)) else x) for x in row])
    return path


def write_budget_csv(path, budget):
    cols = {"frequency_hz": budget.grid.frequencies}
    for name, psd in budget.components.items():
        cols[name] = psd.values
    cols["total"] = budget.total.values
    return write_columns_csv(path, cols, f"units={budget.units.value} sidedness=one-sided")


# --- landscape CSV ---------------------------------------------------------------------

LANDSCAPE_COLUMNS = ("kappa_rad_s", "p_in_w", "nu", "temperature_k", "n_c", "cq", "stable")


def write_landscape_csv(path, points):
    cols = {
        "kappa_rad_s": np.array([p.kappa for p in points]),
        "p_in_w": np.array([p.p_in for p in points]),
        "nu": np.array([p.nu for p in points]),
        "temperature_k": np.array([p.temperature for p in points]),
        "n_c": np.array([p.n_c for p in points]),
        "cq": np.array([p.cq for p in points]),
        "stable": np.array([bool(p.stable) for p in points]),
    }
    return write_columns_csv(path, cols, "quantum cooperativity landscape; unstable points carry cq = 0")


def read_columns_csv(path):
    """Read a CSV written by :func:`write_columns_csv` into float arrays."""
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    names = next(reader)
    data = np.array([[float(c) for c in row] for row in reader], dtype=float)
    return {n: data[:, i] for i, n in enumerate(names)}


# --- parameter (de)serialization ---------------------------------------------------------

def mode_to_dict(mode):
    return {"mass": mode.mass, "omega_m": mode.omega_m, "gamma_m": mode.gamma_m,
            "coupling_G": mode.coupling_G, "temperature": mode.temperature,
            "damping_model": mode.damping_model.value}


def mode_from_dict(d):
    return MechanicalMode(d["mass"], d["omega_m"], d["gamma_m"], d["coupling_G"],
                          d["temperature"], DampingModel(d["damping_model"]))


def system_to_dict(system):
    c = system.cavity
    return {"modes": [mode_to_dict(m) for m in system.modes],
            "cavity": {"kappa": c.kappa, "detuning_nu": c.detuning_nu, "n_cav": c.n_cav,
                       "omega_laser": c.omega_laser, "eta": c.eta},
            "probe_index": system.probe_index}


def system_from_dict(d):
    return SystemParams([mode_from_dict(m) for m in d["modes"]], CavityParams(**d["cavity"]),
                        d["probe_index"])


def config_to_dict(config):
    from dataclasses import asdict, fields
    out = {}
    for f in fields(config):
        v = getattr(config, f.name)
        if f.name == "system":
            v = system_to_dict(v)
        elif f.name == "feedback":
            v = [asdict(fb) for fb in v]
        elif f.name == "tone":
            v = asdict(v) if v is not None else None
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def config_from_dict(d):
    from .oracle import FeedbackConfig, ForceTone, SimConfig
    kw = dict(d)
    kw["system"] = system_from_dict(kw["system"])
    kw["feedback"] = tuple(FeedbackConfig(**fb) for fb in kw.get("feedback", ()))
    kw["tone"] = ForceTone(**kw["tone"]) if kw.get("tone") else None
    for key in ("record", "backaction_modes"):
        if kw.get(key) is not None:
            kw[key] = tuple(kw[key])
    return SimConfig(**kw)


# --- binary records ---------------------------------------------------------------------------

def save_record(path, record):
    """Columnar little-endian float64 file with a JSON header; bit-exact on reload."""
    path = Path(path)
    channels = []
    blobs = []
    offset = 0
    for name in record.channels:
        arr = np.ascontiguousarray(getattr(record, name), dtype="<f8")
        channels.append({"name": name, "shape": list(arr.shape), "dtype": "<f8", "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "schema_version": RECORD_SCHEMA_VERSION,
        "config": config_to_dict(record.config),
        "channels": channels,
        "intensity_mean": float(record.intensity_mean).hex(),
        "metadata": {k: (float(v).hex() if isinstance(v, float) else v)
                     for k, v in record.metadata.items()},
    }
    text = json.dumps(header, sort_keys=True).encode()
    with path.open("wb") as fh:
        fh.write(RECORD_MAGIC)
        fh.write(len(text).to_bytes(8, "little"))
        fh.write(text)
        for b in blobs:
            fh.write(b)
    return path


def _unhex(v):
    if isinstance(v, str):
        try:
            return float.fromhex(v)
        except ValueError:
            return v
    return v


def load_record(path):
    from .oracle import TimeSeriesRecord
    raw = Path(path).read_bytes()
    if not raw.startswith(RECORD_MAGIC):
        raise ValueError(f"{path}: not a record file")
    pos = len(RECORD_MAGIC)
    n = int.from_bytes(raw[pos:pos + 8], "little")
    pos += 8
    header = json.loads(raw[pos:pos + n])
    if header["schema_version"] != RECORD_SCHEMA_VERSION:
        raise ValueError(f"unsupported record schema {header['schema_version']}")
    pos += n
    data = {}
    for ch in header["channels"]:
        count = int(np.prod(ch["shape"])) if ch["shape"] else 0
        start = pos + ch["offset"]
        arr = np.frombuffer(raw, dtype=ch["dtype"], count=count, offset=start)
        data[ch["name"]] = arr.reshape(ch["shape"]).astype(np.float64)
    return TimeSeriesRecord(
        config=config_from_dict(header["config"]),
        intensity_mean=float.fromhex(header["intensity_mean"]),
        metadata={k: _unhex(v) for k, v in header["metadata"].items()},
        **data,
    )


def export_record_csv(path, record, max_rows=1_000_000):
    if record.n_samples > max_rows:
        raise ValueError(f"record has {record.n_samples} samples; CSV export is capped at {max_rows}")
    cols = {"time_s": record.time}
    for name in record.channels:
        arr = getattr(record, name)
        if arr.ndim == 2:
            for j in range(arr.shape[1]):
                cols[f"{name}_{j}"] = arr[:, j]
        else:
            cols[name] = arr
    return write_columns_csv(path, cols)


# --- key: value reports -----------------------------------------------------------------------

def write_report(path, entries):
    """Write a flat ``key: value`` text report (nested dicts become dotted keys)."""
    lines = []

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k, v in obj.items():
                walk(f"{prefix}.{k}" if prefix else str(k), v)
        else:
            if isinstance(obj, (float, np.floating)):
                obj = repr(float(obj))
            lines.append(f"{prefix}: {obj}")

    walk("", entries)
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_report(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        k, _, v = line.partition(":")
        v = v.strip()
        try:
            out[k.strip()] = float(v)
        except ValueError:
            out[k.strip()] = v
    return out
