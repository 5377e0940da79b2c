"""File formats: pulse JSON and the CSV/JSON tables written by the CLI."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .propagation import ControlPulse

PULSE_KEYS = ("r", "dt", "n_slices", "alpha", "beta")


class PulseFormatError(ValueError):
    """A pulse file does not follow the pulse schema."""


def _exact(x: float) -> str:
    # 17 significant digits round-trip any double exactly
    return format(float(x), ".17g")


def _array(values: Iterable[float]) -> str:
    return "[" + ", ".join(_exact(v) for v in values) + "]"


def pulse_to_json(pulse: ControlPulse) -> str:
    meta = json.dumps(pulse.meta, sort_keys=True, default=_jsonable)
    return (
        "{\n"
        f'  "r": {_exact(pulse.r_ref)},\n'
        f'  "dt": {_exact(pulse.dt)},\n'
        f'  "n_slices": {pulse.n_slices},\n'
        f'  "alpha": {_array(pulse.alpha)},\n'
        f'  "beta": {_array(pulse.beta)},\n'
        f'  "meta": {meta}\n'
        "}\n"
    )


def save_pulse(path, pulse: ControlPulse) -> Path:
    path = Path(path)
    path.write_text(pulse_to_json(pulse))
    return path


def pulse_from_dict(data) -> ControlPulse:
    """Validate a decoded pulse document and build the pulse."""
    if not isinstance(data, dict):
        raise PulseFormatError("pulse file must hold a JSON object")
    missing = [key for key in PULSE_KEYS if key not in data]
    if missing:
        raise PulseFormatError(f"pulse file missing required field(s): {', '.join(missing)}")
    for key in ("r", "dt"):
        if not isinstance(data[key], (int, float)) or isinstance(data[key], bool):
            raise PulseFormatError(f"field '{key}' must be a number")
    if not isinstance(data["n_slices"], int) or data["n_slices"] < 0:
        raise PulseFormatError("field 'n_slices' must be a nonnegative integer")
    for key in ("alpha", "beta"):
        seq = data[key]
        if not isinstance(seq, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in seq
        ):
            raise PulseFormatError(f"field '{key}' must be a list of numbers")
        if len(seq) != data["n_slices"]:
            raise PulseFormatError(
                f"field '{key}' has {len(seq)} entries, n_slices is {data['n_slices']}"
            )
    if not data["dt"] > 0:
        raise PulseFormatError("field 'dt' must be positive")
    if data["r"] < 0:
        raise PulseFormatError("field 'r' must be >= 0")
    meta = data.get("meta", {})
    if not isinstance(meta, dict):
        raise PulseFormatError("field 'meta' must be an object")
    return ControlPulse(np.array(data["alpha"], dtype=float), np.array(data["beta"], dtype=float),
                        float(data["dt"]), float(data["r"]), meta)


def load_pulse(path) -> ControlPulse:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise PulseFormatError(f"pulse file is not valid JSON: {exc}") from exc
    return pulse_from_dict(data)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    return path


def sig(x: float, digits: int = 12) -> str:
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return format(float(x), f".{digits}g")


def write_band_scan(path, ks: np.ndarray, energies: np.ndarray) -> Path:
    rows = ((sig(k), n, sig(e)) for k, row in zip(ks, energies) for n, e in enumerate(row))
    return write_csv(path, ("k", "band", "energy"), rows)


def write_fidelity_scan(path, ks, fidelity, phases) -> Path:
    rows = ((sig(k), sig(f), sig(a)) for k, f, a in zip(ks, fidelity, phases))
    return write_csv(path, ("k", "fidelity", "trace_phase"), rows)


def write_trace(path, trace) -> Path:
    return write_csv(path, ("iter", "phi"), ((i, _exact(v)) for i, v in enumerate(trace)))
