"""Persistence: frozen CSV/JSON schemas, run manifests, config handling.

CSV schemas (column order is part of the contract):

    spectrum:      n,k,value          (normalized coherence weights)
    phase signal:  n,phi,value        (real part of S_{n,phi})
    per-n series:  n,value            (Loschmidt echo, OTOC moment, ...)
    dd series:     cycle,t,value
    sweep:         tau,theta,a_fast,t_fast,a_slow,t_slow,n_star,snr,status
    distribution:  n,s,f

Floats are written with ``repr`` so a rerun with the same seed produces
bit-identical files; readers validate headers and round-trip exactly.
JSON documents carry ``schema_version``. External measured spectra in the
same schema are accepted anywhere a simulated spectrum is.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .errors import ConfigError

SCHEMA_VERSION = 1
TOOL_NAME = "mqcsim"


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows: Iterable[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_csv(path: Path, header: list[str]) -> list[list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != header:
            raise ConfigError(f"{path}: expected header {header}, got {got}")
        return [row for row in reader if row]


def write_spectrum_csv(path: Path, spectra: dict[int, tuple[np.ndarray, np.ndarray]]) -> None:
    """spectra maps n -> (orders, weights)."""
    rows = []
    for n in sorted(spectra):
        orders, weights = spectra[n]
        rows.extend((n, int(k), _fmt(w)) for k, w in zip(orders, weights))
    _write_csv(path, ["n", "k", "value"], rows)


def read_spectrum_csv(path: Path) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    out: dict[int, list[tuple[int, float]]] = {}
    for n_s, k_s, v_s in _read_csv(path, ["n", "k", "value"]):
        out.setdefault(int(n_s), []).append((int(k_s), float(v_s)))
    result = {}
    for n, pairs in out.items():
        pairs.sort()
        result[n] = (
            np.array([k for k, _ in pairs]),
            np.array([v for _, v in pairs]),
        )
    return result


def write_phase_csv(path: Path, signals: dict[int, tuple[np.ndarray, np.ndarray]]) -> None:
    """signals maps n -> (phi, values); the real part is persisted."""
    rows = []
    for n in sorted(signals):
        phi, values = signals[n]
        rows.extend((n, _fmt(p), _fmt(np.real(v))) for p, v in zip(phi, values))
    _write_csv(path, ["n", "phi", "value"], rows)


def read_phase_csv(path: Path) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    out: dict[int, list[tuple[float, float]]] = {}
    for n_s, p_s, v_s in _read_csv(path, ["n", "phi", "value"]):
        out.setdefault(int(n_s), []).append((float(p_s), float(v_s)))
    return {
        n: (np.array([p for p, _ in rows]), np.array([v for _, v in rows]))
        for n, rows in out.items()
    }


def write_series_csv(path: Path, values: dict[int, float]) -> None:
    _write_csv(path, ["n", "value"], [(n, _fmt(values[n])) for n in sorted(values)])


def read_series_csv(path: Path) -> dict[int, float]:
    return {int(n): float(v) for n, v in _read_csv(path, ["n", "value"])}


def write_dd_csv(path: Path, times: np.ndarray, values: np.ndarray) -> None:
    rows = [(j, _fmt(t), _fmt(v)) for j, (t, v) in enumerate(zip(times, values))]
    _write_csv(path, ["cycle", "t", "value"], rows)


def read_dd_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    rows = _read_csv(path, ["cycle", "t", "value"])
    return (np.array([float(r[1]) for r in rows]), np.array([float(r[2]) for r in rows]))


_SWEEP_HEADER = ["tau", "theta", "a_fast", "t_fast", "a_slow", "t_slow",
                 "n_star", "snr", "status"]


def write_sweep_csv(path: Path, result) -> None:
    rows = []
    for cell in result.cells:
        fit = cell.fit
        if fit is None:
            fit_cols = ("", "", "", "")
        else:
            fit_cols = (_fmt(fit.a_fast), _fmt(fit.t_fast),
                        _fmt(fit.a_slow), _fmt(fit.t_slow))
        rows.append(
            (_fmt(cell.tau), _fmt(cell.theta), *fit_cols,
             cell.n_star, _fmt(cell.snr), cell.status)
        )
    _write_csv(path, _SWEEP_HEADER, rows)


def read_sweep_csv(path: Path) -> list[dict[str, Any]]:
    out = []
    for row in _read_csv(path, _SWEEP_HEADER):
        rec: dict[str, Any] = dict(zip(_SWEEP_HEADER, row))
        for key in ("tau", "theta", "snr"):
            rec[key] = float(rec[key])
        for key in ("a_fast", "t_fast", "a_slow", "t_slow"):
            rec[key] = float(rec[key]) if rec[key] else None
        rec["n_star"] = int(rec["n_star"])
        out.append(rec)
    return out


def write_distribution_csv(path: Path, dists: dict[int, tuple[np.ndarray, np.ndarray]]) -> None:
    """dists maps n -> (size_grid, f)."""
    rows = []
    for n in sorted(dists):
        s, f = dists[n]
        rows.extend((n, _fmt(sv), _fmt(fv)) for sv, fv in zip(s, f))
    _write_csv(path, ["n", "s", "f"], rows)


def read_distribution_csv(path: Path) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    out: dict[int, list[tuple[float, float]]] = {}
    for n_s, s_s, f_s in _read_csv(path, ["n", "s", "f"]):
        out.setdefault(int(n_s), []).append((float(s_s), float(f_s)))
    return {
        n: (np.array([s for s, _ in rows]), np.array([f for _, f in rows]))
        for n, rows in out.items()
    }


def write_json(path: Path, doc: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION, **doc}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# --- run manifest and config ----------------------------------------------


def write_manifest(out_dir: Path, command: str, config: dict) -> Path:
    from . import __version__

    path = out_dir / "manifest.json"
    write_json(
        path,
        {
            "tool": TOOL_NAME,
            "tool_version": __version__,
            "command": command,
            "config": config,
        },
    )
    return path


def read_manifest(path: Path) -> dict:
    doc = read_json(path)
    for key in ("tool", "tool_version", "command", "config"):
        if key not in doc:
            raise ConfigError(f"{path}: manifest missing key {key!r}")
    return doc


class OutputLock:
    """Exclusive per-run lock on the output directory."""

    def __init__(self, out_dir: Path):
        self.path = Path(out_dir) / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"output directory {self.path.parent} is locked by another run "
                f"(remove {self.path} if stale)"
            ) from None
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass
        return False


def load_config(path: Path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: line {err.lineno}, col {err.colno}: {err.msg}")
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return doc


def require(config: dict, section: str, field: str, kind, *, default=None):
    """Fetch config[section][field] with type checking and diagnostics."""
    sec = config.get(section)
    if sec is None:
        if default is not None:
            return default
        raise ConfigError(f"config section {section!r} is missing")
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    if field not in sec:
        if default is not None:
            return default
        raise ConfigError(f"config field {section}.{field} is missing")
    value = sec[field]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(
            f"config field {section}.{field} must be {kind.__name__}, "
            f"got {type(value).__name__}"
        )
    return value
