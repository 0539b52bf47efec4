"""CSV dataset ingestion, delimited output and the JSON report envelope."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import RunConfig
from .errors import ConfigError
from .link_model import DEFAULT_ETA_DET, DEFAULT_P1, DEFAULT_P_DARK
from .photophysics import HBTHistogram, SaturationData, StabilityTrace

SCHEMA_VERSION = "1.0"
TOOL = "spsqkd"

HISTOGRAM_HEADER = ("delay_ns", "counts")
SATURATION_HEADER = ("power_uw", "counts_per_s")
STABILITY_HEADER = ("time_s", "counts_per_s")
SWEEP_HEADER = ("d_km", "r_s", "p_det", "a", "e_tilde", "delta_n", "s_finite",
                "k_bits_per_s")


# -- atomic file output ------------------------------------------------------

def write_atomic(path, data: str) -> Path:
    """Write ``data`` to ``path`` through a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # locale-independent, round-trips exactly
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def format_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    return write_atomic(path, format_csv(header, rows))


# -- dataset ingestion -------------------------------------------------------

def read_columns(path, header: Sequence[str]) -> Dict[str, np.ndarray]:
    """Read a numeric CSV with exactly the given header.

    Schema problems raise ConfigError naming the offending row and column;
    a missing file raises OSError.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file, expected header {','.join(header)}")
    got = [h.strip() for h in rows[0]]
    if got != list(header):
        raise ConfigError(f"{path}: header {','.join(got)!r} != {','.join(header)!r}")
    cols: Dict[str, List[float]] = {h: [] for h in header}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ConfigError(f"{path}: row {lineno} has {len(row)} fields, "
                              f"expected {len(header)}")
        for name, cell in zip(header, row):
            try:
                v = float(cell)
            except ValueError:
                raise ConfigError(f"{path}: row {lineno}, column '{name}': "
                                  f"not a number ({cell!r})") from None
            if not math.isfinite(v):
                raise ConfigError(f"{path}: row {lineno}, column '{name}': non-finite value")
            cols[name].append(v)
    return {k: np.asarray(v) for k, v in cols.items()}


def _schema(path, build):
    try:
        return build()
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def read_histogram(path, rep_period: float) -> HBTHistogram:
    c = read_columns(path, HISTOGRAM_HEADER)
    return _schema(path, lambda: HBTHistogram(c["delay_ns"], c["counts"], rep_period))


def read_saturation(path) -> SaturationData:
    c = read_columns(path, SATURATION_HEADER)
    return _schema(path, lambda: SaturationData(c["power_uw"], c["counts_per_s"]))


def read_stability(path) -> StabilityTrace:
    c = read_columns(path, STABILITY_HEADER)
    return _schema(path, lambda: StabilityTrace(c["time_s"], c["counts_per_s"]))


# -- report envelope ---------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        # JSON has no infinities; keep them readable
        return f if math.isfinite(f) else repr(f)
    return obj


def envelope(command: str, config: RunConfig, results: dict,
             seed: Optional[int] = None) -> dict:
    """Versioned report wrapper with the effective config and its hash."""
    cfg = config.to_dict()
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": TOOL,
        "tool_version": __version__,
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config_hash": config.config_hash(),
        "seed": seed,
        "config": cfg,
        "decisions": {
            "ec_leak_scaled_by_q": config.flags.ec_leak_scaled_by_q,
            "p_m_after_channel": "source-side (loss-independent)",
            "multi_photon_bucket": "two photons",
            "qber_bound": "one-sided Hoeffding",
            "finite_size_delta": "7*sqrt(log2(2/eps_smooth)/n) + (2/n)*log2(1/eps_pa)",
            "eps_split": "equal quarters" if config.protocol.eps_weights is None
                         else list(config.protocol.eps_weights),
            "eta_det": config.channel.eta_det,
            "p_dark": config.channel.p_dark,
            "p1": config.source.p1,
            "assumed_defaults": {"eta_det": DEFAULT_ETA_DET, "p_dark": DEFAULT_P_DARK,
                                 "p1": DEFAULT_P1},
        },
        "results": _jsonable(results),
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False) + "\n"


def write_report(path, report: dict) -> Path:
    return write_atomic(path, dumps_report(report))


def verify_report_hash(report: dict) -> bool:
    """True iff the embedded config reloads to the recorded hash."""
    cfg = RunConfig.from_dict(report["config"])
    return cfg.config_hash() == report["config_hash"]
