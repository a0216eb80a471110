"""Delimited and JSON output with configuration-hash tracing.

Every file written here starts with the hash of the fully resolved run
configuration (a comment line in CSVs, a top-level field in JSON), so any
two artifacts can be checked for having come from the same run before they
are compared. Floats are written with repr, which makes reloads bit-exact
and reruns byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .config import RunConfig, canonical_json, config_hash, config_to_dict
from .errors import ConfigError

__all__ = [
    "write_csv",
    "read_csv",
    "require_matching_hashes",
    "write_manifest",
    "read_manifest",
    "write_snapshot_csv",
    "write_correlation_csv",
    "write_pair_correlation_csv",
    "write_count_distribution_csv",
    "write_series_csv",
    "format_float",
]

_HASH_PREFIX = "# config_hash="


def format_float(x: float) -> str:
    """Shortest exact decimal rendering of a float."""
    return repr(float(x))


def write_csv(
    path: Union[str, Path],
    header: Sequence[str],
    rows: Iterable[Sequence],
    config_hash_value: Optional[str] = None,
) -> None:
    """Write one CSV file: hash comment, mandatory header, LF endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if config_hash_value is not None:
            fh.write(f"{_HASH_PREFIX}{config_hash_value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow(
                [format_float(v) if isinstance(v, float) else v for v in row]
            )


def read_csv(path: Union[str, Path]) -> tuple:
    """Read a CSV written by write_csv.

    Returns (hash or None, header list, rows as lists of strings).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        found = None
        if first.startswith(_HASH_PREFIX):
            found = first[len(_HASH_PREFIX) :].strip()
        else:
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    return found, header, rows


def require_matching_hashes(*hashes: Optional[str]) -> str:
    """Verify several artifacts share one config hash; return it."""
    present = [h for h in hashes if h is not None]
    if not present:
        raise ConfigError("no config hash present on any artifact")
    if len(set(present)) != 1:
        raise ConfigError(f"config hashes differ: {sorted(set(present))}")
    return present[0]


def write_manifest(
    path: Union[str, Path], config: RunConfig, extra: Optional[dict] = None
) -> None:
    """Write a JSON run manifest embedding the resolved config and its hash."""
    doc = {
        "config_hash": config_hash(config),
        "config": config_to_dict(config),
    }
    if extra:
        for key, value in extra.items():
            if key in doc:
                raise ValueError(f"manifest key '{key}' is reserved")
            doc[key] = _jsonable(value)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def read_manifest(path: Union[str, Path]) -> dict:
    """Read a JSON manifest, requiring the config hash field."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "config_hash" not in doc:
        raise ConfigError(f"manifest {path} carries no config hash")
    return doc


def write_snapshot_csv(
    path: Union[str, Path],
    snapshots: dict,
    config_hash_value: str,
) -> None:
    """Write ensemble snapshots: traj_id, time, then the particle positions.

    snapshots maps snapshot time -> list over trajectories of position
    arrays; rows are variable length past the two fixed columns.
    """
    rows = []
    for t in sorted(snapshots):
        for traj_id, cfg in enumerate(snapshots[t]):
            pos = np.asarray(cfg, dtype=float).reshape(-1)
            rows.append([traj_id, format_float(t)] + [format_float(x) for x in pos])
    write_csv(path, ["traj_id", "t", "positions"], rows, config_hash_value)


def write_correlation_csv(
    path: Union[str, Path], estimate, config_hash_value: str
) -> None:
    """One-point correlation estimate per bin with its standard error."""
    edges = estimate.bin_edges
    rows = [
        [format_float(edges[i]), format_float(edges[i + 1]), estimate.k1[i], estimate.k1_se[i]]
        for i in range(len(edges) - 1)
    ]
    write_csv(path, ["bin_low", "bin_high", "k1", "k1_se"], rows, config_hash_value)


def write_pair_correlation_csv(
    path: Union[str, Path], estimate, config_hash_value: str
) -> None:
    """Two-point correlation estimate per bin pair with its standard error."""
    edges = estimate.bin_edges
    nb = len(edges) - 1
    rows = []
    for i in range(nb):
        for j in range(nb):
            rows.append(
                [
                    format_float(edges[i]),
                    format_float(edges[j]),
                    estimate.k2[i, j],
                    estimate.k2_se[i, j],
                ]
            )
    write_csv(
        path, ["bin_i_low", "bin_j_low", "k2", "k2_se"], rows, config_hash_value
    )


def write_count_distribution_csv(
    path: Union[str, Path], dist: dict, config_hash_value: str
) -> None:
    """Particle-count probabilities with binomial standard errors."""
    rows = [
        [n, dist["pmf"][n], dist["se"][n]] for n in range(len(dist["pmf"]))
    ]
    write_csv(path, ["count", "probability", "se"], rows, config_hash_value)


def write_series_csv(
    path: Union[str, Path],
    columns: Sequence[str],
    series: Sequence[Sequence[float]],
    config_hash_value: str,
) -> None:
    """Aligned time-series columns (time first by convention)."""
    lengths = {len(col) for col in series}
    if len(lengths) != 1:
        raise ValueError("all series columns must have equal length")
    rows = [[col[i] for col in series] for i in range(lengths.pop())]
    write_csv(path, columns, [[float(v) for v in row] for row in rows], config_hash_value)
