"""Reading and writing datasets, parameter files, and run manifests.

Counts travel as long-format CSV (one row per site-occasion cell, search
time included), detection times as a companion CSV keyed by detection
index. Site and occasion identifiers are 1-based in files and 0-based in
memory. Floats are written with repr, so a load/save round trip is
byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .model import (
    Dataset,
    Family,
    ObservationProcess,
    Parameterization,
    Protocol,
    SiteRecord,
    SurveyDesign,
)

__all__ = [
    "RunManifest",
    "write_dataset",
    "load_dataset",
    "params_from_dict",
    "params_to_dict",
    "config_digest",
]

COUNTS_FILE = "counts.csv"
TIMES_FILE = "times.csv"
MANIFEST_FILE = "manifest.json"


@dataclass(frozen=True)
class RunManifest:
    """What a CLI run produced, and from what configuration."""

    command: str
    config_digest: str
    outputs: dict
    timings: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "command": self.command,
                "config_digest": self.config_digest,
                "outputs": self.outputs,
                "timings": self.timings,
            },
            indent=2,
            sort_keys=True,
        )


def config_digest(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _fmt(x: float) -> str:
    return repr(float(x))


def write_dataset(dataset: Dataset, out_dir) -> dict:
    """Write counts.csv (and times.csv for time-recording protocols).

    Returns {"counts": path, "times": path or None}.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts_path = out_dir / COUNTS_FILE
    with open(counts_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["site", "occasion", "search_time", "count"])
        for rec in dataset.records:
            for j in range(dataset.n_occasions):
                writer.writerow(
                    [
                        rec.site + 1,
                        j + 1,
                        _fmt(dataset.design.search_time[rec.site, j]),
                        int(rec.counts[j]),
                    ]
                )
    times_path = None
    if dataset.protocol.family.records_times:
        times_path = out_dir / TIMES_FILE
        with open(times_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["site", "occasion", "detection_index", "time"])
            for rec in dataset.records:
                for j in range(dataset.n_occasions):
                    for d, t in enumerate(rec.times[j]):
                        writer.writerow([rec.site + 1, j + 1, d + 1, _fmt(t)])
    return {"counts": counts_path, "times": times_path}


def _read_rows(path: Path, required: list[str]) -> list[dict]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in required if c not in header]
            if missing:
                raise DataFormatError(f"{path}: missing column(s) {', '.join(missing)}")
            return list(reader)
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc


def _cell_indices(row: dict, path: Path, line: int) -> tuple[int, int]:
    try:
        site = int(row["site"])
        occ = int(row["occasion"])
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"{path} line {line}: non-integer site/occasion") from exc
    if site < 1 or occ < 1:
        raise DataFormatError(f"{path} line {line}: site and occasion are 1-based")
    return site - 1, occ - 1


def load_dataset(
    counts_path,
    times_path=None,
    *,
    family: Family,
    process: ObservationProcess,
) -> Dataset:
    """Assemble a Dataset from CSV files; structural problems raise DataFormatError.

    Semantic consistency (times matching counts, values in range) is the
    job of validate_dataset, which callers should run on the result.
    """
    counts_path = Path(counts_path)
    rows = _read_rows(counts_path, ["site", "occasion", "search_time", "count"])
    if not rows:
        raise DataFormatError(f"{counts_path}: no data rows")
    cells: dict[tuple[int, int], tuple[float, int]] = {}
    for line, row in enumerate(rows, start=2):
        i, j = _cell_indices(row, counts_path, line)
        try:
            t = float(row["search_time"])
            y = int(row["count"])
        except (TypeError, ValueError) as exc:
            raise DataFormatError(
                f"{counts_path} line {line}: bad search_time/count value"
            ) from exc
        if (i, j) in cells:
            raise DataFormatError(
                f"{counts_path} line {line}: duplicate cell site {i + 1} occasion {j + 1}"
            )
        cells[(i, j)] = (t, y)
    n_sites = 1 + max(i for i, _ in cells)
    n_occ = 1 + max(j for _, j in cells)
    if len(cells) != n_sites * n_occ:
        raise DataFormatError(
            f"{counts_path}: expected a complete {n_sites} x {n_occ} grid, "
            f"found {len(cells)} distinct cells"
        )
    search = np.empty((n_sites, n_occ))
    counts = np.empty((n_sites, n_occ), dtype=np.int64)
    for (i, j), (t, y) in cells.items():
        search[i, j] = t
        counts[i, j] = y

    times: dict[tuple[int, int], list[tuple[int, float]]] = {}
    if times_path is not None and Path(times_path).exists():
        times_path = Path(times_path)
        for line, row in enumerate(
            _read_rows(times_path, ["site", "occasion", "detection_index", "time"]), start=2
        ):
            i, j = _cell_indices(row, times_path, line)
            try:
                d = int(row["detection_index"])
                t = float(row["time"])
            except (TypeError, ValueError) as exc:
                raise DataFormatError(
                    f"{times_path} line {line}: bad detection_index/time value"
                ) from exc
            if i >= n_sites or j >= n_occ:
                raise DataFormatError(
                    f"{times_path} line {line}: site {i + 1} occasion {j + 1} "
                    "not present in the counts file"
                )
            times.setdefault((i, j), []).append((d, t))

    records = []
    for i in range(n_sites):
        per_occ = []
        for j in range(n_occ):
            entries = sorted(times.get((i, j), []))
            indices = [d for d, _ in entries]
            if indices and indices != list(range(1, len(indices) + 1)):
                raise DataFormatError(
                    f"detection_index values for site {i + 1} occasion {j + 1} "
                    f"must run 1..{len(indices)}, got {indices}"
                )
            per_occ.append(np.array([t for _, t in entries]))
        records.append(SiteRecord(i, counts[i], per_occ))
    protocol = Protocol.for_design(family, process, n_occ)
    design = SurveyDesign(n_sites, n_occ, search)
    return Dataset(protocol, design, records)


def params_from_dict(payload: dict) -> Parameterization:
    """Build a Parameterization from JSON-style keys.

    Accepts natural-scale ``lambda``/``rate`` or log-scale ``log_lambda``/
    ``log_rate`` (exactly one of each pair). Values may be scalars or
    (nested) lists.
    """

    def pick(log_key: str, nat_key: str) -> np.ndarray:
        has_log, has_nat = log_key in payload, nat_key in payload
        if has_log == has_nat:
            raise DataFormatError(f"provide exactly one of '{log_key}' or '{nat_key}'")
        if has_log:
            return np.asarray(payload[log_key], dtype=float)
        nat = np.asarray(payload[nat_key], dtype=float)
        if np.any(nat < 0):
            raise DataFormatError(f"'{nat_key}' values must be nonnegative")
        with np.errstate(divide="ignore"):
            return np.log(nat)

    try:
        return Parameterization(pick("log_lambda", "lambda"), pick("log_rate", "rate"))
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc


def params_to_dict(params: Parameterization) -> dict:
    def plain(arr: np.ndarray):
        return float(arr) if arr.ndim == 0 else arr.tolist()

    return {
        "log_lambda": plain(params.log_lambda),
        "log_rate": plain(params.log_rate),
    }
