"""File formats. Every write goes to ``<name>.tmp`` next to the target and is
moved into place with ``Path.replace``; floats are printed with 17 significant
digits so files round-trip exactly and are byte-identical across reruns.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union

import numpy as np
from pydantic import BaseModel

from unrect.core.models import CloudMeta, FavardRow, LedgerRow, MeasureRow
from unrect.errors import GuardError
from unrect.sets import MASS_TOL, WeightedCloud

AXES = ("x", "y", "z")
LEDGER_COLUMNS = ["step", "mu", "collar_mass", "image_measure", "step_distance", "cum_distance"]
TRACE_COLUMNS = ["angle", "value", "delta", "method"]
FAVARD_COLUMNS = ["depth", "value", "delta", "angles", "samples"]


def fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return "{:.17g}".format(v)
    return str(value)


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    dst = Path(path)
    dst.parent.mkdir(parents=True, exist_ok=True)
    tmp = dst.with_name(dst.name + ".tmp")
    with tmp.open("w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    tmp.replace(dst)
    return dst


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> Path:
    dst = Path(path)
    dst.parent.mkdir(parents=True, exist_ok=True)
    tmp = dst.with_name(dst.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(dst)
    return dst


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_json(path: Union[str, Path], payload: Union[BaseModel, dict, list]) -> Path:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n")


# --------------------------------------------------------------------------------
# Clouds


def sidecar_path(path: Union[str, Path]) -> Path:
    return Path(path).with_suffix(".json")


def cloud_meta(cloud: WeightedCloud) -> CloudMeta:
    return CloudMeta(generator=cloud.generator, depth=cloud.depth, total_mass=cloud.total_mass, cell_size=cloud.cell_size)


def write_cloud(cloud: WeightedCloud, path: Union[str, Path]) -> CloudMeta:
    """CSV ``x,y[,z],w`` plus the sidecar ``<stem>.json`` {generator, depth, total_mass}."""
    header = list(AXES[: cloud.n]) + ["w"]
    rows = (list(p) + [w] for p, w in zip(cloud.points, cloud.weights))
    atomic_write_text(path, _csv_text(header, rows))
    meta = cloud_meta(cloud)
    write_json(sidecar_path(path), meta.model_dump(exclude_none=True))
    return meta


def read_cloud(path: Union[str, Path]) -> WeightedCloud:
    src = Path(path)
    if not src.exists():
        raise GuardError(f"cloud file not found: {src}")
    with src.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise GuardError(f"{src} is empty") from None
        if header not in (["x", "y", "w"], ["x", "y", "z", "w"]):
            raise GuardError(f"{src}: unexpected header {header}")
        rows: List[List[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise GuardError(f"{src}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise GuardError(f"{src}:{lineno}: {exc}") from exc
    n = len(header) - 1
    data = np.asarray(rows, dtype=float).reshape(-1, n + 1)
    points, weights = data[:, :n], data[:, n]
    mass = math.fsum(weights)

    side = sidecar_path(src)
    if side.exists():
        meta = CloudMeta.model_validate_json(side.read_text(encoding="utf-8"))
        if abs(mass - meta.total_mass) > MASS_TOL * max(1.0, abs(meta.total_mass)):
            raise GuardError(f"{src}: weights sum to {mass!r}, sidecar declares {meta.total_mass!r}")
    else:
        meta = CloudMeta(generator=src.stem, depth=0, total_mass=mass)
    lo = points.min(axis=0) if len(points) else np.zeros(n)
    hi = points.max(axis=0) if len(points) else np.zeros(n)
    return WeightedCloud(
        points=points,
        weights=weights,
        depth=meta.depth,
        generator=meta.generator,
        total_mass=meta.total_mass,
        bounds=(lo, hi),
        cell_size=meta.cell_size,
    )


# --------------------------------------------------------------------------------
# Tables


def write_trace(rows: Sequence[MeasureRow], path: Union[str, Path]) -> Path:
    return atomic_write_text(path, _csv_text(TRACE_COLUMNS, ([r.angle, r.value, r.delta, r.method] for r in rows)))


def write_favard_table(rows: Sequence[FavardRow], path: Union[str, Path]) -> Path:
    return atomic_write_text(
        path, _csv_text(FAVARD_COLUMNS, ([r.depth, r.value, r.delta, r.angles, r.samples] for r in rows))
    )


def write_ledger(rows: Sequence[LedgerRow], path: Union[str, Path], element: bool = False) -> Path:
    """Ledger CSV; with ``element=True`` rows are (element, LedgerRow) pairs and gain a leading column."""
    if element:
        header = ["element"] + LEDGER_COLUMNS
        body = ([i] + [getattr(r, c) for c in LEDGER_COLUMNS] for i, r in rows)
    else:
        header = LEDGER_COLUMNS
        body = ([getattr(r, c) for c in LEDGER_COLUMNS] for r in rows)
    return atomic_write_text(path, _csv_text(header, body))


def read_ledger(path: Union[str, Path]) -> List[dict]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
