from __future__ import annotations

import json

import numpy as np
import pytest

from unrect import storage
from unrect.core.models import LedgerRow, MeasureRow
from unrect.errors import GuardError
from unrect.sets import four_corner_cantor


def test_cloud_file_and_sidecar(tmp_path):
    cloud = four_corner_cantor(2)
    path = tmp_path / "cantor.csv"
    meta = storage.write_cloud(cloud, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "x,y,w"
    assert len(lines) == 17
    side = json.loads((tmp_path / "cantor.json").read_text(encoding="utf-8"))
    assert side == {"generator": "four-corner", "depth": 2, "total_mass": 1.0, "cell_size": 0.0625}
    assert meta.total_mass == 1.0
    back = storage.read_cloud(path)
    assert np.array_equal(back.points, cloud.points)
    assert np.array_equal(back.weights, cloud.weights)
    assert back.depth == 2 and back.cell_size == cloud.cell_size
    assert not list(tmp_path.glob("*.tmp"))


def test_reruns_are_byte_identical(tmp_path):
    cloud = four_corner_cantor(3)
    first = storage.write_cloud(cloud, tmp_path / "a.csv")
    text = (tmp_path / "a.csv").read_bytes()
    storage.write_cloud(cloud, tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_bytes() == text
    assert first.generator == "four-corner"


def test_sidecar_mass_mismatch_is_rejected(tmp_path):
    path = tmp_path / "c.csv"
    storage.write_cloud(four_corner_cantor(1), path)
    storage.write_json(tmp_path / "c.json", {"generator": "four-corner", "depth": 1, "total_mass": 2.0})
    with pytest.raises(GuardError):
        storage.read_cloud(path)


def test_bad_cloud_files(tmp_path):
    bad_header = tmp_path / "h.csv"
    bad_header.write_text("a,b,c\n0,0,1\n", encoding="utf-8")
    with pytest.raises(GuardError):
        storage.read_cloud(bad_header)
    short_row = tmp_path / "r.csv"
    short_row.write_text("x,y,w\n0,0\n", encoding="utf-8")
    with pytest.raises(GuardError):
        storage.read_cloud(short_row)
    with pytest.raises(GuardError):
        storage.read_cloud(tmp_path / "missing.csv")


def test_cloud_without_sidecar_uses_the_weights(tmp_path):
    path = tmp_path / "plain.csv"
    path.write_text("x,y,w\n0,0,0.25\n1,0,0.75\n", encoding="utf-8")
    cloud = storage.read_cloud(path)
    assert cloud.total_mass == 1.0
    assert cloud.generator == "plain"


def test_ledger_and_trace_tables(tmp_path):
    rows = [
        LedgerRow(step=0, mu=None, collar_mass=0.0, image_measure=1.0, step_distance=0.0, cum_distance=0.0),
        LedgerRow(step=1, mu=0.25, collar_mass=0.0, image_measure=0.0, step_distance=0.01, cum_distance=0.01),
    ]
    storage.write_ledger([(3, r) for r in rows], tmp_path / "ledger.csv", element=True)
    table = storage.read_ledger(tmp_path / "ledger.csv")
    assert list(table[0]) == ["element"] + storage.LEDGER_COLUMNS
    assert table[0]["mu"] == ""
    assert table[1]["element"] == "3" and float(table[1]["mu"]) == 0.25

    storage.write_trace([MeasureRow(angle=0.1, value=0.5, delta=0.01, method="interval_union")], tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text(encoding="utf-8").splitlines() == [
        "angle,value,delta,method",
        "0.10000000000000001,0.5,0.01,interval_union",
    ]


def test_json_is_sorted(tmp_path):
    storage.write_json(tmp_path / "s.json", {"b": 1, "a": 2})
    text = (tmp_path / "s.json").read_text(encoding="utf-8")
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("\n")
