"""
Tests for field files, checkpoints and exported artifacts
"""

import json

import numpy as np
import pytest

from src.discretization import Grid
from src.errors import ArtifactNotFoundError, SchemaError
from src.freeboundary import attach_gradients, extract_free_boundary
from src.models import SolveRecord, SolveTrace
from src.utils import (FIELD_HEADER, CheckpointManager, DataExporter, read_field_binary, read_field_csv,
                       read_json, write_field_binary, write_field_csv)

HASH = "ab" * 32


def make_trace(grid: Grid) -> SolveTrace:
    trace = SolveTrace(config_hash=HASH, grid=grid.describe(), model={"variant": "pure_power"})
    for j, eps in enumerate((0.5, 0.25)):
        field = np.where(grid.interior, 1.0 + 0.5 * j - grid.norm, 0.0)
        trace.records.append(SolveRecord(eps=eps, field=field, level=0.1 * (j + 1), sharp_level=0.2,
                                         gradient_norm=1e-7, residual=1e-11, iterations=3 * j,
                                         method="newton", h1_norm=1.0, sup_norm=1.5, wall_time=2.0))
    trace.mountain_pass = {"sweeps": 12, "level_nonincreasing": True}
    return trace


def test_field_files_keep_every_bit(tmp_path):
    grid = Grid.box(17)
    values = np.random.default_rng(2).normal(size=grid.shape) / 3.0
    write_field_csv(tmp_path / "u.csv", values, grid.h, HASH)
    write_field_binary(tmp_path / "u.bin", values, grid.h, HASH)
    for reader, name in ((read_field_csv, "u.csv"), (read_field_binary, "u.bin")):
        loaded, h, config_hash = reader(tmp_path / name)
        assert np.array_equal(loaded, values)
        assert h == grid.h
        assert config_hash == HASH


def test_radial_field_stays_one_dimensional(tmp_path):
    values = np.linspace(1.0, 0.0, 33)
    write_field_binary(tmp_path / "u.bin", values, 1.0 / 32.0, HASH)
    loaded, _, _ = read_field_binary(tmp_path / "u.bin")
    assert loaded.shape == (33,)


def test_binary_header_checks(tmp_path):
    path = tmp_path / "u.bin"
    write_field_binary(path, np.zeros((17, 17)), 0.125, HASH)
    data = bytearray(path.read_bytes())

    path.write_bytes(b"XXXX" + bytes(data[4:]))
    with pytest.raises(SchemaError, match="magic"):
        read_field_binary(path)

    tampered = bytearray(data)
    tampered[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(tampered))
    with pytest.raises(SchemaError, match="schema version"):
        read_field_binary(path)

    path.write_bytes(bytes(data[:FIELD_HEADER.size + 8]))
    with pytest.raises(SchemaError):
        read_field_binary(path)


def test_missing_artifacts(tmp_path):
    with pytest.raises(ArtifactNotFoundError):
        read_field_binary(tmp_path / "absent.bin")
    with pytest.raises(ArtifactNotFoundError):
        read_field_csv(tmp_path / "absent.csv")
    with pytest.raises(ArtifactNotFoundError):
        read_json(tmp_path / "absent.json")
    with pytest.raises(ArtifactNotFoundError):
        CheckpointManager(tmp_path).load_trace()


def test_malformed_csv(tmp_path):
    path = tmp_path / "u.csv"
    path.write_text("nx,ny,h\n1,1,0.1\n0.0\n", encoding="utf-8")
    with pytest.raises(SchemaError):
        read_field_csv(path)


def test_checkpoint_round_trip(tmp_path):
    grid = Grid.box(17)
    trace = make_trace(grid)
    manager = CheckpointManager(tmp_path)
    manager.save_trace(trace, grid.h)
    assert (tmp_path / "fields" / "u_00.bin").exists()
    assert (tmp_path / "fields" / "u_01.csv").exists()

    loaded = manager.load_trace()
    assert loaded.config_hash == HASH
    assert loaded.mountain_pass == trace.mountain_pass
    assert len(loaded.records) == 2
    for original, restored in zip(trace.records, loaded.records):
        assert np.array_equal(restored.field, original.field)
        assert restored.eps == original.eps and restored.iterations == original.iterations
    assert loaded.to_dict() == trace.to_dict()


def test_trace_json_excludes_clock(tmp_path):
    grid = Grid.box(17)
    CheckpointManager(tmp_path).save_trace(make_trace(grid), grid.h)
    data = json.loads((tmp_path / "trace.json").read_text(encoding="utf-8"))
    assert "wall_time" not in data["records"][0]
    assert data["records"][1]["field_file"] == "fields/u_01.bin"


def test_checkpoint_rejects_schema_and_hash_mismatch(tmp_path):
    grid = Grid.box(17)
    manager = CheckpointManager(tmp_path)
    manager.save_trace(make_trace(grid), grid.h)
    path = tmp_path / "trace.json"
    data = json.loads(path.read_text(encoding="utf-8"))

    data["config_hash"] = "cd" * 32
    path.write_text(json.dumps(data), encoding="utf-8")
    with pytest.raises(SchemaError, match="does not match"):
        manager.load_trace()

    data["schema_version"] = 2
    path.write_text(json.dumps(data), encoding="utf-8")
    with pytest.raises(SchemaError, match="schema version"):
        manager.load_trace()


def test_exporter_files(tmp_path):
    grid = Grid.box(33)
    u = np.maximum(2.0 - 2.0 * grid.norm, 0.0)
    fb = attach_gradients(grid, u, extract_free_boundary(grid, u))
    trace = make_trace(grid)
    exporter = DataExporter(tmp_path / "out")
    exporter.export_config("grid.n = 33\n", HASH)
    exporter.export_timing(trace)
    exporter.export_free_boundary(fb, HASH)
    exporter.export_summary([{"value": 4.0, "level": 0.5, "extra": 1}], ["value", "level"], HASH)

    out = tmp_path / "out"
    assert (out / "config.cfg").read_text(encoding="utf-8").startswith(f"# config_hash={HASH}\n")
    assert json.loads((out / "timing.json").read_text(encoding="utf-8"))["wall_time"] == [2.0, 2.0]

    polyline = (out / "polyline.csv").read_text(encoding="utf-8").splitlines()
    assert polyline[1] == "segment,x,y"
    assert len(polyline) == 2 + 2 * len(fb.segments)

    normals = (out / "normals.csv").read_text(encoding="utf-8").splitlines()
    assert normals[1] == "x,y,nx,ny,alpha,beta,valid"
    assert len(normals) == 2 + len(fb.points)

    summary = (out / "summary.csv").read_text(encoding="utf-8").splitlines()
    assert summary[1:] == ["value,level", "4.0,0.5"]
