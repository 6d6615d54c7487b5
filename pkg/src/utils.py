"""
Field serialization, checkpoint and artifact export utilities
"""

import csv
import json
import struct
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .errors import ArtifactNotFoundError, SchemaError
from .models import SCHEMA_VERSION, FreeBoundary, SolveRecord, SolveTrace, VerificationReport, to_builtin

logger = logging.getLogger(__name__)

FIELD_MAGIC = b"FBLF"
# magic, schema version, nx, ny, h, config hash (ascii, NUL padded); little-endian float64 values follow
FIELD_HEADER = struct.Struct("<4sIIId64s")


def _field_shape(values: np.ndarray) -> Tuple[int, int]:
    values = np.asarray(values)
    return (values.shape[0], 1) if values.ndim == 1 else values.shape


def write_field_csv(path: Path, values: np.ndarray, h: float, config_hash: str):
    """Row-major CSV: hash comment, 'nx,ny,h' header, then one row per x index"""
    nx, ny = _field_shape(values)
    rows = np.asarray(values, dtype=float).reshape(nx, ny)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(f"# config_hash={config_hash}\n")
        f.write("nx,ny,h\n")
        f.write(f"{nx},{ny},{h!r}\n")
        for row in rows:
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_field_csv(path: Path) -> Tuple[np.ndarray, float, str]:
    path = Path(path)
    if not path.exists():
        raise ArtifactNotFoundError(f"Missing field file {path}")
    with open(path, 'r', encoding='utf-8') as f:
        lines = f.read().splitlines()
    if len(lines) < 3 or not lines[0].startswith("# config_hash=") or lines[1] != "nx,ny,h":
        raise SchemaError(f"{path} is not a field CSV")
    config_hash = lines[0].split("=", 1)[1]
    try:
        nx, ny, h = lines[2].split(",")
        nx, ny, h = int(nx), int(ny), float(h)
        values = np.array([[float(v) for v in line.split(",")] for line in lines[3:]])
    except ValueError as e:
        raise SchemaError(f"{path}: malformed field CSV ({e})") from e
    if values.shape != (nx, ny):
        raise SchemaError(f"{path}: expected {nx}x{ny} values, found {values.shape}")
    return (values[:, 0] if ny == 1 else values), h, config_hash


def write_field_binary(path: Path, values: np.ndarray, h: float, config_hash: str):
    nx, ny = _field_shape(values)
    header = FIELD_HEADER.pack(FIELD_MAGIC, SCHEMA_VERSION, nx, ny, h, config_hash.encode("ascii"))
    with open(path, 'wb') as f:
        f.write(header)
        f.write(np.asarray(values, dtype="<f8").tobytes(order="C"))


def read_field_binary(path: Path) -> Tuple[np.ndarray, float, str]:
    path = Path(path)
    if not path.exists():
        raise ArtifactNotFoundError(f"Missing field file {path}")
    data = path.read_bytes()
    if len(data) < FIELD_HEADER.size:
        raise SchemaError(f"{path}: truncated header")
    magic, version, nx, ny, h, raw_hash = FIELD_HEADER.unpack_from(data)
    if magic != FIELD_MAGIC:
        raise SchemaError(f"{path}: bad magic {magic!r}")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{path}: schema version {version}, expected {SCHEMA_VERSION}")
    body = data[FIELD_HEADER.size:]
    if len(body) != 8 * nx * ny:
        raise SchemaError(f"{path}: expected {nx * ny} values, found {len(body) // 8}")
    values = np.frombuffer(body, dtype="<f8").astype(float)
    values = values if ny == 1 else values.reshape(nx, ny)
    return values, h, raw_hash.rstrip(b"\0").decode("ascii")


def write_json(path: Path, data: Dict):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(to_builtin(data), f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def read_json(path: Path) -> Dict:
    path = Path(path)
    if not path.exists():
        raise ArtifactNotFoundError(f"Missing artifact {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e})") from e


class CheckpointManager:
    """Saves and loads a solve trace with its per-epsilon fields"""

    def __init__(self, run_dir: Union[str, Path]):
        self.run_dir = Path(run_dir)
        self.fields_dir = self.run_dir / "fields"

    def save_trace(self, trace: SolveTrace, h: float):
        """Write trace.json plus one binary and one CSV field per epsilon level"""
        self.fields_dir.mkdir(parents=True, exist_ok=True)
        data = trace.to_dict()
        for j, (record, entry) in enumerate(zip(trace.records, data["records"])):
            stem = f"u_{j:02d}"
            write_field_binary(self.fields_dir / f"{stem}.bin", record.field, h, trace.config_hash)
            write_field_csv(self.fields_dir / f"{stem}.csv", record.field, h, trace.config_hash)
            entry["field_file"] = f"fields/{stem}.bin"
        write_json(self.run_dir / "trace.json", data)
        logger.info(f"Trace saved: {len(trace.records)} levels in {self.run_dir}")

    def load_trace(self) -> SolveTrace:
        data = read_json(self.run_dir / "trace.json")
        if data.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"trace.json has schema version {data.get('schema_version')}, "
                              f"expected {SCHEMA_VERSION}")
        try:
            trace = SolveTrace(config_hash=data["config_hash"], grid=data["grid"], model=data["model"],
                               mountain_pass=data.get("mountain_pass", {}))
            for entry in data["records"]:
                entry = dict(entry)
                values, _, field_hash = read_field_binary(self.run_dir / entry.pop("field_file"))
                if field_hash != trace.config_hash:
                    raise SchemaError(f"Field hash {field_hash} does not match trace hash {trace.config_hash}")
                trace.records.append(SolveRecord(field=values, **entry))
        except (KeyError, TypeError) as e:
            raise SchemaError(f"trace.json is missing data: {e}") from e
        logger.info(f"Trace loaded: {len(trace.records)} levels from {self.run_dir}")
        return trace


class DataExporter:
    """Writes reports, free-boundary polylines, timing and sweep summaries"""

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def export_config(self, text: str, config_hash: str):
        with open(self.out_dir / "config.cfg", 'w', encoding='utf-8') as f:
            f.write(f"# config_hash={config_hash}\n")
            f.write(text)

    def export_report(self, report: VerificationReport):
        write_json(self.out_dir / "report.json", report.to_dict())
        logger.info(f"Report written to {self.out_dir / 'report.json'}")

    def export_timing(self, trace: SolveTrace):
        write_json(self.out_dir / "timing.json", trace.timing())

    def export_free_boundary(self, fb: FreeBoundary, config_hash: str):
        """Polyline CSV (two vertices per segment, segment index column) and normals CSV"""
        with open(self.out_dir / "polyline.csv", 'w', encoding='utf-8', newline='') as f:
            f.write(f"# config_hash={config_hash}\n")
            writer = csv.writer(f, lineterminator="\n")
            coords = ["x", "y"] if fb.points.shape[-1] == 2 else ["r"]
            writer.writerow(["segment"] + coords)
            for k, segment in enumerate(fb.segments):
                for vertex in segment:
                    writer.writerow([k] + [f"{v:.17g}" for v in vertex])
            if len(fb.segments) == 0:
                for k, point in enumerate(fb.points):
                    writer.writerow([k] + [f"{v:.17g}" for v in point])

        with open(self.out_dir / "normals.csv", 'w', encoding='utf-8', newline='') as f:
            f.write(f"# config_hash={config_hash}\n")
            writer = csv.writer(f, lineterminator="\n")
            axes = ["x", "y"] if fb.points.shape[-1] == 2 else ["r"]
            writer.writerow(axes + [f"n{a}" for a in axes] + ["alpha", "beta", "valid"])
            alpha = fb.alpha if fb.alpha is not None else np.full(len(fb.points), np.nan)
            beta = fb.beta if fb.beta is not None else np.full(len(fb.points), np.nan)
            valid = fb.valid if fb.valid is not None else np.zeros(len(fb.points), dtype=bool)
            for p, n, a, b, v in zip(fb.points, fb.normals, alpha, beta, valid):
                writer.writerow([f"{x:.17g}" for x in (*p, *n, a, b)] + [int(v)])

    def export_summary(self, rows: List[Dict], columns: Sequence[str], config_hash: str):
        with open(self.out_dir / "summary.csv", 'w', encoding='utf-8', newline='') as f:
            f.write(f"# config_hash={config_hash}\n")
            writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
        logger.info(f"Summary written to {self.out_dir / 'summary.csv'} ({len(rows)} runs)")
