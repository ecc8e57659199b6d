"""Field, history, study and parameter exports, plus readers for all of them."""

import csv
import os
from dataclasses import asdict, dataclass

import numpy as np
import pyjson5 as json
import torch
from loguru import logger

from services.evaluation import ResidualReport, StudyResult
from shared.netcore import Topology
from shared.optimizer import OptHistory

from .constants import FIELD_CHANNELS, SNAPSHOT_MAGIC, SNAPSHOT_VERSION
from .exceptions import ExportError
from .functions import ensure_directory

_ACTIVATION_CODES = {"swish": 0, "sigmoid": 1, "tanh": 2, "identity": 3}

# Fixed-size little-endian snapshot header
_SNAPSHOT_HEADER = np.dtype(
    [
        ("magic", "S8"),
        ("version", "<u4"),
        ("input_dim", "<u4"),
        ("output_dim", "<u4"),
        ("n_layers", "<u4"),
        ("units_per_layer", "<u4"),
        ("activation", "<u4"),
        ("beta", "<f8"),
        ("n_x", "<u4"),
        ("n_y", "<u4"),
        ("length", "<f8"),
        ("n_params", "<u8"),
    ]
)


@dataclass
class FieldExport:
    """Named channels on an nx x ny grid, x index fastest."""

    nx: int
    ny: int
    points: np.ndarray  # (nx * ny, 2)
    channels: dict[str, np.ndarray]

    def __post_init__(self):
        size = self.nx * self.ny
        if self.points.shape != (size, 2):
            raise ExportError(f"Expected {size} points, got {self.points.shape[0]}")
        for name, values in self.channels.items():
            if np.asarray(values).shape != (size,):
                raise ExportError(f"Channel {name} has {np.asarray(values).size} values, expected {size}")

    @classmethod
    def from_report(cls, report: ResidualReport) -> "FieldExport":
        n = report.n_per_side

        # The evaluation grid uses x as the outer index
        def reorder(values):
            return np.asarray(values).reshape(n, n).T.reshape(-1)

        points = np.stack([reorder(report.points[:, 0]), reorder(report.points[:, 1])], axis=1)
        channels = {name: reorder(report.channels[name]) for name in FIELD_CHANNELS}
        return cls(n, n, points, channels)


def _target(path: str) -> str:
    try:
        ensure_directory(os.path.dirname(os.path.abspath(path)))
    except OSError as e:
        raise ExportError(f"Cannot create directory for {path}: {e}") from e
    return path


def write_fields_csv(path: str, export: FieldExport) -> None:
    names = list(export.channels)
    table = np.column_stack([export.points, *[export.channels[name] for name in names]])
    try:
        np.savetxt(_target(path), table, fmt="%.9e", delimiter=",", header=",".join(["x", "y", *names]), comments="")
    except OSError as e:
        raise ExportError(f"Cannot write {path}: {e}") from e


def read_fields_csv(path: str) -> FieldExport:
    with open(path, encoding="utf-8") as file:
        header = file.readline().strip().split(",")
    if header[:2] != ["x", "y"]:
        raise ExportError(f"{path} does not start with an x,y header")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    nx = np.unique(table[:, 0]).size
    ny = np.unique(table[:, 1]).size
    channels = {name: table[:, index + 2] for index, name in enumerate(header[2:])}
    return FieldExport(nx, ny, table[:, :2], channels)


def write_fields_vtk(path: str, export: FieldExport, title: str = "microelast fields") -> None:
    """Legacy ASCII STRUCTURED_POINTS, one SCALARS block per channel."""
    xs = export.points[: export.nx, 0]
    ys = export.points[:: export.nx, 1]
    dx = float(xs[1] - xs[0]) if export.nx > 1 else 1.0
    dy = float(ys[1] - ys[0]) if export.ny > 1 else 1.0
    try:
        with open(_target(path), "w", encoding="ascii") as fp:
            fp.write("# vtk DataFile Version 3.0\n")
            fp.write(f"{title}\n")
            fp.write("ASCII\nDATASET STRUCTURED_POINTS\n")
            fp.write(f"DIMENSIONS {export.nx} {export.ny} 1\n")
            fp.write(f"ORIGIN {xs[0]:.9e} {ys[0]:.9e} 0\n")
            fp.write(f"SPACING {dx:.9e} {dy:.9e} 1\n")
            fp.write(f"POINT_DATA {export.nx * export.ny}\n")
            for name, values in export.channels.items():
                fp.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for value in values:
                    fp.write("%.9e\n" % float(value))
    except OSError as e:
        raise ExportError(f"Cannot write {path}: {e}") from e


def read_fields_vtk(path: str) -> FieldExport:
    with open(path, encoding="ascii") as fp:
        lines = [line.strip() for line in fp if line.strip()]
    if not lines[0].startswith("# vtk DataFile") or lines[3] != "DATASET STRUCTURED_POINTS":
        raise ExportError(f"{path} is not a legacy structured-points file")

    nx, ny, _ = (int(v) for v in lines[4].split()[1:])
    origin = [float(v) for v in lines[5].split()[1:3]]
    spacing = [float(v) for v in lines[6].split()[1:3]]
    size = nx * ny
    channels = {}
    cursor = 8
    while cursor < len(lines):
        name = lines[cursor].split()[1]
        channels[name] = np.array([float(v) for v in lines[cursor + 2 : cursor + 2 + size]])
        cursor += 2 + size

    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    points = np.stack(
        [origin[0] + ix.reshape(-1) * spacing[0], origin[1] + iy.reshape(-1) * spacing[1]], axis=1
    )
    return FieldExport(nx, ny, points, channels)


def export_fields(export: FieldExport, path_stem: str, fmt: str = "csv") -> str:
    if fmt == "csv":
        path = f"{path_stem}.csv"
        write_fields_csv(path, export)
    elif fmt == "vtk":
        path = f"{path_stem}.vtk"
        write_fields_vtk(path, export)
    else:
        raise ExportError(f"Unknown export format '{fmt}'")
    logger.info(f"[Export] Fields written to {path}")
    return path


def write_history_csv(path: str, history: OptHistory) -> None:
    try:
        with open(_target(path), "w", newline="", encoding="utf-8") as file:
            writer = csv.writer(file)
            writer.writerow(["iteration", "loss", "grad_norm", "step_length"])
            for record in history.records:
                writer.writerow(
                    [record.iteration, f"{record.loss:.9e}", f"{record.grad_norm:.9e}", f"{record.step_length:.9e}"]
                )
    except OSError as e:
        raise ExportError(f"Cannot write {path}: {e}") from e


def write_points_csv(path: str, points: torch.Tensor) -> None:
    try:
        np.savetxt(_target(path), points.detach().numpy(), fmt="%.9e", delimiter=",", header="x,y", comments="")
    except OSError as e:
        raise ExportError(f"Cannot write {path}: {e}") from e


def write_study_csv(path: str, study: StudyResult) -> None:
    rows = [asdict(row) for row in study.rows]
    fields = ["method", "n_points", "split", "mean_r", "iterations", "n_params", "seed", "status", "error"]
    try:
        with open(_target(path), "w", newline="", encoding="utf-8") as file:
            writer = csv.DictWriter(file, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)
    except OSError as e:
        raise ExportError(f"Cannot write {path}: {e}") from e
    logger.info(f"[Export] Study '{study.kind}' with {len(rows)} rows written to {path}")


def write_summary(path: str, summary: dict) -> None:
    """Machine-readable run summary; no timestamps so equal runs give equal files."""
    try:
        with open(_target(path), "w", encoding="utf-8") as file:
            file.write(json.dumps(summary))
            file.write("\n")
    except OSError as e:
        raise ExportError(f"Cannot write {path}: {e}") from e


def read_summary(path: str) -> dict:
    with open(path, encoding="utf-8") as file:
        return json.load(file)


@dataclass
class Snapshot:
    topology: Topology
    n_x: int
    n_y: int
    length: float
    params: torch.Tensor


def save_snapshot(path: str, snapshot: Snapshot) -> None:
    """Versioned header followed by the parameters as little-endian doubles."""
    topology = snapshot.topology
    header = np.zeros(1, dtype=_SNAPSHOT_HEADER)
    header[0] = (
        SNAPSHOT_MAGIC,
        SNAPSHOT_VERSION,
        topology.input_dim,
        topology.output_dim,
        topology.n_layers,
        topology.units_per_layer,
        _ACTIVATION_CODES[topology.activation],
        topology.beta,
        snapshot.n_x,
        snapshot.n_y,
        snapshot.length,
        snapshot.params.numel(),
    )
    expected = topology.n_params * snapshot.n_x * snapshot.n_y
    if snapshot.params.numel() != expected:
        raise ExportError(f"Snapshot holds {snapshot.params.numel()} parameters, topology needs {expected}")
    try:
        with open(_target(path), "wb") as file:
            file.write(header.tobytes())
            file.write(snapshot.params.detach().numpy().astype("<f8").tobytes())
    except OSError as e:
        raise ExportError(f"Cannot write {path}: {e}") from e
    logger.info(f"[Export] Snapshot with {expected} parameters written to {path}")


def load_snapshot(path: str) -> Snapshot:
    with open(path, "rb") as file:
        data = file.read()
    if len(data) < _SNAPSHOT_HEADER.itemsize:
        raise ExportError(f"{path} is too short for a snapshot header")
    header = np.frombuffer(data[: _SNAPSHOT_HEADER.itemsize], dtype=_SNAPSHOT_HEADER)[0]
    if bytes(header["magic"]).ljust(8, b"\x00") != SNAPSHOT_MAGIC:
        raise ExportError(f"{path} is not a parameter snapshot")
    if int(header["version"]) != SNAPSHOT_VERSION:
        raise ExportError(f"Unsupported snapshot version {int(header['version'])}")

    activation = {code: name for name, code in _ACTIVATION_CODES.items()}[int(header["activation"])]
    topology = Topology(
        int(header["input_dim"]),
        int(header["output_dim"]),
        int(header["n_layers"]),
        int(header["units_per_layer"]),
        activation,
        float(header["beta"]),
    )
    n_x, n_y = int(header["n_x"]), int(header["n_y"])
    n_params = int(header["n_params"])
    if n_params != topology.n_params * n_x * n_y:
        raise ExportError("Snapshot parameter count does not match its topology echo")
    payload = data[_SNAPSHOT_HEADER.itemsize :]
    if len(payload) != 8 * n_params:
        raise ExportError(f"Snapshot payload has {len(payload)} bytes, expected {8 * n_params}")
    params = torch.from_numpy(np.frombuffer(payload, dtype="<f8").astype(np.float64))
    return Snapshot(topology, n_x, n_y, float(header["length"]), params)
