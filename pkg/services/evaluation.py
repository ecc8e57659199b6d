"""Residual fields and summary statistics of a trained model on a fixed evaluation grid."""

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import torch
from loguru import logger

from utils.types import Method, WorkQuadrature

from .boundary import Box, soft_boundary_report
from .elasticity import (
    FieldBatch,
    ScaleSet,
    internal_work_density,
    residual_balance,
    residual_constitutive,
    work_terms,
)
from .material import MaterialField
from .sampling import grid_points, loaded_edge_points

Predictor = Callable[[torch.Tensor], FieldBatch]

RESIDUAL_CHANNELS = ("R_div_x", "R_div_y", "R_const_xx", "R_const_yy", "R_const_xy")


@dataclass(frozen=True)
class GridStats:
    mean: float
    max: float
    min: float

    @classmethod
    def of(cls, values: np.ndarray) -> "GridStats":
        return cls(float(np.mean(values)), float(np.max(values)), float(np.min(values)))


@dataclass
class ResidualReport:
    """Physical residual grids on an n x n evaluation grid (x outer, y inner index)."""

    n_per_side: int
    points: np.ndarray
    channels: dict[str, np.ndarray]
    stats: dict[str, GridStats]
    work_norm: float
    work_norm_physical: float
    soft_boundary: dict[str, float] = field(default_factory=dict)

    @property
    def mean_r(self) -> float:
        return self.stats["R"].mean

    @property
    def argmax_r(self) -> np.ndarray:
        return self.points[int(np.argmax(self.channels["R"]))]

    def summary(self) -> dict:
        return {
            "n_per_side": self.n_per_side,
            "mean_R": self.stats["R"].mean,
            "max_R": self.stats["R"].max,
            "min_R": self.stats["R"].min,
            "work_norm": self.work_norm,
            "work_norm_physical": self.work_norm_physical,
            "stats": {name: vars(stats) for name, stats in self.stats.items()},
            "soft_boundary": self.soft_boundary,
        }


def _numpy(tensor: torch.Tensor) -> np.ndarray:
    return tensor.detach().cpu().numpy().astype(np.float64)


def residual_report(
    predict: Predictor,
    material: MaterialField,
    n_per_side: int,
    length: float,
    sigma_bar: float,
    scales: ScaleSet | None = None,
    quadrature: WorkQuadrature = "printed",
) -> ResidualReport:
    """Evaluate residuals, fields and the work-balance norm of `predict` on a regular grid."""
    scales = scales or ScaleSet.identity()
    domain = Box.square(length)
    points = grid_points(n_per_side, domain)
    lam, mu = material.query(points)

    with torch.no_grad():
        fields = predict(points)
        r_x, r_y = residual_balance(fields)
        r_xx, r_yy, r_xy = residual_constitutive(fields, lam, mu)
        residuals = [r_x, r_y, r_xx, r_yy, r_xy]
        boundary = predict(loaded_edge_points(length, n_per_side))
        w_int, w_ext = work_terms(fields, boundary, length, quadrature)

    channels = {
        "u_x": _numpy(fields.u_x),
        "u_y": _numpy(fields.u_y),
        "sigma_xx": _numpy(fields.sigma_xx),
        "sigma_yy": _numpy(fields.sigma_yy),
        "sigma_xy": _numpy(fields.sigma_xy),
        "W_int": _numpy(0.5 * internal_work_density(fields)),
    }
    for name, residual in zip(RESIDUAL_CHANNELS, residuals):
        channels[name] = _numpy(residual)
    channels["R"] = sum(np.abs(channels[name]) for name in RESIDUAL_CHANNELS)

    stats = {name: GridStats.of(values) for name, values in channels.items()}
    mismatch = float(w_int - w_ext)
    report = ResidualReport(
        n_per_side=n_per_side,
        points=_numpy(points),
        channels=channels,
        stats=stats,
        work_norm=abs(mismatch) / scales.work,
        work_norm_physical=abs(mismatch),
        soft_boundary=soft_boundary_report(predict, domain, sigma_bar),
    )
    logger.info(
        f"[Evaluation] mean R {report.mean_r:.6e}, max R {stats['R'].max:.6e}, "
        f"min R {stats['R'].min:.6e}, sqrt(L_W) {report.work_norm:.6e}"
    )
    return report


@dataclass
class StudyRow:
    """One configured run of a study; failed runs keep their error message."""

    method: Method
    n_points: int
    split: int
    mean_r: float = math.nan
    iterations: int = 0
    n_params: int = 0
    seed: int = 0
    status: str = "ok"
    error: str = ""


@dataclass
class StudyResult:
    kind: str
    rows: list[StudyRow] = field(default_factory=list)

    def by_method(self, method: Method) -> list[StudyRow]:
        return [row for row in self.rows if row.method == method]

    @property
    def failures(self) -> list[StudyRow]:
        return [row for row in self.rows if row.status != "ok"]
