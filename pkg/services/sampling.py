"""Collocation points: regular grids, uniform random sets and adaptive top-k refinement."""

import math
from dataclasses import dataclass, field, replace
from typing import Protocol

import torch
from loguru import logger

from shared.netcore import DTYPE
from shared.optimizer import BfgsOptions, OptHistory
from utils.exceptions import DomainError, OptimizerError, SelectionError
from utils.types import Provenance

from .boundary import Box


@dataclass(frozen=True)
class CollocationSet:
    """Interior points and points on the traction-loaded (right) edge."""

    interior: torch.Tensor  # (n_d, 2)
    boundary: torch.Tensor  # (n_b, 2)
    provenance: Provenance = "regular"

    def __len__(self) -> int:
        return self.interior.shape[0]

    @property
    def n_interior(self) -> int:
        return self.interior.shape[0]

    @property
    def n_boundary(self) -> int:
        return self.boundary.shape[0]

    def check_within(self, domain: Box, tol: float = 1e-12) -> None:
        if not bool(domain.contains(self.interior, tol).all()):
            raise DomainError("Interior collocation point outside the domain")
        if self.n_boundary and (self.boundary[:, 0] - domain.x1).abs().max() > tol:
            raise DomainError("Boundary collocation point off the loaded edge")


def loaded_edge_points(length: float, n: int, box: Box | None = None) -> torch.Tensor:
    """n uniformly spaced points on x = L/2, restricted to the box's y-range if given."""
    h = length / 2.0
    box = box or Box.square(length)
    if abs(box.x1 - h) > 1e-12 or n == 0:
        return torch.empty((0, 2), dtype=DTYPE)
    y = torch.linspace(box.y0, box.y1, n, dtype=DTYPE)
    return torch.stack([torch.full_like(y, h), y], dim=1)


def grid_points(n_per_side: int, box: Box) -> torch.Tensor:
    """Cartesian product with x as the outer and y as the inner index, edges included."""
    xs = torch.linspace(box.x0, box.x1, n_per_side, dtype=DTYPE)
    ys = torch.linspace(box.y0, box.y1, n_per_side, dtype=DTYPE)
    gx, gy = torch.meshgrid(xs, ys, indexing="ij")
    return torch.stack([gx.reshape(-1), gy.reshape(-1)], dim=1)


def regular_grid(n_per_side: int, length: float, box: Box | None = None, n_boundary: int | None = None) -> CollocationSet:
    if n_per_side < 2:
        raise ValueError(f"n_per_side must be at least 2, got {n_per_side}")
    box = box or Box.square(length)
    n_b = n_per_side if n_boundary is None else n_boundary
    return CollocationSet(grid_points(n_per_side, box), loaded_edge_points(length, n_b, box), "regular")


def uniform_random(n: int, length: float, seed: int, n_boundary: int | None = None) -> CollocationSet:
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    generator = torch.Generator().manual_seed(seed)
    points = (torch.rand(n, 2, generator=generator, dtype=DTYPE) - 0.5) * length
    n_b = int(math.isqrt(n)) if n_boundary is None else n_boundary
    return CollocationSet(points, loaded_edge_points(length, max(n_b, 2)), "random")


def select_adaptive(candidates: torch.Tensor, losses: torch.Tensor, n_ada: int) -> torch.Tensor:
    """The n_ada candidates with the largest loss, highest first, ties to the lower index."""
    candidates = torch.as_tensor(candidates, dtype=DTYPE)
    losses = torch.as_tensor(losses, dtype=DTYPE).reshape(-1)
    if losses.shape[0] != candidates.shape[0]:
        raise SelectionError(f"{losses.shape[0]} losses for {candidates.shape[0]} candidates")
    if not torch.isfinite(losses).all():
        raise SelectionError("Pointwise losses must be finite")
    if n_ada > candidates.shape[0] or n_ada < 0:
        raise SelectionError(f"Cannot select {n_ada} of {candidates.shape[0]} candidates")
    order = torch.sort(losses, descending=True, stable=True).indices
    return candidates[order[:n_ada]]


def combine(regular: CollocationSet, adaptive: torch.Tensor) -> CollocationSet:
    """Concatenate regular and adaptive interior points; duplicates are kept."""
    return CollocationSet(torch.cat([regular.interior, adaptive]), regular.boundary, "combined")


@dataclass(frozen=True)
class AdaptiveConfig:
    """Schedule of the adaptive training loop."""

    n_fine: int = 1
    n_iter: int = 1
    n_reg: int = 64
    n_rand: int = 1024
    n_ada: int = 29
    alpha: float = 1.0
    seed: int = 0
    fine_iters: int = 250
    cycle_iters: int = 250

    def __post_init__(self):
        if self.n_fine < 0 or self.n_iter < 0:
            raise ValueError("n_fine and n_iter must be non-negative")
        if self.n_ada < 1 or self.n_ada > self.n_rand:
            raise ValueError(f"Need 1 <= n_ada <= n_rand, got n_ada={self.n_ada}, n_rand={self.n_rand}")
        if math.isqrt(self.n_reg) ** 2 != self.n_reg or self.n_reg < 4:
            raise ValueError(f"n_reg must be a square of at least 4, got {self.n_reg}")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")

    @property
    def gamma(self) -> float:
        return self.n_reg / self.n_ada

    @property
    def reg_side(self) -> int:
        return math.isqrt(self.n_reg)

    @staticmethod
    def split_budget(n_total: int, gamma: float = 2.2) -> tuple[int, int]:
        """(n_reg, n_ada): a square regular grid and n_reg / gamma adaptive points."""
        side = max(2, round(math.sqrt(gamma / (1.0 + gamma) * n_total)))
        n_reg = side * side
        return n_reg, max(1, round(n_reg / gamma))

    @classmethod
    def for_budget(cls, n_total: int, gamma: float = 2.2, n_rand: int | None = None, **kwargs) -> "AdaptiveConfig":
        n_reg, n_ada = cls.split_budget(n_total, gamma)
        n_rand = n_rand if n_rand is not None else max(n_total, n_ada)
        return cls(n_reg=n_reg, n_ada=n_ada, n_rand=n_rand, **kwargs)


class Trainable(Protocol):
    history: OptHistory

    def train(self, collocation: CollocationSet, opts: BfgsOptions | None = None) -> OptHistory: ...

    def pointwise_loss(self, points: torch.Tensor) -> torch.Tensor: ...


@dataclass
class CycleRecord:
    cycle: int
    n_points: int
    selected: torch.Tensor
    history: OptHistory


@dataclass
class AdaptiveHistory:
    """Fine-grid runs followed by one record per adaptive cycle."""

    fine: list[OptHistory] = field(default_factory=list)
    cycles: list[CycleRecord] = field(default_factory=list)


def _train(solver: Trainable, collocation: CollocationSet, opts: BfgsOptions, cycle: int | None) -> OptHistory:
    history = solver.train(collocation, opts)
    if history.termination_reason == "line_search_fail" and not history.records:
        raise OptimizerError("Training started from a non-finite loss", cycle)
    return history


def adaptive_loop(
    solver: Trainable,
    fine: CollocationSet,
    length: float,
    config: AdaptiveConfig,
    opts: BfgsOptions | None = None,
) -> tuple[Trainable, AdaptiveHistory]:
    """Pre-train on the fine grid, then retrain on regular + worst random points per cycle."""
    opts = opts or BfgsOptions()
    history = AdaptiveHistory()

    fine_opts = replace(opts, max_iters=config.fine_iters, clip_alpha=None)
    for _ in range(config.n_fine):
        history.fine.append(_train(solver, fine, fine_opts, None))

    cycle_opts = replace(opts, max_iters=config.cycle_iters, clip_alpha=config.alpha)
    regular = regular_grid(config.reg_side, length, n_boundary=fine.n_boundary)
    for cycle in range(config.n_iter):
        try:
            candidates = uniform_random(config.n_rand, length, config.seed + cycle).interior
            scores = solver.pointwise_loss(candidates)
            selected = select_adaptive(candidates, scores, config.n_ada)
            collocation = combine(regular, selected)
            logger.info(
                f"[Adaptive] Cycle {cycle}: {regular.n_interior} regular + {config.n_ada} adaptive points, "
                f"gamma {config.gamma:.2f}"
            )
            cycle_history = _train(solver, collocation, cycle_opts, cycle)
        except OptimizerError:
            raise
        except Exception as e:
            raise OptimizerError(str(e), cycle) from e
        history.cycles.append(CycleRecord(cycle, len(collocation), selected, cycle_history))

    return solver, history
