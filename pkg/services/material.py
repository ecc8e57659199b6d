"""Material fields lambda(x), mu(x): constants, a smooth tanh inclusion and a trained network."""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
import torch
from loguru import logger

from shared.netcore import DTYPE, Objective, Topology, as_points, forward, init_params
from shared.optimizer import BfgsOptions, OptHistory, minimize
from utils.constants import DOMAIN_TOLERANCE
from utils.exceptions import DomainError, MaterialError


@dataclass(frozen=True)
class EngineeringConstants:
    """Young's modulus E [MPa] and Poisson's ratio nu."""

    E: float
    nu: float

    def __post_init__(self):
        if not self.E > 0.0:
            raise MaterialError(f"Young's modulus must be positive, got {self.E}")
        if self.nu == 0.5:
            raise MaterialError("nu = 0.5 is incompressible, Lame lambda is unbounded")
        if not -1.0 < self.nu < 0.5:
            raise MaterialError(f"Poisson's ratio must lie in (-1, 0.5), got {self.nu}")


def lame_from_engineering(ec: EngineeringConstants) -> tuple[float, float]:
    lam = ec.E * ec.nu / ((1.0 + ec.nu) * (1.0 - 2.0 * ec.nu))
    mu = ec.E / (2.0 * (1.0 + ec.nu))
    return lam, mu


@dataclass(frozen=True)
class TanhProfile:
    """c1 * (c2 + tanh((radius - r) / delta)) + c3"""

    c1: float
    c2: float
    c3: float
    delta: float
    radius: float = 0.4

    def __post_init__(self):
        if not self.delta > 0.0:
            raise MaterialError("delta must be positive")

    @classmethod
    def calibrate(cls, inside: float, outside: float, delta: float, radius: float = 0.4) -> "TanhProfile":
        """Constants so tanh = +1 gives `inside` and tanh = -1 gives `outside` (c2 fixed to 0)."""
        # c1 (c2 + 1) + c3 = inside, c1 (c2 - 1) + c3 = outside
        matrix = np.array([[1.0, 1.0], [-1.0, 1.0]])
        c1, c3 = np.linalg.solve(matrix, np.array([inside, outside]))
        return cls(float(c1), 0.0, float(c3), delta, radius)

    @property
    def minimum(self) -> float:
        return min(self.c1 * (self.c2 + 1.0), self.c1 * (self.c2 - 1.0)) + self.c3


def tanh_inclusion(x, profile: TanhProfile):
    points = as_points(x)
    r = torch.linalg.vector_norm(points, dim=1)
    return profile.c1 * (profile.c2 + torch.tanh((profile.radius - r) / profile.delta)) + profile.c3


def tanh_inclusion_gradient(x, profile: TanhProfile) -> torch.Tensor:
    """Analytic spatial gradient (N, 2); zero at the centre by symmetry."""
    points = as_points(x)
    r = torch.linalg.vector_norm(points, dim=1)
    t = torch.tanh((profile.radius - r) / profile.delta)
    d_dr = -profile.c1 * (1.0 - t**2) / profile.delta
    safe_r = torch.where(r > 0.0, r, torch.ones_like(r))
    direction = torch.where((r > 0.0).unsqueeze(-1), points / safe_r.unsqueeze(-1), torch.zeros_like(points))
    return d_dr.unsqueeze(-1) * direction


@dataclass(frozen=True)
class VoxelGrid:
    """Row-major image in [0, 1], top row first."""

    width: int
    height: int
    values: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size != self.width * self.height:
            raise ValueError(f"Grid has {values.size} values, expected {self.width * self.height}")
        object.__setattr__(self, "values", values)

    def as_image(self) -> np.ndarray:
        return self.values.reshape(self.height, self.width)

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.values == 0.0) | (self.values == 1.0)))

    def voxel_centers(self, length: float) -> np.ndarray:
        """Centres of all voxels in row-major order, y decreasing with the row index."""
        cols = -length / 2.0 + (np.arange(self.width) + 0.5) * length / self.width
        rows = length / 2.0 - (np.arange(self.height) + 0.5) * length / self.height
        xx, yy = np.meshgrid(cols, rows)
        return np.stack([xx.reshape(-1), yy.reshape(-1)], axis=1)


@dataclass(frozen=True)
class PhaseValues:
    """Lame constants of phase 0 (matrix, dark voxels) and phase 1 (inclusion, bright voxels)."""

    matrix: tuple[float, float]
    inclusion: tuple[float, float]

    @property
    def lambda_bounds(self) -> tuple[float, float]:
        return min(self.matrix[0], self.inclusion[0]), max(self.matrix[0], self.inclusion[0])

    @property
    def mu_bounds(self) -> tuple[float, float]:
        return min(self.matrix[1], self.inclusion[1]), max(self.matrix[1], self.inclusion[1])


class MaterialField(ABC):
    """Map x -> (lambda(x), mu(x)) on the square [-L/2, L/2]^2."""

    def __init__(self, length: float):
        self.length = length

    def _checked(self, x) -> torch.Tensor:
        points = as_points(x)
        h = self.length / 2.0
        if (points.abs() > h + DOMAIN_TOLERANCE).any():
            raise DomainError(f"Point outside [-{h}, {h}]^2")
        return points.clamp(-h, h)

    def query(self, x) -> tuple[torch.Tensor, torch.Tensor]:
        points = self._checked(x)
        with torch.no_grad():
            lam, mu = self._evaluate(points)
        if not (torch.isfinite(lam).all() and torch.isfinite(mu).all()) or (mu <= 0.0).any() or (lam < 0.0).any():
            raise MaterialError("Material field produced unphysical values")
        return lam, mu

    @abstractmethod
    def _evaluate(self, points: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]: ...

    @property
    @abstractmethod
    def maxima(self) -> tuple[float, float]: ...


class ConstantMaterial(MaterialField):
    """Homogeneous material."""

    def __init__(self, lam: float, mu: float, length: float):
        super().__init__(length)
        if lam < 0.0 or mu <= 0.0:
            raise MaterialError("Lame constants must satisfy lambda >= 0 and mu > 0")
        self.lam = lam
        self.mu = mu

    def _evaluate(self, points):
        n = points.shape[0]
        return torch.full((n,), self.lam, dtype=DTYPE), torch.full((n,), self.mu, dtype=DTYPE)

    @property
    def maxima(self):
        return self.lam, self.mu


class TanhInclusionMaterial(MaterialField):
    """Smooth circular inclusion centred in the cell."""

    def __init__(self, lambda_profile: TanhProfile, mu_profile: TanhProfile, length: float):
        super().__init__(length)
        self.lambda_profile = lambda_profile
        self.mu_profile = mu_profile

    @classmethod
    def from_phases(cls, phases: PhaseValues, delta: float, radius: float, length: float) -> "TanhInclusionMaterial":
        return cls(
            TanhProfile.calibrate(phases.inclusion[0], phases.matrix[0], delta, radius),
            TanhProfile.calibrate(phases.inclusion[1], phases.matrix[1], delta, radius),
            length,
        )

    def _evaluate(self, points):
        return tanh_inclusion(points, self.lambda_profile), tanh_inclusion(points, self.mu_profile)

    @property
    def maxima(self):
        return (
            max(self.lambda_profile.c1 * (self.lambda_profile.c2 + s) + self.lambda_profile.c3 for s in (-1.0, 1.0)),
            max(self.mu_profile.c1 * (self.mu_profile.c2 + s) + self.mu_profile.c3 for s in (-1.0, 1.0)),
        )


def bounded_output(raw: torch.Tensor, phases: PhaseValues) -> torch.Tensor:
    """(tanh(z) + 1) (max - min) / 2 + min per column (lambda, mu)."""
    bounds = torch.tensor([phases.lambda_bounds, phases.mu_bounds], dtype=DTYPE)
    low, high = bounds[:, 0], bounds[:, 1]
    return (torch.tanh(raw) + 1.0) * (high - low) / 2.0 + low


class NetworkMaterial(MaterialField):
    """Material network trained on a voxel image."""

    def __init__(self, params: torch.Tensor, topology: Topology, phases: PhaseValues, length: float):
        super().__init__(length)
        if topology.input_dim != 2 or topology.output_dim != 2:
            raise MaterialError("Material network needs 2 inputs and 2 outputs")
        self.params = params.detach().clone()
        self.topology = topology
        self.phases = phases

    def _evaluate(self, points):
        out = bounded_output(forward(self.params, self.topology, points / (self.length / 2.0)), self.phases)
        return out[:, 0], out[:, 1]

    @property
    def maxima(self):
        return self.phases.lambda_bounds[1], self.phases.mu_bounds[1]


def phase_targets(grid: VoxelGrid, phases: PhaseValues) -> np.ndarray:
    """(N, 2) target (lambda, mu) per voxel."""
    inclusion = grid.values == 1.0
    lam = np.where(inclusion, phases.inclusion[0], phases.matrix[0])
    mu = np.where(inclusion, phases.inclusion[1], phases.matrix[1])
    return np.stack([lam, mu], axis=1)


def train_material_network(
    grid: VoxelGrid,
    phases: PhaseValues,
    topology: Topology | None = None,
    max_iters: int = 300,
    length: float = 2.0,
    seed: int = 0,
) -> tuple[NetworkMaterial, OptHistory]:
    """Least-squares fit of the bounded network to the per-voxel phase values."""
    if not grid.is_binary:
        raise MaterialError("Material network needs a binarized (two-phase) grid")
    topology = topology or Topology(output_dim=2, n_layers=20, units_per_layer=15, activation="tanh")

    x_hat = torch.as_tensor(grid.voxel_centers(length) / (length / 2.0), dtype=DTYPE)
    targets = torch.as_tensor(phase_targets(grid, phases), dtype=DTYPE)
    scale = torch.tensor([phases.lambda_bounds[1], phases.mu_bounds[1]], dtype=DTYPE)
    scaled_targets = targets / scale

    def loss(theta):
        prediction = bounded_output(forward(theta, topology, x_hat), phases) / scale
        return ((prediction - scaled_targets) ** 2).mean()

    params0 = init_params(topology, seed)
    objective = Objective(loss, check_at=params0, name="material")
    logger.info(
        f"[Material] Training material network ({topology.n_params} params) on {grid.width}x{grid.height} voxels"
    )
    params, history = minimize(objective, params0, BfgsOptions(max_iters=max_iters))
    material = NetworkMaterial(params, topology, phases, length)

    accuracy = classification_accuracy(material, grid)
    logger.info(f"[Material] Fit finished, loss {history.final_loss:.3e}, phase accuracy {accuracy:.2%}")
    return material, history


def classification_accuracy(material: MaterialField, grid: VoxelGrid) -> float:
    """Share of voxel centres whose predicted lambda is nearest to the true phase value."""
    lam, _ = material.query(grid.voxel_centers(material.length))
    phases = material.phases if isinstance(material, NetworkMaterial) else None
    if phases is None:
        raise MaterialError("Accuracy needs a network material with phase values")
    midpoint = 0.5 * (phases.matrix[0] + phases.inclusion[0])
    inclusion_is_high = phases.inclusion[0] >= phases.matrix[0]
    predicted = (lam.numpy() >= midpoint) if inclusion_is_high else (lam.numpy() < midpoint)
    if math.isclose(phases.matrix[0], phases.inclusion[0]):
        return 1.0
    return float(np.mean(predicted == (grid.values == 1.0)))
