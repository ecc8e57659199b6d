"""Conservative PINN: uniform box split, one network per box, interface penalties."""

from dataclasses import dataclass, field

import torch
from loguru import logger

from shared.netcore import DTYPE, Objective, Topology, as_points, init_params
from shared.optimizer import BfgsOptions, OptHistory, minimize
from utils.constants import DOMAIN_TOLERANCE
from utils.exceptions import DomainError, InterfaceError
from utils.types import Orientation, WorkQuadrature

from .boundary import Box, BvpSpec, subdomain_rules
from .elasticity import (
    S_XX,
    S_XY,
    S_YY,
    U_X,
    U_Y,
    FieldBatch,
    LossBreakdown,
    local_loss_terms,
    pointwise_loss,
    work_balance_loss,
)
from .material import MaterialField
from .pinn import PinnModel
from .sampling import CollocationSet

# Outputs compared across an interface, per orientation
_INTERFACE_OUTPUTS = {
    "horizontal": (U_X, S_XX, S_XY),
    "vertical": (U_Y, S_YY, S_XY),
}


@dataclass(frozen=True)
class Interface:
    """Shared segment of two boxes.

    Orientation names the direction the neighbours are lined up in, not the
    direction of the segment: `horizontal` neighbours sit side by side and
    share a vertical segment on x = const, where u_x, sigma_xx and sigma_xy
    must match. `vertical` neighbours are stacked and share a segment on
    y = const, matching u_y, sigma_yy and sigma_xy. Read literally, a
    "horizontal boundary" would be the y = const case, so the labels are
    swapped against that reading while the compared outputs stay those
    the traction continuity across each segment calls for.
    """

    first: int
    second: int
    orientation: Orientation
    start: tuple[float, float]
    end: tuple[float, float]

    def on_segment(self, points: torch.Tensor, tol: float = 1e-12) -> torch.Tensor:
        p = torch.as_tensor(points, dtype=DTYPE)
        if self.orientation == "horizontal":
            on_line = (p[:, 0] - self.start[0]).abs() <= tol
            along = (p[:, 1] >= self.start[1] - tol) & (p[:, 1] <= self.end[1] + tol)
        else:
            on_line = (p[:, 1] - self.start[1]).abs() <= tol
            along = (p[:, 0] >= self.start[0] - tol) & (p[:, 0] <= self.end[0] + tol)
        return on_line & along


@dataclass(frozen=True)
class Decomposition:
    """Row-major tiling of the square: box index = iy * n_x + ix."""

    length: float
    n_x: int
    n_y: int
    boxes: tuple[Box, ...]
    interfaces: tuple[Interface, ...]

    @property
    def domain(self) -> Box:
        return Box.square(self.length)

    @property
    def n_boxes(self) -> int:
        return len(self.boxes)

    def owner(self, points) -> torch.Tensor:
        """Index of the owning box per point; shared edges go to the lower index."""
        p = as_points(points)
        if not bool(self.domain.contains(p, DOMAIN_TOLERANCE).all()):
            raise DomainError("Point outside the unit cell")
        p = p.clamp(-self.length / 2.0, self.length / 2.0)
        owners = torch.full((p.shape[0],), -1, dtype=torch.long)
        for index, box in enumerate(self.boxes):
            free = (owners < 0) & box.contains(p, 1e-12)
            owners[free] = index
        return owners


def decompose(length: float, n_x: int, n_y: int) -> Decomposition:
    if n_x < 1 or n_y < 1:
        raise ValueError(f"Split must be at least 1x1, got {n_x}x{n_y}")
    h = length / 2.0
    xs = [-h + i * length / n_x for i in range(n_x + 1)]
    ys = [-h + j * length / n_y for j in range(n_y + 1)]
    boxes = tuple(Box(xs[ix], xs[ix + 1], ys[iy], ys[iy + 1]) for iy in range(n_y) for ix in range(n_x))

    interfaces = []
    for iy in range(n_y):
        for ix in range(n_x - 1):
            index = iy * n_x + ix
            interfaces.append(
                Interface(index, index + 1, "horizontal", (xs[ix + 1], ys[iy]), (xs[ix + 1], ys[iy + 1]))
            )
    for iy in range(n_y - 1):
        for ix in range(n_x):
            index = iy * n_x + ix
            interfaces.append(
                Interface(index, index + n_x, "vertical", (xs[ix], ys[iy + 1]), (xs[ix + 1], ys[iy + 1]))
            )
    logger.debug(f"[CPINN] {n_x}x{n_y} split: {len(boxes)} boxes, {len(interfaces)} interfaces")
    return Decomposition(length, n_x, n_y, boxes, tuple(interfaces))


def interface_points(interface: Interface, n: int) -> torch.Tensor:
    """n uniformly spaced points on the segment, endpoints excluded."""
    t = torch.arange(1, n + 1, dtype=DTYPE) / (n + 1)
    start = torch.tensor(interface.start, dtype=DTYPE)
    end = torch.tensor(interface.end, dtype=DTYPE)
    return start + t.unsqueeze(-1) * (end - start)


class CpinnModel:
    """One PinnModel per box, sharing the boundary value problem."""

    def __init__(
        self,
        topology: Topology,
        bvp: BvpSpec,
        decomposition: Decomposition,
        psi: float = 20.0,
        interface_full: bool = False,
        quadrature: WorkQuadrature = "printed",
    ):
        if psi < 0.0:
            raise ValueError("psi must be non-negative")
        if abs(decomposition.length - bvp.length) > 1e-12:
            raise ValueError("Decomposition and boundary value problem disagree on the cell size")
        self.topology = topology
        self.bvp = bvp
        self.decomposition = decomposition
        self.psi = psi
        self.interface_full = interface_full
        self.quadrature = quadrature
        self.subnets = [
            PinnModel(topology, bvp, box, subdomain_rules(bvp.rules, box, bvp.domain), quadrature)
            for box in decomposition.boxes
        ]
        self.sizes = [net.n_params for net in self.subnets]

    @property
    def n_params(self) -> int:
        return sum(self.sizes)

    @property
    def scales(self):
        return self.bvp.scales

    def split(self, params: torch.Tensor) -> list[torch.Tensor]:
        if params.numel() != self.n_params:
            raise ValueError(f"Expected {self.n_params} parameters, got {params.numel()}")
        return list(torch.split(params, self.sizes))

    def interface_outputs(self, orientation: Orientation) -> tuple[int, ...]:
        if self.interface_full:
            return (U_X, U_Y) + _INTERFACE_OUTPUTS[orientation][1:]
        return _INTERFACE_OUTPUTS[orientation]


def interface_loss(
    model: CpinnModel, params: torch.Tensor, points: list[torch.Tensor], psi: float | None = None
) -> torch.Tensor:
    """psi times the mean squared jump of the compared outputs, summed over interfaces.

    Jumps are measured in scaled units (u / u_c, sigma / sigma_c).
    """
    decomposition = model.decomposition
    if len(points) != len(decomposition.interfaces):
        raise InterfaceError(f"Got {len(points)} point sets for {len(decomposition.interfaces)} interfaces")
    psi = model.psi if psi is None else psi
    subparams = model.split(params)
    total = torch.zeros((), dtype=DTYPE)

    for interface, x in zip(decomposition.interfaces, points):
        if len(x) == 0:
            continue
        if not bool(interface.on_segment(x).all()):
            raise InterfaceError(f"Point off the interface between boxes {interface.first} and {interface.second}")
        first = model.subnets[interface.first].fields(subparams[interface.first], x)
        second = model.subnets[interface.second].fields(subparams[interface.second], x)
        jump = (first.values - second.values) / model.subnets[0].output_scale
        for output in model.interface_outputs(interface.orientation):
            total = total + (jump[:, output] ** 2).mean()

    return psi * total


def partition(decomposition: Decomposition, collocation: CollocationSet) -> list[CollocationSet]:
    """Split interior and loaded-edge points by box ownership."""
    interior_owner = decomposition.owner(collocation.interior)
    boundary_owner = (
        decomposition.owner(collocation.boundary)
        if collocation.n_boundary
        else torch.empty(0, dtype=torch.long)
    )
    return [
        CollocationSet(
            collocation.interior[interior_owner == index],
            collocation.boundary[boundary_owner == index],
            collocation.provenance,
        )
        for index in range(decomposition.n_boxes)
    ]


@dataclass
class CpinnLoss:
    """Per-box local terms, the global work term and the interface penalty."""

    subnets: list[LossBreakdown] = field(default_factory=list)
    l_work: torch.Tensor | None = None
    l_interface: torch.Tensor | None = None

    @property
    def total(self) -> torch.Tensor:
        local = sum((part.local for part in self.subnets), torch.zeros((), dtype=DTYPE))
        return local + self.l_work + self.l_interface

    def as_dict(self) -> dict[str, float]:
        result = {}
        for key in ("l_div_x", "l_div_y", "l_const_xx", "l_const_yy", "l_const_xy"):
            result[key] = float(sum(float(getattr(part, key).detach()) for part in self.subnets))
        result["l_work"] = float(self.l_work.detach())
        result["l_interface"] = float(self.l_interface.detach())
        result["total"] = float(self.total.detach())
        return result


def cpinn_total_loss(
    params: torch.Tensor,
    model: CpinnModel,
    parts: list[CollocationSet],
    interfaces: list[torch.Tensor],
    material_values: list[tuple[torch.Tensor, torch.Tensor]],
) -> CpinnLoss:
    """Sum of per-box local losses plus one global work balance and the interface penalty."""
    subparams = model.split(params)
    loss = CpinnLoss()
    interiors, boundaries = [], []
    for net, theta, part, (lam, mu) in zip(model.subnets, subparams, parts, material_values):
        if part.n_interior == 0:
            continue
        interior = net.fields(theta, part.interior)
        terms = local_loss_terms(interior, lam, mu, model.scales)
        zero = torch.zeros((), dtype=DTYPE)
        loss.subnets.append(LossBreakdown(terms[0], terms[1], terms[2], terms[3], terms[4], zero))
        interiors.append(interior)
        if part.n_boundary:
            boundaries.append(net.fields(theta, part.boundary))

    if not boundaries:
        raise DomainError("No subdomain holds loaded-edge points")
    loss.l_work = work_balance_loss(
        FieldBatch.concat(interiors), FieldBatch.concat(boundaries), model.bvp.length, model.scales, model.quadrature
    )
    loss.l_interface = interface_loss(model, params, interfaces)
    return loss


def default_interface_points(decomposition: Decomposition, n_per_side: int) -> list[torch.Tensor]:
    """Interface points with the per-box grid density."""
    return [interface_points(interface, n_per_side) for interface in decomposition.interfaces]


@dataclass
class InterfaceDefect:
    """Mean displacement jump across all interfaces and its ratio to max |u|."""

    mean_jump: float
    max_displacement: float

    @property
    def ratio(self) -> float:
        return self.mean_jump / self.max_displacement if self.max_displacement > 0.0 else 0.0


class CpinnSolver:
    """Joint BFGS training of all subnets over one concatenated parameter vector."""

    def __init__(
        self,
        model: CpinnModel,
        material: MaterialField,
        seed: int = 0,
        params: torch.Tensor | None = None,
        interface_density: int | None = None,
    ):
        self.model = model
        self.material = material
        if params is None:
            params = torch.cat([init_params(model.topology, seed + index) for index in range(len(model.subnets))])
        self.params = params.detach().clone()
        if self.params.numel() != model.n_params:
            raise ValueError(f"Expected {model.n_params} parameters, got {self.params.numel()}")
        self.interface_density = interface_density
        self.history = OptHistory()

    def _interfaces(self, collocation: CollocationSet) -> list[torch.Tensor]:
        n = self.interface_density
        if n is None:
            # Per-box grid side count of an equivalent regular grid
            per_box = max(collocation.n_interior // self.model.decomposition.n_boxes, 4)
            n = max(int(per_box**0.5), 2)
        return default_interface_points(self.model.decomposition, n)

    def _problem(self, collocation: CollocationSet):
        parts = partition(self.model.decomposition, collocation)
        values = [self.material.query(part.interior) for part in parts]
        return parts, self._interfaces(collocation), values

    def objective(self, collocation: CollocationSet) -> Objective:
        parts, interfaces, values = self._problem(collocation)
        model = self.model

        def loss(theta):
            return cpinn_total_loss(theta, model, parts, interfaces, values).total

        return Objective(loss, check_at=self.params, name="cpinn")

    def train(self, collocation: CollocationSet, opts: BfgsOptions | None = None) -> OptHistory:
        decomposition = self.model.decomposition
        logger.info(
            f"[CPINN] Training {decomposition.n_x}x{decomposition.n_y} subnets, "
            f"{self.model.n_params} params, psi {self.model.psi}"
        )
        self.params, history = minimize(self.objective(collocation), self.params, opts)
        self.history.extend(history)
        return history

    def loss_breakdown(self, collocation: CollocationSet) -> CpinnLoss:
        parts, interfaces, values = self._problem(collocation)
        with torch.no_grad():
            return cpinn_total_loss(self.params, self.model, parts, interfaces, values)

    def pointwise_loss(self, points) -> torch.Tensor:
        fields = self.predict(points)
        lam, mu = self.material.query(points)
        return pointwise_loss(fields, lam, mu, self.model.scales)

    def predict(self, x) -> FieldBatch:
        return predict_union(self.model, self.params, x)

    def interface_defect(self, n: int = 64) -> InterfaceDefect:
        return interface_defect(self.model, self.params, n)


def predict_union(model: CpinnModel, params: torch.Tensor, x) -> FieldBatch:
    """Evaluate every point with the subnet of the box that owns it."""
    points = as_points(x)
    owners = model.decomposition.owner(points)
    subparams = model.split(params)
    values = torch.zeros((points.shape[0], 5), dtype=DTYPE)
    grads = torch.zeros((points.shape[0], 5, 2), dtype=DTYPE)
    with torch.no_grad():
        for index, (net, theta) in enumerate(zip(model.subnets, subparams)):
            mask = owners == index
            if not bool(mask.any()):
                continue
            fields = net.fields(theta, points[mask])
            values[mask] = fields.values
            grads[mask] = fields.grads
    return FieldBatch(points, values, grads)


def interface_defect(model: CpinnModel, params: torch.Tensor, n: int = 64) -> InterfaceDefect:
    """Mean |u^I - u^II| over interface points, against the largest |u| seen there."""
    decomposition = model.decomposition
    if not decomposition.interfaces:
        return InterfaceDefect(0.0, 0.0)
    subparams = model.split(params)
    jumps, magnitudes = [], []
    with torch.no_grad():
        for interface in decomposition.interfaces:
            x = interface_points(interface, n)
            first = model.subnets[interface.first].fields(subparams[interface.first], x).values[:, :2]
            second = model.subnets[interface.second].fields(subparams[interface.second], x).values[:, :2]
            jumps.append(torch.linalg.vector_norm(first - second, dim=1))
            magnitudes.append(torch.linalg.vector_norm(torch.cat([first, second]), dim=1))
    mean_jump = float(torch.cat(jumps).mean())
    max_displacement = float(torch.cat(magnitudes).max())
    logger.info(f"[CPINN] Interface defect {mean_jump:.3e} (max |u| {max_displacement:.3e})")
    return InterfaceDefect(mean_jump, max_displacement)
