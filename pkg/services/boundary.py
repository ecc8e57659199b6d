"""Hard boundary conditions N = G + D * N~ for the five network outputs."""

from dataclasses import dataclass, field, replace

import torch
from loguru import logger

from shared.netcore import DTYPE, JacobianSample
from utils.constants import EDGE_NAMES, OUTPUT_NAMES
from utils.exceptions import BoundaryRuleError
from utils.types import Edge, OutputName, SigmaXyRule

from .elasticity import FieldBatch, ScaleSet

# Signed distance factor of each edge: (constant term sign, axis, coordinate sign)
# left: -h - x, right: h - x, bottom: -h - y, top: h - y
_EDGE_FACTORS = {
    "left": (-1.0, 0),
    "right": (1.0, 0),
    "bottom": (-1.0, 1),
    "top": (1.0, 1),
}


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]."""

    x0: float
    x1: float
    y0: float
    y1: float

    @classmethod
    def square(cls, length: float) -> "Box":
        h = length / 2.0
        return cls(-h, h, -h, h)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def edge_coordinate(self, edge: Edge) -> float:
        return {"left": self.x0, "right": self.x1, "bottom": self.y0, "top": self.y1}[edge]

    def contains(self, points, tol: float = 0.0) -> torch.Tensor:
        p = torch.as_tensor(points, dtype=DTYPE)
        return (
            (p[:, 0] >= self.x0 - tol)
            & (p[:, 0] <= self.x1 + tol)
            & (p[:, 1] >= self.y0 - tol)
            & (p[:, 1] <= self.y1 + tol)
        )

    def touches(self, edge: Edge, domain: "Box", tol: float = 1e-12) -> bool:
        return abs(self.edge_coordinate(edge) - domain.edge_coordinate(edge)) <= tol


@dataclass(frozen=True)
class HardBcRule:
    """G + D * N~ for one output.

    G is the constant boundary value, D = scale * prod of signed edge distances
    (each raised to its power). With no edges the output is unconstrained.
    """

    output: OutputName
    value: float = 0.0
    edges: tuple[tuple[Edge, int], ...] = ()
    half_length: float = 1.0
    scale: float = 1.0

    @property
    def constrained(self) -> bool:
        return bool(self.edges)

    def distance(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """D(x) and its gradient (N, 2), by the product rule over the edge factors."""
        n = x.shape[0]
        value = torch.full((n,), self.scale, dtype=DTYPE)
        grad = torch.zeros((n, 2), dtype=DTYPE)
        for edge, power in self.edges:
            sign, axis = _EDGE_FACTORS[edge]
            factor = sign * self.half_length - x[:, axis]
            f_pow = factor**power
            d_f_pow = power * factor ** (power - 1) * -1.0
            # (v * f)' = v' * f + v * f'
            grad = grad * f_pow.unsqueeze(-1)
            grad[:, axis] = grad[:, axis] + value * d_f_pow
            value = value * f_pow
        return value, grad


@dataclass(frozen=True)
class BvpSpec:
    """Unit-cell boundary value problem: size, load, hard-BC rules and scales."""

    length: float
    sigma_bar: float
    rules: tuple[HardBcRule, ...]
    scales: ScaleSet = field(default_factory=ScaleSet.identity)

    def __post_init__(self):
        if self.length <= 0.0:
            raise BoundaryRuleError("Domain length must be positive")
        audit_rules(self.rules)

    @property
    def domain(self) -> Box:
        return Box.square(self.length)


def audit_rules(rules) -> None:
    """Every output must carry exactly one rule."""
    names = [rule.output for rule in rules]
    for output in OUTPUT_NAMES:
        if names.count(output) != 1:
            raise BoundaryRuleError(f"Output {output} has {names.count(output)} rules, expected 1")
    if len(names) != len(OUTPUT_NAMES):
        raise BoundaryRuleError(f"Unknown outputs in rule set: {sorted(set(names) - set(OUTPUT_NAMES))}")


def ordered_rules(rules) -> list[HardBcRule]:
    by_name = {rule.output: rule for rule in rules}
    return [by_name[name] for name in OUTPUT_NAMES]


def uniaxial_plate_rules(
    length: float, sigma_bar: float, sigma_xy_rule: SigmaXyRule = "printed"
) -> tuple[HardBcRule, ...]:
    """Uniaxial tension: u_x pinned left, u_y pinned bottom, sigma_bar on the right, top free."""
    if length <= 0.0:
        raise BoundaryRuleError("Domain length must be positive")
    h = length / 2.0
    if sigma_xy_rule == "printed":
        shear_edges = (("right", 2), ("top", 2))
    elif sigma_xy_rule == "all_edges":
        shear_edges = (("left", 1), ("right", 1), ("bottom", 1), ("top", 1))
    else:
        raise BoundaryRuleError(f"Unknown sigma_xy rule '{sigma_xy_rule}'")

    return (
        HardBcRule("u_x", 0.0, (("left", 1),), h),
        HardBcRule("u_y", 0.0, (("bottom", 1),), h),
        HardBcRule("sigma_xx", sigma_bar, (("right", 1),), h),
        HardBcRule("sigma_yy", 0.0, (("top", 1),), h),
        HardBcRule("sigma_xy", 0.0, shear_edges, h),
    )


def subdomain_rules(rules, box: Box, domain: Box) -> tuple[HardBcRule, ...]:
    """Restrict rules to the outer-boundary edges a subdomain actually touches."""
    restricted = []
    for rule in ordered_rules(rules):
        kept = tuple((edge, power) for edge, power in rule.edges if box.touches(edge, domain))
        if kept:
            restricted.append(replace(rule, edges=kept))
        else:
            restricted.append(replace(rule, value=0.0, edges=(), scale=1.0))
    logger.trace(
        f"[Boundary] Box {box} keeps {[r.output for r in restricted if r.constrained]} constrained"
    )
    return tuple(restricted)


def compose(raw: JacobianSample, rules) -> FieldBatch:
    """Apply N = G + D * N~ to every output, derivatives by the product rule.

    `raw` must already be in physical units (values and d/dx in mm).
    """
    values = []
    grads = []
    for index, rule in enumerate(ordered_rules(rules)):
        n_tilde = raw.y[:, index]
        dn_tilde = raw.dy_dx[:, index, :]
        if not rule.constrained:
            values.append(rule.value + rule.scale * n_tilde)
            grads.append(rule.scale * dn_tilde)
            continue
        d_value, d_grad = rule.distance(raw.x)
        values.append(rule.value + d_value * n_tilde)
        grads.append(d_grad * n_tilde.unsqueeze(-1) + d_value.unsqueeze(-1) * dn_tilde)
    return FieldBatch(raw.x, torch.stack(values, dim=1), torch.stack(grads, dim=1))


def edge_points(domain: Box, edge: Edge, n: int) -> torch.Tensor:
    """n equally spaced points along one edge, corners included."""
    t = torch.linspace(0.0, 1.0, n, dtype=DTYPE)
    if edge in ("left", "right"):
        x = torch.full((n,), domain.edge_coordinate(edge), dtype=DTYPE)
        y = domain.y0 + t * domain.height
    else:
        x = domain.x0 + t * domain.width
        y = torch.full((n,), domain.edge_coordinate(edge), dtype=DTYPE)
    return torch.stack([x, y], dim=1)


# Boundary data of the uniaxial plate: per edge, (output index, prescribed value)
def uniaxial_boundary_data(sigma_bar: float) -> dict[str, list[tuple[int, float]]]:
    return {
        "left": [(0, 0.0), (4, 0.0)],
        "bottom": [(1, 0.0), (4, 0.0)],
        "right": [(2, sigma_bar), (4, 0.0)],
        "top": [(3, 0.0), (4, 0.0)],
    }


def soft_boundary_report(predict, domain: Box, sigma_bar: float, n: int = 64) -> dict[str, float]:
    """Mean squared violation of the boundary data per edge; a diagnostic, never optimized."""
    report = {}
    for edge in EDGE_NAMES:
        fields = predict(edge_points(domain, edge, n))
        total = 0.0
        for output, target in uniaxial_boundary_data(sigma_bar)[edge]:
            total += float(((fields.values[:, output] - target) ** 2).mean())
        report[edge] = total
    return report
