"""Governing equations of 2D linear elasticity as point-wise residuals and losses.

Fields are handled in physical units (mm, MPa); `ScaleSet` divides each
residual by its characteristic magnitude before it enters a loss.
"""

from dataclasses import dataclass

import torch
from loguru import logger

from shared.netcore import DTYPE
from utils.exceptions import DomainError, MaterialError
from utils.types import WorkQuadrature

U_X, U_Y, S_XX, S_YY, S_XY = range(5)


@dataclass(frozen=True)
class ScaleSet:
    """Characteristic magnitudes of coordinates, stresses, displacements and Lame constants."""

    x_c: float = 1.0
    sigma_c: float = 1.0
    u_c: float = 1.0
    lambda_c: float = 1.0
    mu_c: float = 1.0

    def __post_init__(self):
        for name in ("x_c", "sigma_c", "u_c", "lambda_c", "mu_c"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"Scale {name} must be strictly positive")

    @classmethod
    def identity(cls) -> "ScaleSet":
        return cls()

    @classmethod
    def defaults(
        cls, length: float, sigma_bar: float, lambda_max: float, mu_max: float, e_min: float
    ) -> "ScaleSet":
        return cls(
            x_c=length / 2.0,
            sigma_c=abs(sigma_bar),
            u_c=abs(sigma_bar) * length / e_min,
            lambda_c=lambda_max,
            mu_c=mu_max,
        )

    @property
    def balance(self) -> float:
        return self.sigma_c / self.x_c

    @property
    def work(self) -> float:
        return self.sigma_c * self.u_c


@dataclass(frozen=True)
class FieldBatch:
    """(u_x, u_y, sigma_xx, sigma_yy, sigma_xy) and their x/y derivatives at N points."""

    x: torch.Tensor  # (N, 2)
    values: torch.Tensor  # (N, 5)
    grads: torch.Tensor  # (N, 5, 2)

    def __len__(self) -> int:
        return self.values.shape[0]

    def d(self, output: int, axis: int) -> torch.Tensor:
        return self.grads[:, output, axis]

    @property
    def u_x(self):
        return self.values[:, U_X]

    @property
    def u_y(self):
        return self.values[:, U_Y]

    @property
    def sigma_xx(self):
        return self.values[:, S_XX]

    @property
    def sigma_yy(self):
        return self.values[:, S_YY]

    @property
    def sigma_xy(self):
        return self.values[:, S_XY]

    @classmethod
    def concat(cls, batches: list["FieldBatch"]) -> "FieldBatch":
        return cls(
            torch.cat([b.x for b in batches]),
            torch.cat([b.values for b in batches]),
            torch.cat([b.grads for b in batches]),
        )


@dataclass
class LossBreakdown:
    """The six loss terms; `total` is their unweighted sum."""

    l_div_x: torch.Tensor
    l_div_y: torch.Tensor
    l_const_xx: torch.Tensor
    l_const_yy: torch.Tensor
    l_const_xy: torch.Tensor
    l_work: torch.Tensor

    @property
    def local(self) -> torch.Tensor:
        return self.l_div_x + self.l_div_y + self.l_const_xx + self.l_const_yy + self.l_const_xy

    @property
    def total(self) -> torch.Tensor:
        return self.local + self.l_work

    def as_dict(self) -> dict[str, float]:
        parts = {
            "l_div_x": self.l_div_x,
            "l_div_y": self.l_div_y,
            "l_const_xx": self.l_const_xx,
            "l_const_yy": self.l_const_yy,
            "l_const_xy": self.l_const_xy,
            "l_work": self.l_work,
        }
        result = {key: float(value.detach()) for key, value in parts.items()}
        result["total"] = float(self.total.detach())
        return result


def residual_balance(fields: FieldBatch) -> tuple[torch.Tensor, torch.Tensor]:
    """Linear momentum balance without body forces."""
    r_x = fields.d(S_XX, 0) + fields.d(S_XY, 1)
    r_y = fields.d(S_XY, 0) + fields.d(S_YY, 1)
    return r_x, r_y


def _check_material(lam, mu) -> None:
    lam = torch.as_tensor(lam, dtype=DTYPE)
    mu = torch.as_tensor(mu, dtype=DTYPE)
    if (lam < 0.0).any() or (mu <= 0.0).any():
        raise MaterialError("Lame constants must satisfy lambda >= 0 and mu > 0")


def strains(fields: FieldBatch) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(eps_xx, eps_yy, gamma_xy) with gamma_xy the engineering shear strain."""
    eps_xx = fields.d(U_X, 0)
    eps_yy = fields.d(U_Y, 1)
    gamma_xy = fields.d(U_X, 1) + fields.d(U_Y, 0)
    return eps_xx, eps_yy, gamma_xy


def residual_constitutive(
    fields: FieldBatch, lam, mu
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Isotropic Hooke's law in plane strain, minus the predicted stresses."""
    _check_material(lam, mu)
    eps_xx, eps_yy, gamma_xy = strains(fields)
    trace = eps_xx + eps_yy
    r_xx = lam * trace + 2.0 * mu * eps_xx - fields.sigma_xx
    r_yy = lam * trace + 2.0 * mu * eps_yy - fields.sigma_yy
    r_xy = mu * gamma_xy - fields.sigma_xy
    return r_xx, r_yy, r_xy


def internal_work_density(fields: FieldBatch) -> torch.Tensor:
    eps_xx, eps_yy, gamma_xy = strains(fields)
    return fields.sigma_xx * eps_xx + fields.sigma_yy * eps_yy + fields.sigma_xy * gamma_xy


def external_work_density(fields: FieldBatch) -> torch.Tensor:
    return fields.sigma_xx * fields.u_x + fields.sigma_xy * fields.u_y


def work_terms(
    interior: FieldBatch,
    boundary: FieldBatch,
    length: float,
    quadrature: WorkQuadrature = "printed",
) -> tuple[torch.Tensor, torch.Tensor]:
    """Internal and external work by the uniform collocation quadratures."""
    if len(interior) == 0 or len(boundary) == 0:
        raise DomainError("Work balance needs interior and loaded-edge points")
    w_int = (length**2 / (2.0 * len(interior))) * internal_work_density(interior).sum()
    edge_weight = 1.0 / len(boundary) if quadrature == "printed" else length / (2.0 * len(boundary))
    w_ext = edge_weight * external_work_density(boundary).sum()
    return w_int, w_ext


def work_balance_loss(
    interior: FieldBatch,
    boundary: FieldBatch,
    length: float,
    scales: ScaleSet | None = None,
    quadrature: WorkQuadrature = "printed",
) -> torch.Tensor:
    """Squared mismatch between internal and external work, scaled by sigma_c * u_c."""
    scales = scales or ScaleSet.identity()
    w_int, w_ext = work_terms(interior, boundary, length, quadrature)
    return ((w_int - w_ext) / scales.work) ** 2


def scaled_residuals(fields: FieldBatch, lam, mu, scales: ScaleSet) -> torch.Tensor:
    """(N, 5) residuals: two balance components then three constitutive ones, all scaled."""
    r_x, r_y = residual_balance(fields)
    r_xx, r_yy, r_xy = residual_constitutive(fields, lam, mu)
    return torch.stack(
        [
            r_x / scales.balance,
            r_y / scales.balance,
            r_xx / scales.sigma_c,
            r_yy / scales.sigma_c,
            r_xy / scales.sigma_c,
        ],
        dim=1,
    )


def pointwise_loss(fields: FieldBatch, lam, mu, scales: ScaleSet) -> torch.Tensor:
    """Per-point squared residual sum, the full loss without the global work term."""
    return (scaled_residuals(fields, lam, mu, scales) ** 2).sum(dim=1)


def local_loss_terms(fields: FieldBatch, lam, mu, scales: ScaleSet) -> torch.Tensor:
    """Mean squared scaled residuals, one entry per local loss term."""
    if len(fields) == 0:
        raise DomainError("Loss needs at least one collocation point")
    return (scaled_residuals(fields, lam, mu, scales) ** 2).mean(dim=0)


def assemble_loss(
    interior: FieldBatch,
    boundary: FieldBatch,
    lam,
    mu,
    scales: ScaleSet,
    length: float,
    quadrature: WorkQuadrature = "printed",
) -> LossBreakdown:
    """Full loss from already composed fields, equal weights on every term."""
    terms = local_loss_terms(interior, lam, mu, scales)
    l_work = work_balance_loss(interior, boundary, length, scales, quadrature)
    breakdown = LossBreakdown(terms[0], terms[1], terms[2], terms[3], terms[4], l_work)
    logger.trace(f"[Elasticity] Loss terms {breakdown.as_dict()}")
    return breakdown


def plane_strain_response(sigma_bar: float, lam: float, mu: float) -> tuple[float, float]:
    """Strains (eps_xx, eps_yy) of a plane-strain body under uniaxial stress sigma_bar."""
    # [lam + 2 mu, lam; lam, lam + 2 mu] [eps_xx; eps_yy] = [sigma_bar; 0]
    a = lam + 2.0 * mu
    determinant = a * a - lam * lam
    eps_xx = a * sigma_bar / determinant
    eps_yy = -lam * sigma_bar / determinant
    return eps_xx, eps_yy
