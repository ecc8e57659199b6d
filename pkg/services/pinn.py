"""Single-network PINN: input/output scaling, hard BCs and the training driver."""

import torch
from loguru import logger

from shared.netcore import DTYPE, JacobianSample, Objective, Topology, as_points, forward_with_jacobian, init_params
from shared.optimizer import BfgsOptions, OptHistory, minimize
from utils.types import WorkQuadrature

from .boundary import Box, BvpSpec, compose
from .elasticity import FieldBatch, LossBreakdown, ScaleSet, assemble_loss, pointwise_loss
from .material import MaterialField


class PinnModel:
    """Network topology plus everything needed to turn raw outputs into physical fields.

    Inputs are normalized as (x - centre) / input_scale, outputs are
    dimensionless and multiplied by u_c or sigma_c before the hard BCs apply.
    """

    def __init__(
        self,
        topology: Topology,
        bvp: BvpSpec,
        box: Box | None = None,
        rules=None,
        quadrature: WorkQuadrature = "printed",
    ):
        if topology.input_dim != 2 or topology.output_dim != 5:
            raise ValueError("A PINN needs 2 inputs and 5 outputs")
        self.topology = topology
        self.bvp = bvp
        self.box = box or bvp.domain
        self.rules = tuple(rules) if rules is not None else bvp.rules
        self.quadrature = quadrature

        scales = bvp.scales
        self.center = torch.tensor(self.box.center, dtype=DTYPE)
        self.input_scale = scales.x_c * self.box.width / bvp.length
        self.output_scale = torch.tensor(
            [scales.u_c, scales.u_c, scales.sigma_c, scales.sigma_c, scales.sigma_c], dtype=DTYPE
        )

    @property
    def scales(self) -> ScaleSet:
        return self.bvp.scales

    @property
    def n_params(self) -> int:
        return self.topology.n_params

    def raw(self, params: torch.Tensor, x) -> JacobianSample:
        """Unconstrained physical outputs N~ and their derivatives w.r.t. physical x."""
        points = as_points(x)
        sample = forward_with_jacobian(params, self.topology, (points - self.center) / self.input_scale)
        y = sample.y * self.output_scale
        dy_dx = sample.dy_dx * self.output_scale.unsqueeze(-1) / self.input_scale
        return JacobianSample(points, y, dy_dx)

    def fields(self, params: torch.Tensor, x) -> FieldBatch:
        return compose(self.raw(params, x), self.rules)


def total_loss(
    params: torch.Tensor,
    model: PinnModel,
    collocation,
    material: MaterialField,
    scales: ScaleSet | None = None,
) -> LossBreakdown:
    """All six loss terms of a PINN on one collocation set."""
    scales = scales or model.scales
    lam, mu = material.query(collocation.interior)
    interior = model.fields(params, collocation.interior)
    boundary = model.fields(params, collocation.boundary)
    return assemble_loss(interior, boundary, lam, mu, scales, model.bvp.length, model.quadrature)


class PinnSolver:
    """Owns the parameters of one PINN and trains them with BFGS."""

    def __init__(self, model: PinnModel, material: MaterialField, seed: int = 0, params: torch.Tensor | None = None):
        self.model = model
        self.material = material
        self.params = params.detach().clone() if params is not None else init_params(model.topology, seed)
        if self.params.numel() != model.n_params:
            raise ValueError(f"Expected {model.n_params} parameters, got {self.params.numel()}")
        self.history = OptHistory()

    def objective(self, collocation) -> Objective:
        lam, mu = self.material.query(collocation.interior)
        model = self.model

        def loss(theta):
            interior = model.fields(theta, collocation.interior)
            boundary = model.fields(theta, collocation.boundary)
            return assemble_loss(
                interior, boundary, lam, mu, model.scales, model.bvp.length, model.quadrature
            ).total

        return Objective(loss, check_at=self.params, name="pinn")

    def train(self, collocation, opts: BfgsOptions | None = None) -> OptHistory:
        logger.info(
            f"[Elasticity] Training PINN with {self.model.n_params} params on "
            f"{len(collocation.interior)} interior / {len(collocation.boundary)} edge points"
        )
        self.params, history = minimize(self.objective(collocation), self.params, opts)
        self.history.extend(history)
        return history

    def loss_breakdown(self, collocation) -> LossBreakdown:
        with torch.no_grad():
            return total_loss(self.params, self.model, collocation, self.material)

    def pointwise_loss(self, points) -> torch.Tensor:
        """Per-point local loss (no work term), used to score adaptive candidates."""
        lam, mu = self.material.query(points)
        with torch.no_grad():
            return pointwise_loss(self.model.fields(self.params, points), lam, mu, self.model.scales)

    def predict(self, x) -> FieldBatch:
        with torch.no_grad():
            return self.model.fields(self.params, x)
