import numpy as np
import pytest
import torch

from services.boundary import BvpSpec, HardBcRule, uniaxial_plate_rules
from services.elasticity import ScaleSet
from services.material import EngineeringConstants, PhaseValues, TanhInclusionMaterial, lame_from_engineering
from services.pinn import PinnModel
from shared.netcore import DTYPE, Topology, flatten
from utils.constants import OUTPUT_NAMES

LENGTH = 2.0
SIGMA_BAR = 0.025
E_PLATE = 1.0e4
NU_PLATE = 0.4


def free_rules():
    """Every output unconstrained."""
    return tuple(HardBcRule(name) for name in OUTPUT_NAMES)


def constant_topology(output_dim: int = 5) -> Topology:
    return Topology(output_dim=output_dim, n_layers=1, units_per_layer=2, activation="identity")


def constant_params(outputs, topology: Topology | None = None) -> torch.Tensor:
    """Network with zero weights whose output is `outputs` everywhere."""
    topology = topology or constant_topology(len(outputs))
    layers = [
        (torch.zeros(fan_out, fan_in, dtype=DTYPE), torch.zeros(fan_out, dtype=DTYPE))
        for fan_in, fan_out in topology.layer_shapes
    ]
    layers[-1] = (layers[-1][0], torch.as_tensor(outputs, dtype=DTYPE))
    return flatten(layers)


def affine_params(weights, offsets) -> torch.Tensor:
    """Identity network out = W x_hat + c for the (n_layers=1, units=2) topology."""
    return flatten(
        [
            (torch.eye(2, dtype=DTYPE), torch.zeros(2, dtype=DTYPE)),
            (torch.as_tensor(weights, dtype=DTYPE), torch.as_tensor(offsets, dtype=DTYPE)),
        ]
    )


def exact_uniaxial_params(model: PinnModel, eps_xx: float, eps_yy: float, sigma_bar: float) -> torch.Tensor:
    """Affine parameters that make `model` reproduce the homogeneous uniaxial solution."""
    scales = model.scales
    h = model.bvp.length / 2.0
    cx, cy = model.box.center
    s = model.input_scale
    rules = {rule.output: rule for rule in model.rules}
    weights = np.zeros((5, 2))
    offsets = np.zeros(5)

    # u_x = eps_xx (x + h), u_y = eps_yy (y + h) with x = c + s x_hat
    for index, (name, eps, axis, center) in enumerate((("u_x", eps_xx, 0, cx), ("u_y", eps_yy, 1, cy))):
        if rules[name].constrained:
            offsets[index] = -eps / scales.u_c
        else:
            offsets[index] = eps * (center + h) / scales.u_c
            weights[index, axis] = eps * s / scales.u_c
    if not rules["sigma_xx"].constrained:
        offsets[2] = sigma_bar / scales.sigma_c
    return affine_params(weights, offsets)


def exact_constant_outputs(eps_xx: float, eps_yy: float, scales: ScaleSet) -> list[float]:
    """Constant-network outputs reproducing the uniaxial solution under the plate rules."""
    return [-eps_xx / scales.u_c, -eps_yy / scales.u_c, 0.0, 0.0, 0.0]


def inclusion_bvp():
    """Tanh inclusion (E 1e4 in a 1.5e3 matrix) with its default scales and the plate rules."""
    phases = PhaseValues(
        matrix=lame_from_engineering(EngineeringConstants(1.5e3, 0.4)),
        inclusion=lame_from_engineering(EngineeringConstants(E_PLATE, NU_PLATE)),
    )
    material = TanhInclusionMaterial.from_phases(phases, delta=0.02, radius=0.4, length=LENGTH)
    scales = ScaleSet.defaults(LENGTH, SIGMA_BAR, *material.maxima, 1.5e3)
    return material, BvpSpec(LENGTH, SIGMA_BAR, uniaxial_plate_rules(LENGTH, SIGMA_BAR), scales)


def assert_directional_derivatives(objective, params, n_directions=10, h=1e-6, rel=1e-5, seed=0):
    """grad . d of `objective` against central differences along random directions."""
    _, grad = objective(params)
    generator = torch.Generator().manual_seed(seed)
    for _ in range(n_directions):
        direction = torch.randn(params.shape, generator=generator, dtype=DTYPE)
        plus, _ = objective(params + h * direction)
        minus, _ = objective(params - h * direction)
        fd = (plus - minus) / (2 * h)
        assert float(grad @ direction) == pytest.approx(fd, rel=rel, abs=1e-8)
