"""Dense feed-forward networks with exact input Jacobians and parameter gradients.

Parameters live in one flat float64 vector. Layers are stored one after the
other; each layer is a ``(fan_out, fan_in + 1)`` row-major block whose last
column is the absorbed bias (the weight of a constant-1 input).
"""

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import torch
from loguru import logger

from utils.exceptions import NonFiniteError, TopologyError, UnsupportedLossError
from utils.types import Activation

DTYPE = torch.float64

ACTIVATIONS = ("swish", "sigmoid", "tanh", "identity")


@dataclass(frozen=True)
class Topology:
    """Sizes and activation of a dense network; the output layer is always linear."""

    input_dim: int = 2
    output_dim: int = 5
    n_layers: int = 4
    units_per_layer: int = 64
    activation: Activation = "swish"
    beta: float = 1.0

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise TopologyError("input_dim and output_dim must be at least 1")
        if self.n_layers < 1:
            raise TopologyError(f"n_layers must be at least 1, got {self.n_layers}")
        if self.units_per_layer < 1:
            raise TopologyError(
                f"units_per_layer must be at least 1, got {self.units_per_layer}"
            )
        if self.activation not in ACTIVATIONS:
            raise TopologyError(f"Unknown activation '{self.activation}'")
        if not math.isfinite(self.beta):
            raise TopologyError("beta must be finite")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *[self.units_per_layer] * self.n_layers, self.output_dim]
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_shapes)

    @classmethod
    def for_budget(
        cls,
        budget: int,
        n_layers: int = 4,
        input_dim: int = 2,
        output_dim: int = 5,
        activation: Activation = "swish",
        beta: float = 1.0,
    ) -> "Topology":
        """Pick units_per_layer so the parameter count lands closest to `budget`."""
        # n_params = (L-1) u^2 + (in + 1 + L - 1 + out) u + out
        a = n_layers - 1
        b = input_dim + n_layers + output_dim
        c = output_dim - budget
        if a == 0:
            guess = -c / b
        else:
            guess = (-b + math.sqrt(max(b * b - 4 * a * c, 0.0))) / (2 * a)

        candidates = {max(1, math.floor(guess)), max(1, math.ceil(guess))}
        best = min(
            (
                cls(input_dim, output_dim, n_layers, units, activation, beta)
                for units in sorted(candidates)
            ),
            key=lambda t: abs(t.n_params - budget),
        )
        logger.debug(
            f"[Netcore] Budget {budget} -> {best.units_per_layer} units, {best.n_params} params"
        )
        return best


@dataclass(frozen=True)
class JacobianSample:
    """Network outputs and their input derivatives at a batch of points."""

    x: torch.Tensor  # (N, input_dim)
    y: torch.Tensor  # (N, output_dim)
    dy_dx: torch.Tensor  # (N, output_dim, input_dim)


def as_points(x, input_dim: int = 2) -> torch.Tensor:
    points = torch.as_tensor(x, dtype=DTYPE)
    if points.ndim == 1:
        points = points.reshape(1, -1)
    if points.ndim != 2 or points.shape[1] != input_dim:
        raise ValueError(f"Expected points of shape (N, {input_dim}), got {tuple(points.shape)}")
    if not torch.isfinite(points).all():
        raise NonFiniteError(0, "input")
    return points


def unflatten(params: torch.Tensor, topology: Topology) -> list[tuple[torch.Tensor, torch.Tensor]]:
    """Split a flat parameter vector into (weight, bias) views per layer."""
    if params.ndim != 1 or params.numel() != topology.n_params:
        raise TopologyError(
            f"Parameter vector has {params.numel()} entries, topology needs {topology.n_params}"
        )
    layers = []
    offset = 0
    for fan_in, fan_out in topology.layer_shapes:
        size = (fan_in + 1) * fan_out
        block = params[offset : offset + size].view(fan_out, fan_in + 1)
        layers.append((block[:, :fan_in], block[:, fan_in]))
        offset += size
    return layers


def flatten(layers: Sequence[tuple[torch.Tensor, torch.Tensor]]) -> torch.Tensor:
    """Inverse of `unflatten`."""
    blocks = [
        torch.cat([torch.as_tensor(w, dtype=DTYPE), torch.as_tensor(b, dtype=DTYPE).reshape(-1, 1)], dim=1).reshape(-1)
        for w, b in layers
    ]
    return torch.cat(blocks)


def init_params(topology: Topology, seed: int) -> torch.Tensor:
    """Glorot-uniform weights and zero biases, deterministic for a seed."""
    generator = torch.Generator().manual_seed(seed)
    layers = []
    for fan_in, fan_out in topology.layer_shapes:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weight = (torch.rand(fan_out, fan_in, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * limit
        layers.append((weight, torch.zeros(fan_out, dtype=DTYPE)))
    return flatten(layers)


def activation_pair(
    name: Activation, beta: float
) -> tuple[Callable[[torch.Tensor], torch.Tensor], Callable[[torch.Tensor], torch.Tensor]]:
    """Activation and its derivative, both written out so autograd can go through them."""
    if name == "swish":

        def phi(z):
            return z * torch.sigmoid(beta * z)

        def dphi(z):
            s = torch.sigmoid(beta * z)
            return s + beta * z * s * (1.0 - s)

    elif name == "sigmoid":

        def phi(z):
            return torch.sigmoid(beta * z)

        def dphi(z):
            s = torch.sigmoid(beta * z)
            return beta * s * (1.0 - s)

    elif name == "tanh":

        def phi(z):
            return torch.tanh(z)

        def dphi(z):
            return 1.0 - torch.tanh(z) ** 2

    elif name == "identity":

        def phi(z):
            return z

        def dphi(z):
            return torch.ones_like(z)

    else:
        raise TopologyError(f"Unknown activation '{name}'")
    return phi, dphi


def _check_finite(value: torch.Tensor, layer: int) -> None:
    if not torch.isfinite(value).all():
        raise NonFiniteError(layer)


def forward(params: torch.Tensor, topology: Topology, x) -> torch.Tensor:
    """Evaluate the network at one point (shape (2,)) or a batch (shape (N, 2))."""
    single = torch.as_tensor(x).ndim == 1
    h = as_points(x, topology.input_dim)
    phi, _ = activation_pair(topology.activation, topology.beta)
    layers = unflatten(params, topology)

    for index, (weight, bias) in enumerate(layers):
        z = h @ weight.T + bias
        h = z if index == len(layers) - 1 else phi(z)
        _check_finite(h, index)

    return h[0] if single else h


def forward_with_jacobian(params: torch.Tensor, topology: Topology, x) -> JacobianSample:
    """Outputs plus exact dy/dx by propagating one tangent per input direction."""
    h = as_points(x, topology.input_dim)
    points = h
    phi, dphi = activation_pair(topology.activation, topology.beta)
    layers = unflatten(params, topology)

    # tangent[n, unit, d] = d h_unit / d x_d
    tangent = torch.eye(topology.input_dim, dtype=DTYPE).expand(h.shape[0], -1, -1)
    for index, (weight, bias) in enumerate(layers):
        z = h @ weight.T + bias
        dz = torch.einsum("oi,nid->nod", weight, tangent)
        if index == len(layers) - 1:
            h, tangent = z, dz
        else:
            h = phi(z)
            tangent = dphi(z).unsqueeze(-1) * dz
        _check_finite(h, index)
        _check_finite(tangent, index)

    return JacobianSample(x=points, y=h, dy_dx=tangent)


def loss_gradient(
    loss: Callable[[torch.Tensor], torch.Tensor], params: torch.Tensor
) -> tuple[float, torch.Tensor]:
    """Value and exact parameter gradient of a scalar loss built from network evaluations.

    `loss` receives a parameter tensor that tracks gradients and must return a
    0-dim float64 tensor computed from it with torch operations.
    """
    theta = torch.as_tensor(params, dtype=DTYPE).detach().clone().requires_grad_(True)
    with torch.enable_grad():
        value = loss(theta)

    if not isinstance(value, torch.Tensor):
        raise UnsupportedLossError(f"Loss returned {type(value).__name__}, expected a torch tensor")
    if value.numel() != 1:
        raise UnsupportedLossError(f"Loss must be scalar, got shape {tuple(value.shape)}")
    if value.dtype != DTYPE:
        raise UnsupportedLossError(f"Loss must be float64, got {value.dtype}")
    if value.grad_fn is None:
        raise UnsupportedLossError("Loss is not connected to the parameters by differentiable operations")

    (grad,) = torch.autograd.grad(value.reshape(()), theta, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(theta)
    return float(value.detach()), grad.detach()


class Objective:
    """A scalar loss of the parameters, checked once on construction.

    The last evaluation is cached so the optimizer's first call after the
    construction check is free.
    """

    def __init__(
        self,
        loss: Callable[[torch.Tensor], torch.Tensor],
        check_at: torch.Tensor | None = None,
        name: str = "loss",
    ):
        self.loss = loss
        self.name = name
        self.evaluations = 0
        self._cache: tuple[torch.Tensor, float, torch.Tensor] | None = None
        if check_at is not None:
            value, _ = self(check_at)
            logger.debug(f"[Netcore] Objective '{name}' constructed, initial value {value:.6e}")

    def __call__(self, params: torch.Tensor) -> tuple[float, torch.Tensor]:
        if self._cache is not None and torch.equal(self._cache[0], params):
            return self._cache[1], self._cache[2].clone()
        value, grad = loss_gradient(self.loss, params)
        self.evaluations += 1
        self._cache = (params.detach().clone(), value, grad)
        return value, grad.clone()
