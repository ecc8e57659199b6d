import numpy as np
import pytest
import torch

from services.material import (
    ConstantMaterial,
    EngineeringConstants,
    NetworkMaterial,
    PhaseValues,
    TanhInclusionMaterial,
    TanhProfile,
    VoxelGrid,
    bounded_output,
    classification_accuracy,
    lame_from_engineering,
    tanh_inclusion,
    tanh_inclusion_gradient,
    train_material_network,
)
from shared.netcore import DTYPE, Topology, init_params
from utils.exceptions import DomainError, MaterialError

PHASES = PhaseValues(
    matrix=lame_from_engineering(EngineeringConstants(1.5e3, 0.4)),
    inclusion=lame_from_engineering(EngineeringConstants(1.0e4, 0.4)),
)


class TestLame:
    def test_plate_values(self):
        lam, mu = lame_from_engineering(EngineeringConstants(1.0e4, 0.4))
        assert lam == pytest.approx(14285.714285714286)
        assert mu == pytest.approx(3571.4285714285716)

    def test_zero_poisson(self):
        lam, mu = lame_from_engineering(EngineeringConstants(2.0, 0.0))
        assert lam == 0.0
        assert mu == 1.0

    @pytest.mark.parametrize("E, nu", [(1.0, 0.5), (1.0, 0.6), (1.0, -1.0), (0.0, 0.3)])
    def test_rejects_unphysical(self, E, nu):
        with pytest.raises(MaterialError):
            EngineeringConstants(E, nu)


class TestTanhInclusion:
    def test_value_on_the_radius(self):
        profile = TanhProfile(c1=2.0, c2=0.5, c3=1.0, delta=0.02)
        x = torch.tensor([[0.4, 0.0], [0.0, -0.4]], dtype=DTYPE)
        torch.testing.assert_close(tanh_inclusion(x, profile), torch.full((2,), 2.0, dtype=DTYPE))

    def test_calibration(self):
        profile = TanhProfile.calibrate(10.0, 2.0, 0.02)
        centre = tanh_inclusion(torch.zeros(1, 2, dtype=DTYPE), profile)
        far = tanh_inclusion(torch.tensor([[1.0, 1.0]], dtype=DTYPE), profile)
        assert centre.item() == pytest.approx(10.0, rel=1e-12)
        assert far.item() == pytest.approx(2.0, rel=1e-12)
        assert profile.minimum == pytest.approx(2.0)

    def test_gradient_matches_finite_differences(self):
        profile = TanhProfile(c1=3.0, c2=0.0, c3=4.0, delta=0.1)
        x = torch.rand(20, 2, generator=torch.Generator().manual_seed(1), dtype=DTYPE) * 2.0 - 1.0
        grad = tanh_inclusion_gradient(x, profile)
        eps = 1e-6
        for axis in range(2):
            shift = torch.zeros(2, dtype=DTYPE)
            shift[axis] = eps
            fd = (tanh_inclusion(x + shift, profile) - tanh_inclusion(x - shift, profile)) / (2 * eps)
            torch.testing.assert_close(grad[:, axis], fd, rtol=1e-6, atol=1e-8)

    def test_gradient_vanishes_at_the_centre(self):
        profile = TanhProfile(c1=3.0, c2=0.0, c3=4.0, delta=0.1)
        assert torch.equal(tanh_inclusion_gradient(torch.zeros(1, 2, dtype=DTYPE), profile), torch.zeros(1, 2, dtype=DTYPE))

    def test_decreases_outwards(self):
        profile = TanhProfile(c1=3.0, c2=0.0, c3=4.0, delta=0.1)
        r = torch.linspace(0.0, 1.0, 50, dtype=DTYPE)
        values = tanh_inclusion(torch.stack([r, torch.zeros_like(r)], dim=1), profile)
        assert bool((values[1:] <= values[:-1]).all())

    def test_rejects_non_positive_delta(self):
        with pytest.raises(MaterialError):
            TanhProfile(1.0, 0.0, 1.0, 0.0)


class TestMaterialFields:
    def test_constant_query(self):
        material = ConstantMaterial(2.0, 3.0, 2.0)
        lam, mu = material.query(torch.zeros(4, 2, dtype=DTYPE))
        assert lam.tolist() == [2.0] * 4
        assert mu.tolist() == [3.0] * 4

    def test_outside_the_cell(self):
        material = ConstantMaterial(2.0, 3.0, 2.0)
        with pytest.raises(DomainError):
            material.query(torch.tensor([[1.1, 0.0]], dtype=DTYPE))

    def test_edge_points_are_clamped(self):
        material = ConstantMaterial(2.0, 3.0, 2.0)
        lam, _ = material.query(torch.tensor([[1.0 + 1e-10, -1.0 - 1e-10]], dtype=DTYPE))
        assert lam.item() == 2.0

    def test_inclusion_from_phases(self):
        material = TanhInclusionMaterial.from_phases(PHASES, 0.02, 0.4, 2.0)
        lam, mu = material.query(torch.tensor([[0.0, 0.0], [0.95, 0.95]], dtype=DTYPE))
        assert lam[0].item() == pytest.approx(PHASES.inclusion[0])
        assert mu[1].item() == pytest.approx(PHASES.matrix[1])
        assert material.maxima == pytest.approx((PHASES.inclusion[0], PHASES.inclusion[1]))

    def test_network_output_is_bounded(self):
        topology = Topology(2, 2, 2, 8, "tanh")
        params = init_params(topology, 3) * 50.0
        material = NetworkMaterial(params, topology, PHASES, 2.0)
        x = torch.rand(200, 2, generator=torch.Generator().manual_seed(0), dtype=DTYPE) * 2.0 - 1.0
        lam, mu = material.query(x)
        for values, (low, high) in ((lam, PHASES.lambda_bounds), (mu, PHASES.mu_bounds)):
            assert values.min().item() >= low * (1.0 - 1e-12)
            assert values.max().item() <= high * (1.0 + 1e-12)

    def test_bounded_output_at_the_extremes(self):
        raw = torch.tensor([[-50.0, 50.0]], dtype=DTYPE)
        out = bounded_output(raw, PHASES)
        assert out[0, 0].item() == pytest.approx(PHASES.lambda_bounds[0])
        assert out[0, 1].item() == pytest.approx(PHASES.mu_bounds[1])


class TestVoxelGrid:
    def test_centres_put_the_top_row_first(self):
        grid = VoxelGrid(2, 2, np.zeros(4))
        np.testing.assert_allclose(grid.voxel_centers(2.0), [[-0.5, 0.5], [0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]])

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            VoxelGrid(2, 2, np.zeros(3))


def block_checkerboard(n=8, block=2):
    rows, cols = np.mgrid[0:n, 0:n]
    return VoxelGrid(n, n, ((rows // block + cols // block) % 2).astype(np.float64))


class TestMaterialNetwork:
    def test_uniform_grid(self):
        grid = VoxelGrid(4, 4, np.zeros(16))
        topology = Topology(2, 2, 2, 5, "tanh")
        material, history = train_material_network(grid, PHASES, topology, max_iters=150)
        lam, _ = material.query(grid.voxel_centers(2.0))
        span = PHASES.lambda_bounds[1] - PHASES.lambda_bounds[0]
        assert float((lam - PHASES.matrix[0]).abs().max()) <= 0.01 * span
        assert history.final_loss < history.records[0].loss

    def test_checkerboard_accuracy(self):
        grid = block_checkerboard()
        topology = Topology(2, 2, 3, 24, "tanh")
        material, _ = train_material_network(grid, PHASES, topology, max_iters=800, seed=1)
        assert classification_accuracy(material, grid) >= 0.95

    def test_rejects_grayscale(self):
        grid = VoxelGrid(2, 2, np.array([0.0, 0.5, 1.0, 1.0]))
        with pytest.raises(MaterialError):
            train_material_network(grid, PHASES, Topology(2, 2, 1, 3, "tanh"), max_iters=1)

    def test_accuracy_needs_a_network(self):
        with pytest.raises(MaterialError):
            classification_accuracy(ConstantMaterial(1.0, 1.0, 2.0), VoxelGrid(2, 2, np.zeros(4)))
