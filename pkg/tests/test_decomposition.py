from dataclasses import replace

import pytest
import torch

from services.boundary import BvpSpec
from services.decomposition import (
    CpinnModel,
    CpinnSolver,
    cpinn_total_loss,
    decompose,
    interface_defect,
    interface_loss,
    interface_points,
    partition,
    predict_union,
)
from services.elasticity import S_XX, S_XY, S_YY, U_X, U_Y
from services.pinn import PinnModel, PinnSolver, total_loss
from services.sampling import regular_grid
from shared.netcore import DTYPE, Topology, init_params
from shared.optimizer import BfgsOptions
from utils.exceptions import DomainError, InterfaceError

from .helpers import (
    LENGTH,
    SIGMA_BAR,
    affine_params,
    assert_directional_derivatives,
    constant_params,
    constant_topology,
    exact_uniaxial_params,
    free_rules,
    inclusion_bvp,
)

FREE_BVP = BvpSpec(LENGTH, SIGMA_BAR, free_rules())


def free_model(n_x, n_y, psi=1.0, interface_full=False, decomposition=None):
    decomposition = decomposition or decompose(LENGTH, n_x, n_y)
    return CpinnModel(constant_topology(), FREE_BVP, decomposition, psi, interface_full)


def stacked(*outputs):
    return torch.cat([constant_params(o) for o in outputs])


class TestDecompose:
    def test_single_box(self):
        decomposition = decompose(LENGTH, 1, 1)
        assert decomposition.n_boxes == 1
        assert decomposition.interfaces == ()

    def test_interface_count(self):
        assert len(decompose(LENGTH, 4, 4).interfaces) == 24
        assert len(decompose(LENGTH, 3, 2).interfaces) == 2 * 2 + 3

    def test_boxes_tile_the_square(self):
        decomposition = decompose(LENGTH, 3, 2)
        area = sum(box.width * box.height for box in decomposition.boxes)
        assert area == pytest.approx(LENGTH**2)
        assert decomposition.boxes[0].x0 == -1.0 and decomposition.boxes[-1].y1 == 1.0

    def test_row_major_indexing(self):
        decomposition = decompose(LENGTH, 2, 2)
        assert decomposition.boxes[1].center == (0.5, -0.5)
        assert decomposition.boxes[2].center == (-0.5, 0.5)

    def test_rejects_empty_split(self):
        with pytest.raises(ValueError):
            decompose(LENGTH, 0, 1)


class TestOwnership:
    def test_box_centres(self):
        decomposition = decompose(LENGTH, 2, 2)
        centres = torch.tensor([box.center for box in decomposition.boxes], dtype=DTYPE)
        assert decomposition.owner(centres).tolist() == [0, 1, 2, 3]

    def test_shared_edges_go_to_the_lower_index(self):
        decomposition = decompose(LENGTH, 2, 2)
        points = torch.tensor([[0.0, -0.5], [-0.5, 0.0], [0.0, 0.0], [0.5, 0.0]], dtype=DTYPE)
        assert decomposition.owner(points).tolist() == [0, 0, 0, 1]

    def test_every_grid_point_is_owned(self):
        decomposition = decompose(LENGTH, 3, 3)
        assert bool((decomposition.owner(regular_grid(17, LENGTH).interior) >= 0).all())

    def test_outside(self):
        with pytest.raises(DomainError):
            decompose(LENGTH, 2, 2).owner(torch.tensor([[1.5, 0.0]], dtype=DTYPE))

    def test_partition_keeps_every_point(self):
        collocation = regular_grid(9, LENGTH)
        parts = partition(decompose(LENGTH, 2, 3), collocation)
        assert sum(part.n_interior for part in parts) == collocation.n_interior
        assert sum(part.n_boundary for part in parts) == collocation.n_boundary


def test_interface_points_exclude_endpoints():
    interface = decompose(LENGTH, 2, 1).interfaces[0]
    points = interface_points(interface, 3)
    assert points.tolist() == [[0.0, -0.5], [0.0, 0.0], [0.0, 0.5]]
    assert bool(interface.on_segment(points).all())


class TestInterfaceLoss:
    def test_identical_subnets(self):
        model = free_model(2, 2, psi=20.0)
        outputs = [0.3, -0.2, 1.0, 0.5, 0.1]
        points = [interface_points(i, 5) for i in model.decomposition.interfaces]
        assert interface_loss(model, stacked(*[outputs] * 4), points).item() == 0.0

    @pytest.mark.parametrize("psi", [1.0, 20.0])
    def test_constant_jump(self, psi):
        model = free_model(2, 1, psi=psi)
        params = stacked([0.7, 0.0, 0.0, 0.0, 0.0], [0.0] * 5)
        points = [interface_points(model.decomposition.interfaces[0], 8)]
        assert interface_loss(model, params, points).item() == pytest.approx(psi * 0.49)

    def test_symmetric_in_the_pair(self):
        model = free_model(2, 1)
        interface = model.decomposition.interfaces[0]
        swapped = replace(model.decomposition, interfaces=(replace(interface, first=1, second=0),))
        params = stacked([0.7, 0.1, 0.2, 0.0, 0.4], [0.0, 0.3, 0.0, 0.0, 0.0])
        points = [interface_points(interface, 8)]
        forward = interface_loss(model, params, points)
        backward = interface_loss(free_model(2, 1, decomposition=swapped), params, points)
        assert forward.item() == pytest.approx(backward.item())
        assert forward.item() == pytest.approx(0.7**2 + 0.2**2 + 0.4**2)

    def test_vertical_interface_ignores_u_x_unless_full(self):
        params = stacked([0.5, 0.0, 0.0, 0.0, 0.0], [0.0] * 5)
        points = [interface_points(decompose(LENGTH, 1, 2).interfaces[0], 4)]
        assert interface_loss(free_model(1, 2), params, points).item() == 0.0
        assert interface_loss(free_model(1, 2, interface_full=True), params, points).item() == pytest.approx(0.25)

    def test_points_off_the_interface(self):
        model = free_model(2, 1)
        with pytest.raises(InterfaceError):
            interface_loss(model, stacked([0.0] * 5, [0.0] * 5), [torch.tensor([[0.5, 0.0]], dtype=DTYPE)])

    def test_point_set_count(self):
        with pytest.raises(InterfaceError):
            interface_loss(free_model(2, 1), stacked([0.0] * 5, [0.0] * 5), [])


def test_single_box_equals_plain_pinn(plate_bvp, plate_material):
    topology = Topology(2, 5, 2, 8, "swish")
    params = init_params(topology, 11)
    collocation = regular_grid(6, LENGTH)
    pinn = total_loss(params, PinnModel(topology, plate_bvp), collocation, plate_material)

    model = CpinnModel(topology, plate_bvp, decompose(LENGTH, 1, 1))
    parts = partition(model.decomposition, collocation)
    cpinn = cpinn_total_loss(params, model, parts, [], [plate_material.query(part.interior) for part in parts])
    assert cpinn.total.item() == pytest.approx(pinn.total.item(), rel=1e-12)
    assert cpinn.l_interface.item() == 0.0


def test_single_box_solver_starts_like_pinn(plate_bvp, plate_material):
    topology = Topology(2, 5, 2, 8)
    cpinn = CpinnSolver(CpinnModel(topology, plate_bvp, decompose(LENGTH, 1, 1)), plate_material, seed=4)
    pinn = PinnSolver(PinnModel(topology, plate_bvp), plate_material, seed=4)
    assert torch.equal(cpinn.params, pinn.params)


def test_exact_subnets_have_zero_loss(plate_bvp, plate_material, plate_strains):
    topology = Topology(2, 5, 1, 2, "identity")
    model = CpinnModel(topology, plate_bvp, decompose(LENGTH, 2, 2), psi=20.0)
    params = torch.cat([exact_uniaxial_params(net, *plate_strains, SIGMA_BAR) for net in model.subnets])
    collocation = regular_grid(8, LENGTH)
    parts = partition(model.decomposition, collocation)
    interfaces = [interface_points(i, 4) for i in model.decomposition.interfaces]
    loss = cpinn_total_loss(params, model, parts, interfaces, [plate_material.query(p.interior) for p in parts])
    assert loss.total.item() <= 1e-20


def test_predict_union_uses_the_owning_subnet():
    model = free_model(2, 2)
    params = stacked(*[[float(i), 0.0, 0.0, 0.0, 0.0] for i in range(4)])
    points = torch.tensor([[-0.5, -0.5], [0.5, -0.5], [-0.5, 0.5], [0.5, 0.5], [0.0, 0.0]], dtype=DTYPE)
    assert predict_union(model, params, points).u_x.tolist() == [0.0, 1.0, 2.0, 3.0, 0.0]


def test_interface_defect():
    model = free_model(2, 2)
    same = stacked(*[[1.0, 0.0, 0.0, 0.0, 0.0]] * 4)
    assert interface_defect(model, same, 8).mean_jump == 0.0
    shifted = stacked([1.0, 0.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0, 0.0], [0.0] * 5, [0.0] * 5)
    defect = interface_defect(model, shifted, 8)
    # the two vertical interfaces jump by 1, the horizontal ones do not
    assert defect.mean_jump == pytest.approx(0.5)
    assert defect.ratio == pytest.approx(0.5)


def test_affine_helper_is_affine():
    params = affine_params([[1.0, 2.0]] + [[0.0, 0.0]] * 4, [3.0, 0.0, 0.0, 0.0, 0.0])
    model = CpinnModel(Topology(2, 5, 1, 2, "identity"), FREE_BVP, decompose(LENGTH, 1, 1))
    fields = model.subnets[0].fields(params, torch.tensor([[0.5, 0.25]], dtype=DTYPE))
    assert fields.u_x.item() == pytest.approx(0.5 + 0.5 + 3.0)


def test_training_never_increases_the_loss(plate_bvp, plate_material):
    model = CpinnModel(Topology(2, 5, 2, 6, "tanh"), plate_bvp, decompose(LENGTH, 2, 2))
    solver = CpinnSolver(model, plate_material, seed=0)
    history = solver.train(regular_grid(8, LENGTH), BfgsOptions(max_iters=5))
    losses = history.losses()
    assert all(later <= earlier for earlier, later in zip(losses, losses[1:]))
    assert solver.loss_breakdown(regular_grid(8, LENGTH)).total.item() == pytest.approx(losses[-1], rel=1e-10)


def test_negative_psi():
    with pytest.raises(ValueError):
        free_model(2, 1, psi=-1.0)


def test_cpinn_objective_gradient_on_inclusion():
    material, bvp = inclusion_bvp()
    model = CpinnModel(Topology(2, 5, 2, 8, "swish"), bvp, decompose(LENGTH, 2, 2), 20.0)
    solver = CpinnSolver(model, material, seed=3)
    assert_directional_derivatives(solver.objective(regular_grid(5, LENGTH)), solver.params)


def test_side_by_side_neighbours_share_an_x_const_segment():
    [interface] = decompose(LENGTH, 2, 1).interfaces
    assert interface.orientation == "horizontal"
    assert interface.start == (0.0, -1.0) and interface.end == (0.0, 1.0)
    assert free_model(2, 1).interface_outputs("horizontal") == (U_X, S_XX, S_XY)
    [stacked_interface] = decompose(LENGTH, 1, 2).interfaces
    assert stacked_interface.orientation == "vertical"
    assert stacked_interface.start == (-1.0, 0.0) and stacked_interface.end == (1.0, 0.0)
    assert free_model(1, 2).interface_outputs("vertical") == (U_Y, S_YY, S_XY)
