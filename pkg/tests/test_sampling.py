import math
from itertools import combinations

import pytest
import torch

from services.boundary import Box
from services.sampling import (
    AdaptiveConfig,
    CollocationSet,
    adaptive_loop,
    combine,
    loaded_edge_points,
    regular_grid,
    select_adaptive,
    uniform_random,
)
from shared.netcore import DTYPE
from shared.optimizer import BfgsOptions, IterationRecord, OptHistory
from utils.exceptions import DomainError, OptimizerError, SelectionError


class TestRegularGrid:
    def test_two_per_side(self):
        collocation = regular_grid(2, 2.0)
        assert collocation.interior.tolist() == [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]
        assert collocation.boundary.tolist() == [[1.0, -1.0], [1.0, 1.0]]

    def test_spacing(self):
        collocation = regular_grid(128, 2.0)
        assert collocation.n_interior == 128 * 128
        xs = torch.unique(collocation.interior[:, 0])
        torch.testing.assert_close(xs[1:] - xs[:-1], torch.full((127,), 2.0 / 127, dtype=DTYPE))

    def test_odd_count_contains_the_centre(self):
        collocation = regular_grid(3, 2.0)
        assert [0.0, 0.0] in collocation.interior.tolist()

    def test_explicit_boundary_count(self):
        assert regular_grid(4, 2.0, n_boundary=7).n_boundary == 7

    def test_rejects_single_point(self):
        with pytest.raises(ValueError):
            regular_grid(1, 2.0)

    def test_points_stay_inside(self):
        regular_grid(16, 2.0).check_within(Box.square(2.0))


def test_loaded_edge_points_only_on_the_right():
    assert loaded_edge_points(2.0, 5, Box(-1.0, 0.0, -1.0, 1.0)).shape == (0, 2)
    points = loaded_edge_points(2.0, 3, Box(0.0, 1.0, 0.0, 1.0))
    assert points.tolist() == [[1.0, 0.0], [1.0, 0.5], [1.0, 1.0]]


def test_check_within_rejects_stray_points():
    stray = CollocationSet(torch.tensor([[1.5, 0.0]], dtype=DTYPE), torch.empty(0, 2, dtype=DTYPE))
    with pytest.raises(DomainError):
        stray.check_within(Box.square(2.0))


class TestUniformRandom:
    def test_deterministic_for_a_seed(self):
        assert torch.equal(uniform_random(100, 2.0, 3).interior, uniform_random(100, 2.0, 3).interior)
        assert not torch.equal(uniform_random(100, 2.0, 3).interior, uniform_random(100, 2.0, 4).interior)

    def test_bounds_and_mean(self):
        points = uniform_random(10_000, 2.0, 0).interior
        assert points.min() >= -1.0 and points.max() <= 1.0
        assert abs(points.mean().item()) < 0.05


class TestSelectAdaptive:
    def test_top_two(self):
        candidates = torch.tensor([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], dtype=DTYPE)
        selected = select_adaptive(candidates, torch.tensor([0.1, 0.9, 0.5, 0.2], dtype=DTYPE), 2)
        assert selected.tolist() == [[1.0, 0.0], [0.0, 1.0]]

    def test_ties_go_to_the_lower_index(self):
        candidates = torch.arange(10, dtype=DTYPE).reshape(5, 2)
        selected = select_adaptive(candidates, torch.ones(5, dtype=DTYPE), 3)
        assert selected.tolist() == candidates[:3].tolist()

    def test_matches_brute_force(self):
        generator = torch.Generator().manual_seed(2)
        candidates = torch.rand(12, 2, generator=generator, dtype=DTYPE)
        losses = torch.rand(12, generator=generator, dtype=DTYPE)
        selected = select_adaptive(candidates, losses, 4)
        best = max(combinations(range(12), 4), key=lambda subset: float(losses[list(subset)].sum()))
        assert sorted(selected.tolist()) == sorted(candidates[list(best)].tolist())

    def test_selected_dominate_the_rest(self):
        generator = torch.Generator().manual_seed(5)
        candidates = torch.rand(50, 2, generator=generator, dtype=DTYPE)
        losses = torch.rand(50, generator=generator, dtype=DTYPE)
        order = torch.argsort(losses, descending=True)
        selected = select_adaptive(candidates, losses, 10)
        assert torch.equal(selected, candidates[order[:10]])

    def test_too_many(self):
        with pytest.raises(SelectionError):
            select_adaptive(torch.zeros(3, 2, dtype=DTYPE), torch.zeros(3, dtype=DTYPE), 4)

    def test_non_finite_losses(self):
        with pytest.raises(SelectionError):
            select_adaptive(torch.zeros(3, 2, dtype=DTYPE), torch.tensor([0.0, math.nan, 1.0], dtype=DTYPE), 1)


def test_combine_keeps_duplicates():
    regular = regular_grid(3, 2.0)
    combined = combine(regular, regular.interior[:4])
    assert combined.n_interior == 13
    assert combined.provenance == "combined"
    assert torch.equal(combined.boundary, regular.boundary)


class TestAdaptiveConfig:
    def test_defaults(self):
        config = AdaptiveConfig()
        assert config.reg_side == 8
        assert config.gamma == pytest.approx(64 / 29)

    def test_for_budget(self):
        config = AdaptiveConfig.for_budget(16 * 16, gamma=2.2)
        assert config.reg_side == 13
        assert config.n_ada == round(169 / 2.2)
        assert config.gamma == pytest.approx(2.2, rel=0.02)
        assert config.n_rand == 256

    def test_split_budget_matches_for_budget(self):
        assert AdaptiveConfig.split_budget(8 * 8, 2.2) == (49, 22)
        assert AdaptiveConfig.split_budget(2 * 2, 2.2) == (4, 2)

    @pytest.mark.parametrize(
        "kwargs", [{"n_reg": 50}, {"n_ada": 0}, {"n_ada": 2000}, {"alpha": 0.0}, {"n_iter": -1}]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            AdaptiveConfig(**kwargs)


class RecordingSolver:
    """Trainable stand-in whose pointwise loss is the x coordinate."""

    def __init__(self, fail_on_cycle=None):
        self.history = OptHistory()
        self.calls = []
        self.fail_on_cycle = fail_on_cycle
        self.scored = 0

    def train(self, collocation, opts=None):
        self.calls.append((collocation.n_interior, opts.max_iters, opts.clip_alpha))
        history = OptHistory([IterationRecord(0, 1.0, 1.0, 0.0)], "max_iters")
        self.history.extend(history)
        return history

    def pointwise_loss(self, points):
        if self.scored == self.fail_on_cycle:
            raise RuntimeError("scoring failed")
        self.scored += 1
        return points[:, 0]


def test_adaptive_loop_schedule():
    solver = RecordingSolver()
    config = AdaptiveConfig(n_fine=2, n_iter=3, n_reg=16, n_rand=100, n_ada=5, alpha=0.5, fine_iters=7, cycle_iters=3)
    _, history = adaptive_loop(solver, regular_grid(6, 2.0), 2.0, config, BfgsOptions(max_iters=99))
    assert solver.calls[:2] == [(36, 7, None), (36, 7, None)]
    assert solver.calls[2:] == [(21, 3, 0.5)] * 3
    assert len(history.fine) == 2
    assert [record.cycle for record in history.cycles] == [0, 1, 2]
    for record in history.cycles:
        candidates = uniform_random(100, 2.0, record.cycle).interior
        assert record.selected[:, 0].min() >= torch.sort(candidates[:, 0], descending=True).values[4]


def test_adaptive_loop_without_cycles_only_pretrains():
    solver = RecordingSolver()
    config = AdaptiveConfig(n_fine=1, n_iter=0, n_reg=16, n_rand=100, n_ada=5)
    _, history = adaptive_loop(solver, regular_grid(4, 2.0), 2.0, config)
    assert len(solver.calls) == 1
    assert history.cycles == []


def test_adaptive_loop_reports_the_failing_cycle():
    solver = RecordingSolver(fail_on_cycle=1)
    config = AdaptiveConfig(n_fine=1, n_iter=3, n_reg=16, n_rand=100, n_ada=5)
    with pytest.raises(OptimizerError) as info:
        adaptive_loop(solver, regular_grid(4, 2.0), 2.0, config)
    assert info.value.cycle == 1


class TestBuildCollocation:
    def test_regular_grid_from_config(self):
        from modules.experiment import build_collocation
        from utils.config import parse_config

        collocation = build_collocation(parse_config({"problem": "homogeneous", "sampling": {"n_per_side": 4}}))
        assert len(collocation) == 16
        assert collocation.provenance == "regular"

    def test_stray_random_point_is_rejected(self, monkeypatch):
        import modules.experiment
        from utils.config import parse_config

        def stray(n, length, seed, n_boundary=None):
            return CollocationSet(torch.tensor([[0.0, 0.0], [1.5, 0.0]], dtype=DTYPE), loaded_edge_points(length, 2))

        monkeypatch.setattr(modules.experiment, "uniform_random", stray)
        config = parse_config({"problem": "homogeneous", "sampling": {"mode": "random", "n_per_side": 4}})
        with pytest.raises(DomainError):
            modules.experiment.build_collocation(config)
