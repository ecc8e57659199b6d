"""Build materials, problems and solvers from a validated config and run one solve."""

import os
from dataclasses import dataclass, field, replace

from loguru import logger

from services.boundary import Box, BvpSpec, uniaxial_plate_rules
from services.decomposition import CpinnModel, CpinnSolver, decompose
from services.elasticity import ScaleSet
from services.evaluation import ResidualReport, residual_report
from services.material import (
    ConstantMaterial,
    EngineeringConstants,
    MaterialField,
    NetworkMaterial,
    PhaseValues,
    TanhInclusionMaterial,
    VoxelGrid,
    lame_from_engineering,
    train_material_network,
)
from services.pinn import PinnModel, PinnSolver
from services.sampling import AdaptiveConfig, AdaptiveHistory, CollocationSet, adaptive_loop, regular_grid, uniform_random
from shared.netcore import Topology
from shared.optimizer import BfgsOptions, OptHistory
from utils.config import ExperimentConfig, ImageConfig, TopologyConfig, dump_config
from utils.exceptions import ExportError
from utils.export import (
    FieldExport,
    Snapshot,
    export_fields,
    load_snapshot,
    save_snapshot,
    write_history_csv,
    write_points_csv,
    write_summary,
)
from utils.imaging import load_grayscale_pgm, prepare_microstructure, synthetic_fibers


@dataclass
class MaterialSetup:
    field: MaterialField
    phases: PhaseValues
    e_min: float
    grid: VoxelGrid | None = None
    history: OptHistory | None = None


@dataclass
class SolveResult:
    """Everything one `solve` produces."""

    method: str
    solver: PinnSolver | CpinnSolver
    report: ResidualReport
    collocation: CollocationSet
    adaptive: AdaptiveHistory | None = None
    setup: MaterialSetup | None = None
    summary: dict = field(default_factory=dict)


def lame(phase) -> tuple[float, float]:
    return lame_from_engineering(EngineeringConstants(phase.E, phase.nu))


def phase_values(config: ExperimentConfig) -> PhaseValues:
    return PhaseValues(matrix=lame(config.material.matrix), inclusion=lame(config.material.inclusion))


def build_topology(section: TopologyConfig, n_subnets: int = 1, output_dim: int = 5) -> Topology:
    """Explicit sizes, or a per-subnet share of the parameter budget."""
    if section.param_budget is not None:
        return Topology.for_budget(
            max(section.param_budget // n_subnets, 1),
            n_layers=section.n_layers,
            output_dim=output_dim,
            activation=section.activation,
            beta=section.beta,
        )
    return Topology(2, output_dim, section.n_layers, section.units_per_layer, section.activation, section.beta)


def load_microstructure(image: ImageConfig, seed: int) -> VoxelGrid:
    if image.path is not None:
        raw = load_grayscale_pgm(image.path)
    else:
        raw = synthetic_fibers(**image.synthetic.model_dump(), seed=seed)
    return prepare_microstructure(raw, image.sigma_px, image.threshold)


def build_material(config: ExperimentConfig) -> MaterialSetup:
    material = config.material
    if config.problem == "homogeneous":
        lam, mu = lame(material.constant)
        phases = PhaseValues(matrix=(lam, mu), inclusion=(lam, mu))
        return MaterialSetup(ConstantMaterial(lam, mu, config.length), phases, material.constant.E)

    phases = phase_values(config)
    e_min = min(material.matrix.E, material.inclusion.E)
    if config.problem == "single_inclusion":
        field_ = TanhInclusionMaterial.from_phases(phases, material.delta, material.radius, config.length)
        return MaterialSetup(field_, phases, e_min)

    image = material.image
    grid = load_microstructure(image, config.seed)
    network, history = train_material_network(
        grid,
        phases,
        build_topology(image.network, output_dim=2),
        max_iters=image.max_iters,
        length=config.length,
        seed=config.seed,
    )
    return MaterialSetup(network, phases, e_min, grid, history)


def build_scales(config: ExperimentConfig, setup: MaterialSetup) -> ScaleSet:
    lambda_max, mu_max = setup.field.maxima
    scales = ScaleSet.defaults(config.length, config.sigma_bar, lambda_max, mu_max, setup.e_min)
    if config.scales is not None:
        overrides = {key: value for key, value in config.scales.model_dump().items() if value is not None}
        scales = replace(scales, **overrides)
    logger.debug(f"[Main] Scales {scales}")
    return scales


def build_bvp(config: ExperimentConfig, scales: ScaleSet) -> BvpSpec:
    rules = uniaxial_plate_rules(config.length, config.sigma_bar, config.sigma_xy_rule)
    return BvpSpec(config.length, config.sigma_bar, rules, scales)


def build_options(config: ExperimentConfig) -> BfgsOptions:
    return BfgsOptions(**config.optimizer.model_dump())


def build_solver(config: ExperimentConfig, bvp: BvpSpec, material: MaterialField) -> PinnSolver | CpinnSolver:
    split = config.split
    n_subnets = split.n_x * split.n_y
    topology = build_topology(config.topology, n_subnets)
    if n_subnets == 1:
        return PinnSolver(PinnModel(topology, bvp, quadrature=config.work_quadrature), material, config.seed)
    model = CpinnModel(
        topology,
        bvp,
        decompose(config.length, split.n_x, split.n_y),
        split.psi,
        split.interface_full,
        config.work_quadrature,
    )
    return CpinnSolver(model, material, config.seed)


def build_collocation(config: ExperimentConfig) -> CollocationSet:
    sampling = config.sampling
    if sampling.mode == "random":
        collocation = uniform_random(sampling.n_per_side**2, config.length, config.seed, sampling.n_boundary)
    else:
        collocation = regular_grid(sampling.n_per_side, config.length, n_boundary=sampling.n_boundary)
    collocation.check_within(Box.square(config.length))
    return collocation


def build_adaptive(config: ExperimentConfig) -> AdaptiveConfig:
    section = config.sampling.adaptive
    return AdaptiveConfig.for_budget(
        config.sampling.n_per_side**2,
        section.gamma,
        section.n_rand,
        n_fine=section.n_fine,
        n_iter=section.n_iter,
        alpha=section.alpha,
        seed=config.seed,
        fine_iters=section.fine_iters,
        cycle_iters=section.cycle_iters,
    )


def method_name(config: ExperimentConfig) -> str:
    base = "PINN" if config.split.n_x * config.split.n_y == 1 else "CPINN"
    return f"Ada{base}" if config.sampling.mode == "adaptive" else base


def run_solve(config: ExperimentConfig, setup: MaterialSetup | None = None) -> SolveResult:
    """Train one model as configured and evaluate it on the fixed evaluation grid."""
    setup = setup or build_material(config)
    scales = build_scales(config, setup)
    bvp = build_bvp(config, scales)
    solver = build_solver(config, bvp, setup.field)
    collocation = build_collocation(config)
    method = method_name(config)
    opts = build_options(config)
    logger.info(f"[Main] {method} on '{config.problem}' with {solver.model.n_params} parameters")

    adaptive = None
    if config.sampling.mode == "adaptive":
        solver, adaptive = adaptive_loop(solver, collocation, config.length, build_adaptive(config), opts)
    else:
        solver.train(collocation, opts)

    report = residual_report(
        solver.predict,
        setup.field,
        config.evaluation.n_per_side,
        config.length,
        config.sigma_bar,
        scales,
        config.work_quadrature,
    )
    result = SolveResult(method, solver, report, collocation, adaptive, setup)
    result.summary = build_summary(config, result)
    return result


def build_summary(config: ExperimentConfig, result: SolveResult) -> dict:
    solver = result.solver
    history = solver.history
    summary = {
        "problem": config.problem,
        "method": result.method,
        "seed": config.seed,
        "n_params": solver.model.n_params,
        "topology": vars(solver.model.topology),
        "iterations": history.iterations,
        "termination": history.termination_reason,
        "final_loss": history.final_loss,
        "loss": solver.loss_breakdown(result.collocation).as_dict(),
        **result.report.summary(),
    }
    if isinstance(solver, CpinnSolver):
        defect = solver.interface_defect()
        summary["interface_defect"] = {
            "mean_jump": defect.mean_jump,
            "max_displacement": defect.max_displacement,
            "ratio": defect.ratio,
        }
    return summary


def write_outputs(config: ExperimentConfig, result: SolveResult, out_dir: str | None = None) -> str:
    """Summary, fields, history, collocation points, parameters and the config echo."""
    out_dir = out_dir or config.output_dir
    export_fields(FieldExport.from_report(result.report), os.path.join(out_dir, "fields"), config.format)
    write_history_csv(os.path.join(out_dir, "history.csv"), result.solver.history)
    write_points_csv(os.path.join(out_dir, "points.csv"), result.collocation.interior)

    model = result.solver.model
    n_x, n_y = (model.decomposition.n_x, model.decomposition.n_y) if isinstance(model, CpinnModel) else (1, 1)
    save_snapshot(
        os.path.join(out_dir, "params.bin"), Snapshot(model.topology, n_x, n_y, config.length, result.solver.params)
    )
    material = result.solver.material
    if isinstance(material, NetworkMaterial):
        save_snapshot(
            os.path.join(out_dir, "material.bin"), Snapshot(material.topology, 1, 1, config.length, material.params)
        )
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as file:
        file.write(dump_config(config) + "\n")
    summary_path = os.path.join(out_dir, "summary.json")
    write_summary(summary_path, result.summary)
    return summary_path


def restore_solver(config: ExperimentConfig, run_dir: str) -> tuple[PinnSolver | CpinnSolver, MaterialSetup]:
    """Rebuild a trained solver from the snapshots `write_outputs` left in `run_dir`."""
    material_path = os.path.join(run_dir, "material.bin")
    if config.problem == "voxel" and os.path.exists(material_path):
        stored = load_snapshot(material_path)
        phases = phase_values(config)
        network = NetworkMaterial(stored.params, stored.topology, phases, stored.length)
        setup = MaterialSetup(network, phases, min(config.material.matrix.E, config.material.inclusion.E))
    else:
        setup = build_material(config)

    snapshot = load_snapshot(os.path.join(run_dir, "params.bin"))
    if (snapshot.n_x, snapshot.n_y) != (config.split.n_x, config.split.n_y):
        raise ExportError(f"Snapshot split {snapshot.n_x}x{snapshot.n_y} does not match the config")
    bvp = build_bvp(config, build_scales(config, setup))
    if snapshot.n_x * snapshot.n_y == 1:
        model = PinnModel(snapshot.topology, bvp, quadrature=config.work_quadrature)
        return PinnSolver(model, setup.field, params=snapshot.params), setup
    split = config.split
    model = CpinnModel(
        snapshot.topology,
        bvp,
        decompose(config.length, split.n_x, split.n_y),
        split.psi,
        split.interface_full,
        config.work_quadrature,
    )
    return CpinnSolver(model, setup.field, params=snapshot.params), setup


def run_export(config: ExperimentConfig, run_dir: str, fmt: str | None = None) -> str:
    """Re-evaluate a stored run and write its fields in the requested format."""
    solver, setup = restore_solver(config, run_dir)
    report = residual_report(
        solver.predict,
        setup.field,
        config.evaluation.n_per_side,
        config.length,
        config.sigma_bar,
        solver.model.scales,
        config.work_quadrature,
    )
    return export_fields(FieldExport.from_report(report), os.path.join(run_dir, "fields"), fmt or config.format)
