"""Convergence and domain-split studies: one training run per configured row."""

from loguru import logger

from services.evaluation import StudyResult, StudyRow
from utils.config import ExperimentConfig, StudyConfig
from utils.constants import DEFAULT_ADAPTIVE, DEFAULT_STUDY

from .experiment import MaterialSetup, build_material, run_solve

# Split used by the decomposed methods of the convergence study
CPINN_SPLIT = 2


def _study_section(config: ExperimentConfig) -> StudyConfig:
    if config.study is not None:
        return config.study
    return StudyConfig.model_validate(DEFAULT_STUDY)


def _variant(config: ExperimentConfig, study: StudyConfig, method: str, n_per_side: int, split: int) -> ExperimentConfig:
    """Copy of `config` set up for one study row at a fixed parameter budget."""
    adaptive = method.startswith("Ada")
    sampling = config.sampling.model_dump()
    sampling["n_per_side"] = n_per_side
    sampling["mode"] = "adaptive" if adaptive else "regular"
    if adaptive and sampling["adaptive"] is None:
        sampling["adaptive"] = dict(DEFAULT_ADAPTIVE)

    data = config.model_dump()
    data["sampling"] = sampling
    data["split"] = {**data["split"], "n_x": split, "n_y": split}
    data["topology"] = {**data["topology"], "param_budget": study.param_budget}
    return ExperimentConfig.model_validate(data)


def _run_row(
    config: ExperimentConfig, setup: MaterialSetup, method: str, n_per_side: int, split: int, study: StudyConfig
) -> StudyRow:
    row = StudyRow(method=method, n_points=n_per_side**2, split=split, seed=config.seed)
    try:
        result = run_solve(_variant(config, study, method, n_per_side, split), setup)
    except Exception as e:
        logger.exception(f"[Study] {method} with {n_per_side}^2 points, split {split} failed")
        row.status = "failed"
        row.error = str(e)
        return row
    row.mean_r = result.report.mean_r
    row.iterations = result.solver.history.iterations
    row.n_params = result.solver.model.n_params
    logger.info(f"[Study] {method} n_d={row.n_points} split={split}: mean R {row.mean_r:.6e}")
    return row


def convergence_study(config: ExperimentConfig) -> StudyResult:
    """Mean R per (method, point budget) at a fixed parameter budget."""
    study = _study_section(config)
    setup = build_material(config)
    result = StudyResult("convergence")
    for method in study.methods:
        split = CPINN_SPLIT if method.endswith("CPINN") else 1
        for n_per_side in study.budgets:
            result.rows.append(_run_row(config, setup, method, n_per_side, split, study))
    logger.info(f"[Study] Convergence study finished, {len(result.failures)} of {len(result.rows)} runs failed")
    return result


def split_study(config: ExperimentConfig) -> StudyResult:
    """Mean R per N x N split at a fixed parameter budget and point count."""
    study = _study_section(config)
    setup = build_material(config)
    result = StudyResult("split")
    n_per_side = config.sampling.n_per_side
    for split in study.splits:
        method = "PINN" if split == 1 else "CPINN"
        result.rows.append(_run_row(config, setup, method, n_per_side, split, study))
    logger.info(f"[Study] Split study finished, {len(result.failures)} of {len(result.rows)} runs failed")
    return result
