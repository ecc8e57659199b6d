"""Full-memory BFGS with a strong-Wolfe line search.

The inverse Hessian is a dense float64 matrix updated in place; for the
network sizes used here (a few 10^4 parameters at most) this is affordable.
"""

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import torch
from loguru import logger

from utils.constants import CURVATURE_EPS, WOLFE_C1, WOLFE_C2
from utils.exceptions import NonFiniteError
from utils.functions import dense_matrix_fits
from utils.types import Termination

ObjectiveFn = Callable[[torch.Tensor], tuple[float, torch.Tensor]]


@dataclass(frozen=True)
class BfgsOptions:
    """Termination and line-search settings for `minimize`."""

    max_iters: int = 500
    grad_tol: float = 1e-9
    step_tol: float = 1e-12
    wolfe_c1: float = WOLFE_C1
    wolfe_c2: float = WOLFE_C2
    clip_alpha: float | None = None
    max_line_search: int = 40

    def __post_init__(self):
        if not 0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0:
            raise ValueError("Wolfe constants must satisfy 0 < c1 < c2 < 1")
        if self.grad_tol <= 0.0 or self.step_tol <= 0.0:
            raise ValueError("Tolerances must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.clip_alpha is not None and self.clip_alpha <= 0.0:
            raise ValueError("clip_alpha must be positive")


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    grad_norm: float
    step_length: float


@dataclass
class OptHistory:
    """Per-iteration trace of one `minimize` call."""

    records: list[IterationRecord] = field(default_factory=list)
    termination_reason: Termination | None = None

    @property
    def iterations(self) -> int:
        return max(len(self.records) - 1, 0)

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else math.nan

    def losses(self) -> list[float]:
        return [record.loss for record in self.records]

    def extend(self, other: "OptHistory") -> None:
        """Append another run's records, renumbering iterations."""
        offset = self.records[-1].iteration + 1 if self.records else 0
        for record in other.records:
            self.records.append(
                IterationRecord(offset + record.iteration, record.loss, record.grad_norm, record.step_length)
            )
        self.termination_reason = other.termination_reason


def clip(grad: torch.Tensor, alpha: float) -> torch.Tensor:
    """Rescale `grad` to norm `alpha` if its norm exceeds it."""
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    norm = torch.linalg.vector_norm(grad)
    if norm > alpha:
        return grad * (alpha / norm)
    return grad


def _evaluate(objective: ObjectiveFn, params: torch.Tensor) -> tuple[float, torch.Tensor | None]:
    try:
        value, grad = objective(params)
    except NonFiniteError as e:
        logger.debug(f"[BFGS] Objective hit a non-finite value: {e}")
        return math.inf, None
    if not math.isfinite(value) or not torch.isfinite(grad).all():
        return math.inf, None
    return value, grad


def _cubic_min(a, fa, da, b, fb, db) -> float | None:
    """Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db)."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    radicand = d1 * d1 - da * db
    if radicand < 0.0:
        return None
    d2 = math.copysign(math.sqrt(radicand), b - a)
    denominator = db - da + 2.0 * d2
    if denominator == 0.0:
        return None
    return b - (b - a) * (db + d2 - d1) / denominator


def _line_search(objective, x, f0, g0, direction, alpha0, opts: BfgsOptions):
    """Strong-Wolfe bracketing and zoom; returns (alpha, f, g) or None."""
    dphi0 = float(g0 @ direction)
    c1, c2 = opts.wolfe_c1, opts.wolfe_c2
    evaluations = 0

    def phi(alpha):
        nonlocal evaluations
        evaluations += 1
        value, grad = _evaluate(objective, x + alpha * direction)
        slope = float(grad @ direction) if grad is not None else math.nan
        return value, grad, slope

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        while evaluations < opts.max_line_search:
            trial = None
            if math.isfinite(f_hi) and math.isfinite(d_hi):
                trial = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            low, high = min(lo, hi), max(lo, hi)
            margin = 0.1 * (high - low)
            if trial is None or not (low + margin <= trial <= high - margin):
                trial = 0.5 * (lo + hi)
            f_t, g_t, d_t = phi(trial)
            if not math.isfinite(f_t) or f_t > f0 + c1 * trial * dphi0 or f_t >= f_lo:
                hi, f_hi, d_hi = trial, f_t, d_t
            else:
                if abs(d_t) <= -c2 * dphi0:
                    return trial, f_t, g_t
                if d_t * (hi - lo) >= 0.0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = trial, f_t, d_t
            if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
                break
        return None

    prev_alpha, prev_f, prev_d = 0.0, f0, dphi0
    alpha = alpha0
    first = True
    while evaluations < opts.max_line_search:
        f_a, g_a, d_a = phi(alpha)
        if not math.isfinite(f_a):
            # Overshot into a non-finite region, retreat towards the last good point
            alpha = prev_alpha + 0.25 * (alpha - prev_alpha)
            continue
        if f_a > f0 + c1 * alpha * dphi0 or (not first and f_a >= prev_f):
            return zoom(prev_alpha, prev_f, prev_d, alpha, f_a, d_a)
        if abs(d_a) <= -c2 * dphi0:
            return alpha, f_a, g_a
        if d_a >= 0.0:
            return zoom(alpha, f_a, d_a, prev_alpha, prev_f, prev_d)
        prev_alpha, prev_f, prev_d = alpha, f_a, d_a
        alpha *= 2.0
        first = False
    return None


def minimize(
    objective: ObjectiveFn,
    params0: torch.Tensor,
    opts: BfgsOptions | None = None,
    callback: Callable[[int, torch.Tensor, float], None] | None = None,
) -> tuple[torch.Tensor, OptHistory]:
    """Minimize `objective` (params -> (loss, grad)) starting from `params0`."""
    opts = opts or BfgsOptions()
    x = torch.as_tensor(params0, dtype=torch.float64).detach().clone()
    n = x.numel()
    history = OptHistory()

    f, g = _evaluate(objective, x)
    if g is None:
        logger.error("[BFGS] Non-finite loss at the starting point")
        history.termination_reason = "line_search_fail"
        return x, history

    grad_norm = float(torch.linalg.vector_norm(g, ord=math.inf))
    history.records.append(IterationRecord(0, f, grad_norm, 0.0))
    if grad_norm <= opts.grad_tol:
        history.termination_reason = "grad_tol"
        logger.info(f"[BFGS] Converged at the starting point, loss {f:.6e}")
        return x, history

    if not dense_matrix_fits(n, copies=2):
        logger.warning(f"[BFGS] Dense inverse Hessian of size {n}x{n} may not fit into memory")
    h_inv = torch.eye(n, dtype=torch.float64)
    scaled = False
    reason: Termination = "max_iters"

    for k in range(1, opts.max_iters + 1):
        search_grad = clip(g, opts.clip_alpha) if opts.clip_alpha is not None else g
        direction = -(h_inv @ search_grad)
        if float(g @ direction) >= 0.0:
            # Lost descent, restart from the scaled identity
            logger.debug(f"[BFGS] Resetting inverse Hessian at iteration {k}")
            h_inv = torch.eye(n, dtype=torch.float64)
            scaled = False
            direction = -search_grad

        alpha0 = 1.0 if scaled else min(1.0, 1.0 / max(float(torch.linalg.vector_norm(search_grad)), 1e-300))
        result = _line_search(objective, x, f, g, direction, alpha0, opts)
        if result is None:
            reason = "line_search_fail"
            break

        alpha, f_new, g_new = result
        step = alpha * direction
        x = x + step
        y = g_new - g
        f_old, f, g = f, f_new, g_new

        grad_norm = float(torch.linalg.vector_norm(g, ord=math.inf))
        step_norm = float(torch.linalg.vector_norm(step, ord=math.inf))
        history.records.append(IterationRecord(k, f, grad_norm, alpha))
        logger.debug(f"[BFGS] iter {k}: loss {f:.6e}, |g| {grad_norm:.3e}, step {alpha:.3e}")
        if callback is not None:
            callback(k, x, f)

        if grad_norm <= opts.grad_tol:
            reason = "grad_tol"
            break
        if step_norm <= opts.step_tol * max(1.0, float(torch.linalg.vector_norm(x, ord=math.inf))) or (
            abs(f_old - f) <= opts.step_tol * max(abs(f_old), abs(f))
        ):
            reason = "step_tol"
            break

        sy = float(step @ y)
        if sy <= CURVATURE_EPS * float(torch.linalg.vector_norm(step)) * float(torch.linalg.vector_norm(y)):
            logger.debug(f"[BFGS] Skipping update at iteration {k}, curvature {sy:.3e}")
            continue
        if not scaled:
            h_inv.mul_(sy / float(y @ y))
            scaled = True

        rho = 1.0 / sy
        hy = h_inv @ y
        yhy = float(y @ hy)
        h_inv.addr_(step, hy, alpha=-rho)
        h_inv.addr_(hy, step, alpha=-rho)
        h_inv.addr_(step, step, alpha=rho * rho * yhy + rho)

    history.termination_reason = reason
    logger.info(
        f"[BFGS] Terminated after {history.iterations} iterations ({reason}), loss {f:.6e}, |g|inf {grad_norm:.3e}"
    )
    return x, history
