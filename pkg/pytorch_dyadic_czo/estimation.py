import logging
import math
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch

from pytorch_dyadic_czo.base_operator import BaseDyadicOperator
from pytorch_dyadic_czo.base_operator import ZeroOperator
from pytorch_dyadic_czo.field import MatrixField
from pytorch_dyadic_czo.field import cond_expect
from pytorch_dyadic_czo.field import l2_norm
from pytorch_dyadic_czo.field import pairing
from pytorch_dyadic_czo.norms import bmo_mart_norm
from pytorch_dyadic_czo.norms import hardy_col_norm
from pytorch_dyadic_czo.norms import lp_norm
from pytorch_dyadic_czo.norms import operator_norms
from pytorch_dyadic_czo.operators import HaarMultiplier
from pytorch_dyadic_czo.operators import MartingaleTransform
from pytorch_dyadic_czo.operators import Paraproduct
from pytorch_dyadic_czo.samplers import embed_block
from pytorch_dyadic_czo.samplers import random_adapted_sequence
from pytorch_dyadic_czo.samplers import random_field
from pytorch_dyadic_czo.utils import DegenerateInput
from pytorch_dyadic_czo.utils import DimensionTooLarge
from pytorch_dyadic_czo.utils import torch_generator

from pytorch_dyadic_czo.utils import DENSE_DIMENSION_LIMIT
from pytorch_dyadic_czo.utils import DTYPE

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITER = 2000
QUANTILES = (0.5, 0.9, 0.99)


class NormReport(NamedTuple):
    norm: float
    method: str
    iterations: int
    residual: float
    seed: Optional[int]
    converged: bool


def _basis_field(T: BaseDyadicOperator, position: int) -> MatrixField:
    values = torch.zeros(T.dimension, dtype=DTYPE)
    values[position] = 1.0
    shape = (1 << T.level,) * T.dim + (T.size, T.size)
    return MatrixField(values.reshape(shape), T.dim, T.shift)


def materialize(T: BaseDyadicOperator) -> torch.Tensor:
    """Dense matrix of T on the flattened cell values.

    Returns:
        matrix: (N, N) complex, N = 2**(L*n) * d**2; column i is T applied to the i-th unit field
    """
    if T.dimension > DENSE_DIMENSION_LIMIT:
        raise DimensionTooLarge("dimension {} exceeds the dense limit {}".format(T.dimension, DENSE_DIMENSION_LIMIT))
    columns = [T(_basis_field(T, i)).values.reshape(-1) for i in range(T.dimension)]
    return torch.stack(columns, dim=1)


@torch.no_grad()
def _power_iteration(T: BaseDyadicOperator, tol: float, max_iter: int, seed: int) -> NormReport:
    generator = torch_generator(np.random.SeedSequence(seed))
    x = random_field(T.dim, T.level, T.size, generator, T.shift)
    x = x * (1.0 / l2_norm(x))
    adjoint = T.adjoint()
    estimate, residual = 0.0, math.inf
    for iteration in range(1, max_iter + 1):
        y = T(x)
        z = adjoint(y)
        rayleigh = l2_norm(y) ** 2
        estimate = math.sqrt(rayleigh)
        if rayleigh == 0.0:
            return NormReport(0.0, "power", iteration, 0.0, seed, True)
        residual = l2_norm(z - x * rayleigh) / rayleigh
        if residual <= tol:
            logger.info("power iteration converged at %d iterations, norm %.12g", iteration, estimate)
            return NormReport(estimate, "power", iteration, residual, seed, True)
        x = z * (1.0 / l2_norm(z))
    logger.info("power iteration stopped at max_iter=%d with residual %.3e", max_iter, residual)
    return NormReport(estimate, "power", max_iter, residual, seed, False)


def op_norm(T: BaseDyadicOperator,
            method: str = "power",
            tol: float = DEFAULT_TOLERANCE,
            max_iter: int = DEFAULT_MAX_ITER,
            seed: int = 0) -> NormReport:
    """‖T‖ on L₂ of the truncated matrix algebra.

    Parameters:
        method: "power" runs power iteration on T*T from a seeded random start and
            stops when ‖T*T x − ρx‖/ρ ≤ tol; "dense" takes the top singular value of
            ``materialize(T)``.
    Returns:
        NormReport; ``converged`` is False when power iteration hit ``max_iter``
    """
    if method == "dense":
        matrix = materialize(T)
        norm = float(torch.linalg.svdvals(matrix)[0]) if matrix.numel() else 0.0
        logger.info("dense norm %.12g at dimension %d", norm, T.dimension)
        return NormReport(norm, "dense", 0, 0.0, seed, True)
    if method != "power":
        raise ValueError("unknown method {!r}".format(method))
    return _power_iteration(T, tol, max_iter, seed)


def linearity_probe(T: BaseDyadicOperator, seed: int = 0, trials: int = 3) -> float:
    """max over random (α, f, g) of ‖T(αf + g) − αTf − Tg‖₂ / scale."""
    generator = torch_generator(np.random.SeedSequence(seed))
    worst = 0.0
    for _ in range(trials):
        f = random_field(T.dim, T.level, T.size, generator, T.shift)
        g = random_field(T.dim, T.level, T.size, generator, T.shift)
        alpha = complex(torch.randn((), dtype=DTYPE, generator=generator))
        image_f, image_g = T(f), T(g)
        defect = T(f * alpha + g) - image_f * alpha - image_g
        scale = max(1.0, abs(alpha) * l2_norm(image_f) + l2_norm(image_g))
        worst = max(worst, l2_norm(defect) / scale)
    return worst


class Trial(NamedTuple):
    """One draw of a ratio suite; the ratio is norm_out(Tf) / (constant · norm_in(f))."""
    operator: BaseDyadicOperator
    f: MatrixField
    constant: float = 1.0


class RatioStats(NamedTuple):
    max: float
    mean: float
    quantiles: Dict[float, float]
    count: int
    skipped: int
    seed: int
    ratios: Tuple[float, ...]


def _trial_ratio(trial: Trial, norm_in: Callable, norm_out: Callable) -> float:
    denominator = trial.constant * norm_in(trial.f)
    if denominator == 0.0:
        raise DegenerateInput("input norm vanishes")
    return norm_out(trial.operator(trial.f)) / denominator


def ratio_suite(family: Callable[[torch.Generator], Trial],
                norm_in: Callable[[MatrixField], float],
                norm_out: Callable[[MatrixField], float],
                trials: int,
                seed: int) -> RatioStats:
    """Empirical norm_out(Tf) / norm_in(f) over ``trials`` draws of ``family``.

    Each trial draws from its own generator spawned from ``seed``; trials with a
    vanishing denominator are skipped and counted.
    """
    ratios = []
    skipped = 0
    for child in np.random.SeedSequence(seed).spawn(trials):
        trial = family(torch_generator(child))
        try:
            ratios.append(_trial_ratio(trial, norm_in, norm_out))
        except DegenerateInput:
            skipped += 1
    if skipped:
        logger.debug("ratio suite skipped %d degenerate trials", skipped)
    if not ratios:
        return RatioStats(0.0, 0.0, {q: 0.0 for q in QUANTILES}, 0, skipped, seed, ())
    values = np.asarray(ratios)
    quantiles = {q: float(np.quantile(values, q)) for q in QUANTILES}
    return RatioStats(float(values.max()), float(values.mean()), quantiles,
                      len(ratios), skipped, seed, tuple(float(r) for r in ratios))


def hardy_mapping_suite(family: Callable[[torch.Generator], Trial],
                        exponents: Sequence[float],
                        trials: int,
                        seed: int) -> Dict[float, RatioStats]:
    """‖Tf‖_{H^c_p} / (constant · ‖f‖_p) for each p, with the same draws at every p."""
    return {p: ratio_suite(family,
                           lambda f, p=p: lp_norm(f, p),
                           lambda g, p=p: hardy_col_norm(g, p),
                           trials, seed)
            for p in exponents}


class DualityRecord(NamedTuple):
    pairing: float
    bound: float
    ratio: float


def duality_check(b: MatrixField, f: MatrixField) -> DualityRecord:
    """|⟨⟨b, f − 𝔼₀f⟩⟩| against ‖b‖_{BMO} · ‖f‖_{H^c_1}."""
    value = abs(pairing(b, f - cond_expect(f, 0)))
    bound = bmo_mart_norm(b) * hardy_col_norm(f, 1)
    if bound == 0.0:
        raise DegenerateInput("BMO or Hardy norm vanishes")
    return DualityRecord(value, bound, value / bound)


class GrowthRow(NamedTuple):
    d: int
    ratio: float
    seed: int
    iterations: int
    residual: float


def _normalized_symbol(b: MatrixField) -> Optional[MatrixField]:
    sup = float(operator_norms(b).max())
    if sup == 0.0:
        return None
    return b * (1.0 / sup)


def _paraproduct_ratio(b: MatrixField, tol: float, max_iter: int, seed: int) -> NormReport:
    return op_norm(Paraproduct(b), "power", tol, max_iter, seed)


def paraproduct_growth(d_list: Sequence[int],
                       search_budget: int,
                       seed: int,
                       dim: int = 1,
                       level: int = 3,
                       tol: float = 1e-6,
                       max_iter: int = 500) -> List[GrowthRow]:
    """Best found ‖π_b‖ / ‖b‖_∞ for each matrix size d.

    Half of the budget goes to random symbols, the rest to shrinking random
    perturbations of the incumbent. The block embedding of the previous best
    symbol is always a candidate; it preserves both norms, so its ratio is
    carried over and the table is nondecreasing in d.
    """
    if list(d_list) != sorted(d_list):
        raise ValueError("d_list must be ascending")
    if search_budget < 1:
        raise ValueError("search_budget must be positive")
    rows = []
    best_symbol, best = None, None
    for d in d_list:
        generator = torch_generator(np.random.SeedSequence([seed, d]))
        if best_symbol is not None:
            best_symbol = embed_block(best_symbol, d)
            best = best._replace(d=d)
        random_budget = max(1, search_budget // 2)
        step = 0.5
        for trial in range(search_budget):
            if trial < random_budget or best_symbol is None:
                candidate = _normalized_symbol(random_field(dim, level, d, generator))
            else:
                candidate = _normalized_symbol(best_symbol + random_field(dim, level, d, generator) * step)
            if candidate is None:
                continue
            report = _paraproduct_ratio(candidate, tol, max_iter, seed + trial)
            if best is None or report.norm > best.ratio:
                best_symbol = candidate
                best = GrowthRow(d, report.norm, seed + trial, report.iterations, report.residual)
            elif trial >= random_budget:
                step *= 0.7
        logger.info("d=%d best paraproduct ratio %.6f (log d = %.4f)", d, best.ratio, math.log(d))
        rows.append(best)
    return rows


def haar_multiplier_family(dim: int, level: int, size: int) -> Callable[[torch.Generator], Trial]:
    """Draws (Λ_b, f) with constant ‖b‖_{BMO}."""
    def draw(generator: torch.Generator) -> Trial:
        b = random_field(dim, level, size, generator)
        f = random_field(dim, level, size, generator)
        return Trial(HaarMultiplier(b), f, bmo_mart_norm(b))
    return draw


def martingale_family(dim: int, level: int, size: int, unitary: bool = False) -> Callable[[torch.Generator], Trial]:
    """Draws (M_ξ, f) with constant sup_k ‖ξ_k‖_∞."""
    def draw(generator: torch.Generator) -> Trial:
        transform = MartingaleTransform(random_adapted_sequence(dim, level, size, generator, unitary))
        f = random_field(dim, level, size, generator)
        return Trial(transform, f, transform.sup_norm())
    return draw


def zero_family(dim: int, level: int, size: int) -> Callable[[torch.Generator], Trial]:
    def draw(generator: torch.Generator) -> Trial:
        return Trial(ZeroOperator(dim, level, size), random_field(dim, level, size, generator))
    return draw


def haar_multiplier_envelope(p: float, level: int) -> float:
    """Committed bound for ‖Λ_b f‖_{H^c_p} / (‖b‖_{BMO} ‖f‖_p) at L levels, p ≥ 2."""
    if p < 2:
        return math.inf
    return float(level) if p == 2 else 2.0 * level ** 1.5


def martingale_envelope(p: float, level: int) -> float:
    """Committed bound for ‖M_ξ f‖_{H^c_p} / (sup‖ξ‖ ‖f‖_p), p ≥ 2; exact at p = 2."""
    if p < 2:
        return math.inf
    return 1.0 if p == 2 else 2.0 * math.sqrt(level)


def paraproduct_envelope(level: int) -> float:
    """Scalar bound for ‖π_b‖ / ‖b‖_∞ at L levels."""
    return 2.0 * math.sqrt(level)


DUALITY_ENVELOPE = 2.0
