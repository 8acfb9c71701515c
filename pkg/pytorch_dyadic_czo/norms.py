import itertools
import math
from typing import List, Optional

import numpy as np
import torch

from pytorch_dyadic_czo.field import MatrixField
from pytorch_dyadic_czo.field import _block_average
from pytorch_dyadic_czo.field import cond_expect
from pytorch_dyadic_czo.field import mart_diff
from pytorch_dyadic_czo.grid import ShiftStream
from pytorch_dyadic_czo.utils import InvalidExponent
from pytorch_dyadic_czo.utils import NotPositiveSemidefinite
from pytorch_dyadic_czo.utils import ShapeMismatch

from pytorch_dyadic_czo.utils import DTYPE
from pytorch_dyadic_czo.utils import PSD_CLIP_TOLERANCE


def _check_exponent(p: float) -> None:
    if not p >= 1:
        raise InvalidExponent("exponent {} is below 1".format(p))


def _integrate_power(singular_values: torch.Tensor, p: float, cell_volume: float) -> float:
    """(∫ Σ s_i(x)^p dx)^{1/p}; p = ∞ gives the largest singular value over all cells."""
    if singular_values.numel() == 0:
        return 0.0
    if math.isinf(p):
        return float(singular_values.max())
    return float((singular_values ** p).sum() * cell_volume) ** (1.0 / p)


def _psd_sqrt_spectrum(matrices: torch.Tensor) -> torch.Tensor:
    """Eigenvalues of the square roots of Hermitian PSD matrices, tiny negatives clipped."""
    eigenvalues = torch.linalg.eigvalsh(matrices)
    scale = max(1.0, float(eigenvalues.abs().max())) if eigenvalues.numel() else 1.0
    if eigenvalues.numel() and float(eigenvalues.min()) < -PSD_CLIP_TOLERANCE * scale:
        raise NotPositiveSemidefinite("square function has eigenvalue {}".format(float(eigenvalues.min())))
    return eigenvalues.clamp(min=0.0).sqrt()


def lp_norm(f: MatrixField, p: float) -> float:
    """(∫ tr|f(x)|^p dx)^{1/p}; p = ∞ is the largest cellwise operator norm."""
    _check_exponent(p)
    return _integrate_power(torch.linalg.svdvals(f.values), p, f.cell_volume)


def schatten_norms(f: MatrixField, q: float) -> torch.Tensor:
    """Cellwise ‖f(x)‖_{S_q}."""
    _check_exponent(q)
    singular_values = torch.linalg.svdvals(f.values)
    if math.isinf(q):
        return singular_values.max(dim=-1).values
    return (singular_values ** q).sum(dim=-1) ** (1.0 / q)


def operator_norms(f: MatrixField) -> torch.Tensor:
    return schatten_norms(f, math.inf)


def square_function(f: MatrixField, row: bool = False) -> torch.Tensor:
    """
    Returns:
        S: (2**L,)*n + (d, d), Σ_k 𝔻_k f* 𝔻_k f (or 𝔻_k f 𝔻_k f* for the row version)
    """
    total = torch.zeros_like(f.values)
    for k in range(1, f.level + 1):
        diff = mart_diff(f, k).values
        if row:
            total = total + diff @ diff.conj().transpose(-1, -2)
        else:
            total = total + diff.conj().transpose(-1, -2) @ diff
    return total


def hardy_col_norm(f: MatrixField, p: float) -> float:
    """‖(Σ_k 𝔻_k f* 𝔻_k f)^{1/2}‖_p."""
    _check_exponent(p)
    return _integrate_power(_psd_sqrt_spectrum(square_function(f)), p, f.cell_volume)


def hardy_row_norm(f: MatrixField, p: float) -> float:
    _check_exponent(p)
    return _integrate_power(_psd_sqrt_spectrum(square_function(f, row=True)), p, f.cell_volume)


def hardy_norm(f: MatrixField, p: float) -> float:
    """Martingale H_p norm: max of column and row norms for p ≥ 2.

    For p < 2 the infimum over splittings is bounded by its trivial splittings,
    and min(column, row) is returned.
    """
    col, row = hardy_col_norm(f, p), hardy_row_norm(f, p)
    return max(col, row) if p >= 2 else min(col, row)


def _cube_averages(f: MatrixField, quantity: torch.Tensor, k: int) -> torch.Tensor:
    """Averages of a real cellwise quantity over the level-k cubes of the grid of f."""
    carrier = MatrixField(quantity.to(DTYPE)[..., None, None], f.dim, f.shift)
    return _block_average(carrier.aligned().real, f.dim, f.level, k)


def bmo_mart_norm(f: MatrixField) -> float:
    """sup_k ‖𝔼_k ‖f − 𝔼_{k−1} f‖²_op‖_∞^{1/2}."""
    best = 0.0
    for k in range(1, f.level + 1):
        deviation = operator_norms(f - cond_expect(f, k - 1)) ** 2
        best = max(best, float(_cube_averages(f, deviation, k).max()))
    return math.sqrt(best)


def _bmo_deviation(f: MatrixField, q: float) -> float:
    best = 0.0
    for j in range(f.level):
        deviation = schatten_norms(f - cond_expect(f, j), q) ** 2
        best = max(best, float(_cube_averages(f, deviation, j).max()))
    return math.sqrt(best)


def bmo_bourgain_norm(f: MatrixField, grid: Optional[ShiftStream] = None) -> float:
    """sup over dyadic cubes I of (⨍_I ‖f − f_I‖²_op)^{1/2} in the given grid (the field's own by default)."""
    if grid is not None:
        f = f.regrid(grid)
    return _bmo_deviation(f, math.inf)


def bmo_schatten_norm(f: MatrixField, q: float, grid: Optional[ShiftStream] = None) -> float:
    """Dyadic BMO with S_q-valued deviations; q = ∞ is the Bourgain norm."""
    _check_exponent(q)
    if grid is not None:
        f = f.regrid(grid)
    return _bmo_deviation(f, q)


def third_shift_streams(dim: int, depth: int) -> List[ShiftStream]:
    """The 3^n grids D + t/3, t ∈ {0, 1, 2}^n, truncated to ``depth`` bits."""
    patterns = {
        0: np.zeros(depth, dtype=np.int64),
        1: np.array([(i + 1) % 2 == 0 for i in range(depth)], dtype=np.int64),   # 1/3 = 0.0101...
        2: np.array([(i + 1) % 2 == 1 for i in range(depth)], dtype=np.int64),   # 2/3 = 0.1010...
    }
    streams = []
    for thirds in itertools.product((0, 1, 2), repeat=dim):
        bits = np.stack([patterns[t] for t in thirds], axis=-1).reshape(depth, dim)
        streams.append(ShiftStream(dim, bits))
    return streams


def bmo_cube_norm(f: MatrixField) -> float:
    """Max of the Bourgain norm over the 3^n third-shifted dyadic systems."""
    return max(bmo_bourgain_norm(f, stream) for stream in third_shift_streams(f.dim, max(f.level, 1)))


def bmo_cube_brute_force(f: MatrixField) -> float:
    """Exhaustive sup over all cyclic grid-aligned intervals (n = 1)."""
    if f.dim != 1:
        raise ShapeMismatch("brute-force cube scan is implemented for n = 1")
    cells = f.values.shape[0]
    best = 0.0
    for length in range(2, cells + 1):
        starts = torch.arange(cells)
        windows = (starts[:, None] + torch.arange(length)[None, :]) % cells   # (cells, length)
        chunk = f.values[windows]                                            # (cells, length, d, d)
        mean = chunk.mean(dim=1, keepdim=True)
        deviation = torch.linalg.matrix_norm(chunk - mean, ord=2) ** 2
        best = max(best, float(deviation.mean(dim=1).max()))
    return math.sqrt(best)


def doob_maximal(f: MatrixField, p: float) -> float:
    """(∫ sup_k ‖𝔼_k f(x)‖^p_{S_p} dx)^{1/p}."""
    _check_exponent(p)
    stacked = torch.stack([schatten_norms(cond_expect(f, k), p) for k in range(f.level + 1)])
    pointwise = stacked.max(dim=0).values
    if math.isinf(p):
        return float(pointwise.max())
    return float((pointwise ** p).sum() * f.cell_volume) ** (1.0 / p)
