from typing import List, Optional

import torch

from pytorch_dyadic_czo.field import MatrixField
from pytorch_dyadic_czo.field import haar_keys
from pytorch_dyadic_czo.grid import ShiftStream
from pytorch_dyadic_czo.operators import DyadicShift
from pytorch_dyadic_czo.operators import PerfectDyadicCZO
from pytorch_dyadic_czo.tensor import HaarTensorOperator
from pytorch_dyadic_czo.tensor import minimal_translation

from pytorch_dyadic_czo.utils import DTYPE


def random_matrices(shape, size: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    return torch.randn(tuple(shape) + (size, size), dtype=DTYPE, generator=generator)


def random_field(dim: int, level: int, size: int,
                 generator: Optional[torch.Generator] = None,
                 shift: Optional[ShiftStream] = None) -> MatrixField:
    return MatrixField(random_matrices((1 << level,) * dim, size, generator), dim, shift)


def random_unitaries(shape, size: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    q, r = torch.linalg.qr(random_matrices(shape, size, generator))
    phases = torch.diagonal(r, dim1=-2, dim2=-1)
    phases = phases / phases.abs()
    return q * phases.unsqueeze(-2)


def random_adapted_sequence(dim: int, level: int, size: int,
                            generator: Optional[torch.Generator] = None,
                            unitary: bool = False) -> List[MatrixField]:
    """ξ_0, ..., ξ_{L−1} with ξ_k constant on level-k cubes."""
    xi = []
    for k in range(level):
        shape = (1 << k,) * dim
        blocks = random_unitaries(shape, size, generator) if unitary else random_matrices(shape, size, generator)
        for axis in range(dim):
            blocks = blocks.repeat_interleave(1 << (level - k), dim=axis)
        xi.append(MatrixField(blocks, dim))
    return xi


def random_perfect_czo(dim: int, level: int, size: int,
                       generator: Optional[torch.Generator] = None,
                       symmetric: bool = False) -> PerfectDyadicCZO:
    xi = [random_matrices((1 << j,) * dim + ((1 << dim) - 1,), size, generator) for j in range(level)]
    b_col = random_field(dim, level, size, generator)
    b_row = b_col if symmetric else random_field(dim, level, size, generator)
    return PerfectDyadicCZO(xi, b_col, b_row)


def random_banded_tensor(dim: int, level: int, size: int, band: int,
                         generator: Optional[torch.Generator] = None,
                         cross_level_probability: float = 0.3) -> HaarTensorOperator:
    """Random same-level entries with |m|_∞ ≤ band, random cross-level and coarse entries."""
    keys = haar_keys(dim, level)
    entries = {}
    for col in keys:
        for row in keys:
            average = not any(row.signature) or not any(col.signature)
            if not average and row.level == col.level:
                keep = max(abs(s) for s in minimal_translation(row, col)) <= band
            else:
                draw = torch.rand(1, generator=generator, dtype=torch.float64)
                keep = float(draw) < cross_level_probability
            if keep:
                entries[(row, col)] = random_matrices((), size, generator)
    return HaarTensorOperator(entries, dim, level, size, band=band)


def random_shift_signs(dim: int, level: int, generator: Optional[torch.Generator] = None) -> List[torch.Tensor]:
    signs = []
    for j in range(level):
        draw = torch.randint(0, 2, (1 << j,) * dim + ((1 << dim) - 1,), generator=generator)
        signs.append((2 * draw - 1).to(torch.float64))
    return signs


def random_shift(dim: int, level: int, size: int, generator: Optional[torch.Generator] = None) -> DyadicShift:
    return DyadicShift(random_shift_signs(dim, level, generator), dim, size)


def embed_block(symbol: MatrixField, size: int) -> MatrixField:
    """Place a d×d field in the top-left corner of a size×size field."""
    values = torch.zeros(symbol.values.shape[:-2] + (size, size), dtype=DTYPE)
    values[..., :symbol.size, :symbol.size] = symbol.values
    return MatrixField(values, symbol.dim, symbol.shift)
