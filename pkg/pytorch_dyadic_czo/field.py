from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch

from pytorch_dyadic_czo.grid import ShiftStream
from pytorch_dyadic_czo.utils import LayoutMismatch
from pytorch_dyadic_czo.utils import LevelOutOfRange
from pytorch_dyadic_czo.utils import ShapeMismatch
from pytorch_dyadic_czo.utils import sign_table
from pytorch_dyadic_czo.utils import signatures

from pytorch_dyadic_czo.utils import DTYPE


class MatrixField:
    """Piecewise-constant d×d complex matrix field on the n-torus at finest level L.

    ``values`` has shape (2**L,)*n + (d, d). A field optionally carries a shift
    stream; its dyadic filtration is then the shifted grid D^β, realized on the
    finest cells by a cyclic relabeling of the cells.
    """
    def __init__(self,
                 values: torch.Tensor,
                 dim: int,
                 shift: Optional[ShiftStream] = None) -> None:
        values = torch.as_tensor(values, dtype=DTYPE)
        if values.dim() != dim + 2 or values.shape[-1] != values.shape[-2]:
            raise ShapeMismatch("values must have shape (2**L,)*n + (d, d), got {}".format(tuple(values.shape)))
        side = values.shape[0]
        if side < 1 or side & (side - 1) or any(s != side for s in values.shape[:dim]):
            raise ShapeMismatch("every spatial axis must have the same power-of-two length")
        if shift is not None and shift.dim != dim:
            raise ShapeMismatch("shift stream dimension does not match the field")
        self.values = values
        self.dim = dim
        self.level = side.bit_length() - 1
        self.size = values.shape[-1]
        self.shift = shift

    @classmethod
    def zeros(cls, dim: int, level: int, size: int, shift: Optional[ShiftStream] = None) -> "MatrixField":
        return cls(torch.zeros((1 << level,) * dim + (size, size), dtype=DTYPE), dim, shift)

    @classmethod
    def constant(cls, matrix: torch.Tensor, dim: int, level: int,
                 shift: Optional[ShiftStream] = None) -> "MatrixField":
        matrix = torch.as_tensor(matrix, dtype=DTYPE)
        if matrix.dim() == 0:
            matrix = matrix.reshape(1, 1)
        values = matrix.expand((1 << level,) * dim + tuple(matrix.shape)).clone()
        return cls(values, dim, shift)

    @classmethod
    def identity(cls, dim: int, level: int, size: int, shift: Optional[ShiftStream] = None) -> "MatrixField":
        return cls.constant(torch.eye(size, dtype=DTYPE), dim, level, shift)

    @classmethod
    def from_scalars(cls, scalars: Sequence, dim: int = 1) -> "MatrixField":
        values = torch.as_tensor(np.asarray(scalars), dtype=DTYPE)
        return cls(values.reshape(values.shape + (1, 1)), dim)

    @property
    def num_cells(self) -> int:
        return 1 << (self.level * self.dim)

    @property
    def cell_volume(self) -> float:
        return 2.0 ** (-self.level * self.dim)

    def like(self, values: torch.Tensor) -> "MatrixField":
        return MatrixField(values, self.dim, self.shift)

    def regrid(self, shift: Optional[ShiftStream]) -> "MatrixField":
        return MatrixField(self.values, self.dim, shift)

    def check_compatible(self, other: "MatrixField") -> None:
        if not isinstance(other, MatrixField) or self.values.shape != other.values.shape or self.dim != other.dim:
            raise ShapeMismatch("fields do not share (n, L, d)")
        if self.shift != other.shift:
            raise ShapeMismatch("fields live on different dyadic grids")

    def adjoint(self) -> "MatrixField":
        return self.like(self.values.conj().transpose(-1, -2))

    def __add__(self, other: "MatrixField") -> "MatrixField":
        self.check_compatible(other)
        return self.like(self.values + other.values)

    def __sub__(self, other: "MatrixField") -> "MatrixField":
        self.check_compatible(other)
        return self.like(self.values - other.values)

    def __neg__(self) -> "MatrixField":
        return self.like(-self.values)

    def __mul__(self, scalar) -> "MatrixField":
        return self.like(self.values * scalar)

    __rmul__ = __mul__

    def __matmul__(self, other: "MatrixField") -> "MatrixField":
        # pointwise matrix product
        self.check_compatible(other)
        return self.like(self.values @ other.values)

    def left_multiply(self, matrix: torch.Tensor) -> "MatrixField":
        return self.like(torch.as_tensor(matrix, dtype=DTYPE) @ self.values)

    def max_abs(self) -> float:
        return float(self.values.abs().max()) if self.values.numel() else 0.0

    def _roll_amounts(self) -> List[int]:
        """Per-coordinate cyclic offset aligning the shifted grid with the standard one."""
        if self.shift is None:
            return [0] * self.dim
        amounts = []
        for c in range(self.dim):
            total = 0
            for t in range(self.level):
                total += int(self.shift.bit(self.level - t)[c]) << t
            amounts.append(total)
        return amounts

    def aligned(self) -> torch.Tensor:
        """Values relabeled so that the field's dyadic cubes are standard blocks."""
        amounts = self._roll_amounts()
        if not any(amounts):
            return self.values
        return torch.roll(self.values, shifts=[-a for a in amounts], dims=list(range(self.dim)))

    def from_aligned(self, values: torch.Tensor) -> "MatrixField":
        amounts = self._roll_amounts()
        if any(amounts):
            values = torch.roll(values, shifts=amounts, dims=list(range(self.dim)))
        return self.like(values)


class HaarKey(NamedTuple):
    """Haar function h^θ_I; signature 0 at level 0 is the averaging function of the torus."""
    level: int
    index: Tuple[int, ...]
    signature: Tuple[int, ...]


class HaarCoefficients:
    """Operator-valued Haar data: the coarse average plus one d×d matrix per (I, θ).

    ``details[j]`` holds the coefficients of the level-j cubes, shape
    (2**j,)*n + (2**n - 1, d, d), signatures in the order of ``utils.signatures``.
    """
    def __init__(self,
                 average: torch.Tensor,
                 details: List[torch.Tensor],
                 dim: int,
                 shift: Optional[ShiftStream] = None) -> None:
        self.average = torch.as_tensor(average, dtype=DTYPE)
        self.details = [torch.as_tensor(d, dtype=DTYPE) for d in details]
        self.dim = dim
        self.level = len(details)
        self.size = self.average.shape[-1]
        self.shift = shift

    def check_layout(self) -> None:
        d = self.size
        if self.average.shape != (d, d):
            raise LayoutMismatch("average must be a single d×d matrix")
        for j, detail in enumerate(self.details):
            expected = (1 << j,) * self.dim + ((1 << self.dim) - 1, d, d)
            if tuple(detail.shape) != expected:
                raise LayoutMismatch("level {} details have shape {}, expected {}".format(
                    j, tuple(detail.shape), expected))

    @property
    def count(self) -> int:
        return 1 + sum(int(np.prod(d.shape[:-2])) for d in self.details)

    def flat(self) -> torch.Tensor:
        """
        Returns:
            coefficients: (2**(L*n), d, d), average first, then level by level (cube row-major, then signature)
        """
        d = self.size
        parts = [self.average.reshape(1, d, d)] + [detail.reshape(-1, d, d) for detail in self.details]
        return torch.cat(parts, dim=0)

    @classmethod
    def from_flat(cls, flat: torch.Tensor, dim: int, level: int,
                  shift: Optional[ShiftStream] = None) -> "HaarCoefficients":
        d = flat.shape[-1]
        if flat.shape[0] != 1 << (level * dim):
            raise LayoutMismatch("flat coefficient count does not match (n, L)")
        details = []
        for j in range(level):
            start = 1 << (j * dim)
            stop = 1 << ((j + 1) * dim)
            details.append(flat[start:stop].reshape((1 << j,) * dim + ((1 << dim) - 1, d, d)))
        return cls(flat[0], details, dim, shift)

    def __getitem__(self, key: HaarKey) -> torch.Tensor:
        if not any(key.signature):
            return self.average
        return self.details[key.level][tuple(key.index) + (signatures(self.dim).index(tuple(key.signature)),)]


def haar_keys(dim: int, level: int) -> List[HaarKey]:
    """All Haar keys in flat coefficient order."""
    keys = [HaarKey(0, (0,) * dim, (0,) * dim)]
    thetas = signatures(dim)
    for j in range(level):
        for index in np.ndindex(*((1 << j,) * dim)):
            for theta in thetas:
                keys.append(HaarKey(j, tuple(int(i) for i in index), theta))
    return keys


def key_position(key: HaarKey, dim: int) -> int:
    if not any(key.signature):
        return 0
    side = 1 << key.level
    cube = 0
    for i in key.index:
        cube = cube * side + (i % side)
    return (1 << (key.level * dim)) + cube * ((1 << dim) - 1) + signatures(dim).index(tuple(key.signature))


def _block_average(values: torch.Tensor, dim: int, level: int, k: int) -> torch.Tensor:
    """
    Parameters:
        values: (2**level,)*dim + trailing
    Returns:
        averages: (2**k,)*dim + trailing
    """
    side, block = 1 << k, 1 << (level - k)
    trailing = tuple(values.shape[dim:])
    shape = []
    for _ in range(dim):
        shape += [side, block]
    blocks = values.reshape(tuple(shape) + trailing)
    return blocks.mean(dim=tuple(2 * i + 1 for i in range(dim)))


def _expand(averages: torch.Tensor, dim: int, level: int, k: int) -> torch.Tensor:
    block = 1 << (level - k)
    for axis in range(dim):
        averages = averages.repeat_interleave(block, dim=axis)
    return averages


def _split_children(averages: torch.Tensor, dim: int) -> torch.Tensor:
    """
    Parameters:
        averages: (2**(j+1),)*dim + trailing
    Returns:
        children: (2**j,)*dim + (2**dim,) + trailing, children in itertools.product((0, 1)) order
    """
    half = averages.shape[0] // 2
    trailing = tuple(averages.shape[dim:])
    shape = []
    for _ in range(dim):
        shape += [half, 2]
    blocks = averages.reshape(tuple(shape) + trailing)
    order = [2 * i for i in range(dim)] + [2 * i + 1 for i in range(dim)]
    order += list(range(2 * dim, 2 * dim + len(trailing)))
    return blocks.permute(order).reshape((half,) * dim + (1 << dim,) + trailing)


def _merge_children(children: torch.Tensor, dim: int) -> torch.Tensor:
    half = children.shape[0]
    trailing = tuple(children.shape[dim + 1:])
    blocks = children.reshape((half,) * dim + (2,) * dim + trailing)
    order = []
    for i in range(dim):
        order += [i, dim + i]
    order += list(range(2 * dim, 2 * dim + len(trailing)))
    return blocks.permute(order).reshape((2 * half,) * dim + trailing)


def haar_analyze(f: MatrixField) -> HaarCoefficients:
    """⟨h^θ_I, f⟩ for every cube and signature, with L₂-normalized Haar functions."""
    n, L = f.dim, f.level
    table = sign_table(n)                                      # (2**n - 1, 2**n)
    averages = f.aligned()
    details = [None] * L
    for j in range(L - 1, -1, -1):
        children = _split_children(averages, n)               # (2**j,)*n + (2**n, d, d)
        scale = 2.0 ** (-j * n / 2.0 - n)                      # |I|^{1/2} 2^{-n}
        details[j] = scale * torch.einsum("te,...eab->...tab", table, children)
        averages = children.mean(dim=n)
    return HaarCoefficients(averages.reshape(f.size, f.size), details, n, f.shift)


def haar_synthesize(coefficients: HaarCoefficients) -> MatrixField:
    coefficients.check_layout()
    n = coefficients.dim
    table = sign_table(n)
    averages = coefficients.average.reshape((1,) * n + (coefficients.size, coefficients.size))
    for j, detail in enumerate(coefficients.details):
        scale = 2.0 ** (j * n / 2.0)                           # |I|^{-1/2}
        children = averages.unsqueeze(n) + scale * torch.einsum("te,...tab->...eab", table, detail)
        averages = _merge_children(children, n)
    carrier = MatrixField(averages, n, coefficients.shift)
    return carrier.from_aligned(averages)


def cond_expect(f: MatrixField, k: int) -> MatrixField:
    """𝔼_k f: the average of f over each level-k cube of its grid."""
    if not 0 <= k <= f.level:
        raise LevelOutOfRange("level {} outside [0, {}]".format(k, f.level))
    if k == f.level:
        return f
    averages = _block_average(f.aligned(), f.dim, f.level, k)
    return f.from_aligned(_expand(averages, f.dim, f.level, k))


def mart_diff(f: MatrixField, k: int) -> MatrixField:
    if not 1 <= k <= f.level:
        raise LevelOutOfRange("martingale difference level {} outside [1, {}]".format(k, f.level))
    return cond_expect(f, k) - cond_expect(f, k - 1)


def conditional_expectations(f: MatrixField) -> List[MatrixField]:
    """[𝔼_0 f, ..., 𝔼_L f]."""
    return [cond_expect(f, k) for k in range(f.level + 1)]


def pairing(g: MatrixField, f: MatrixField) -> complex:
    """⟨⟨g, f⟩⟩ = ∫ tr(g(x)* f(x)) dx, anti-linear in g."""
    g.check_compatible(f)
    return complex((g.values.conj() * f.values).sum() * g.cell_volume)


def l2_norm(f: MatrixField) -> float:
    return float(torch.sqrt((f.values.abs() ** 2).sum() * f.cell_volume))


def haar_function(key: HaarKey, dim: int, level: int, matrix: Optional[torch.Tensor] = None,
                  shift: Optional[ShiftStream] = None, size: int = 1) -> MatrixField:
    """The field h^θ_I ⊗ u (u the identity unless ``matrix`` is given); θ = 0 gives |I|^{-1/2} 1_I ⊗ u."""
    if matrix is None:
        matrix = torch.eye(size, dtype=DTYPE)
    matrix = torch.as_tensor(matrix, dtype=DTYPE)
    d = matrix.shape[-1]
    carrier = MatrixField.zeros(dim, level, d, shift)
    if not any(key.signature):
        block = 1 << (level - key.level)
        values = torch.zeros((1 << level,) * dim + (d, d), dtype=DTYPE)
        region = tuple(slice(i * block, (i + 1) * block) for i in key.index)
        values[region] = 2.0 ** (key.level * dim / 2.0) * matrix
        return carrier.from_aligned(values)
    flat = torch.zeros((1 << (level * dim), d, d), dtype=DTYPE)
    flat[key_position(key, dim)] = matrix
    return haar_synthesize(HaarCoefficients.from_flat(flat, dim, level, shift))
