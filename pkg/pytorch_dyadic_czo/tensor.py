import logging
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np
import torch

from pytorch_dyadic_czo.base_operator import BaseDyadicOperator
from pytorch_dyadic_czo.field import HaarCoefficients
from pytorch_dyadic_czo.field import HaarKey
from pytorch_dyadic_czo.field import MatrixField
from pytorch_dyadic_czo.field import cond_expect
from pytorch_dyadic_czo.field import haar_analyze
from pytorch_dyadic_czo.field import haar_function
from pytorch_dyadic_czo.field import haar_keys
from pytorch_dyadic_czo.field import haar_synthesize
from pytorch_dyadic_czo.field import key_position
from pytorch_dyadic_czo.field import l2_norm
from pytorch_dyadic_czo.field import pairing
from pytorch_dyadic_czo.grid import ShiftStream
from pytorch_dyadic_czo.operators import cube_averages
from pytorch_dyadic_czo.utils import EntryOutOfRange
from pytorch_dyadic_czo.utils import signatures

from pytorch_dyadic_czo.utils import DTYPE

logger = logging.getLogger(__name__)

Entries = Dict[Tuple[HaarKey, HaarKey], torch.Tensor]


def minimal_translation(row: HaarKey, col: HaarKey) -> Tuple[int, ...]:
    """m with row cube = col cube ∔ m, each coordinate reduced to (−2^{j−1}, 2^{j−1}]."""
    side = 1 << col.level
    m = []
    for a, b in zip(row.index, col.index):
        step = (a - b) % side
        if step > side // 2:
            step -= side
        m.append(step)
    return tuple(m)


def _is_average(key: HaarKey) -> bool:
    return not any(key.signature)


class HaarTensorOperator(BaseDyadicOperator):
    """Operator given by its Haar coefficient family ⟨h^η_J, T h^θ_I⟩.

    ``entries`` maps (row key (J, η), column key (I, θ)) to a d×d matrix; the
    coarse average is HaarKey(0, 0, 0). ``band`` bounds |m|_∞ for same-level
    pairs J = I∔m.
    """
    def __init__(self,
                 entries: Entries,
                 dim: int,
                 level: int,
                 size: int,
                 band: Optional[int] = None,
                 shift: Optional[ShiftStream] = None) -> None:
        super().__init__(dim, level, size, shift)
        self.band = band
        self.entries = {}
        for (row, col), value in entries.items():
            row, col = HaarKey(*row), HaarKey(*col)
            self._check_key(row)
            self._check_key(col)
            if band is not None and not _is_average(row) and not _is_average(col) and row.level == col.level:
                if max(abs(s) for s in minimal_translation(row, col)) > band:
                    raise EntryOutOfRange("entry {} -> {} exceeds band {}".format(col, row, band))
            value = torch.as_tensor(value, dtype=DTYPE)
            if value.shape != (size, size):
                raise EntryOutOfRange("entry matrices must be {}x{}".format(size, size))
            self.entries[(row, col)] = value
        self._dense = None

    def _check_key(self, key: HaarKey) -> None:
        if len(key.index) != self.dim or len(key.signature) != self.dim:
            raise EntryOutOfRange("key {} has the wrong dimension".format(key))
        if _is_average(key):
            if key.level != 0 or any(key.index):
                raise EntryOutOfRange("only the coarse average may carry signature 0")
            return
        if not 0 <= key.level < self.level:
            raise EntryOutOfRange("key level {} outside [0, {})".format(key.level, self.level))
        if any(not 0 <= i < (1 << key.level) for i in key.index):
            raise EntryOutOfRange("key index {} outside level {}".format(key.index, key.level))
        if tuple(key.signature) not in signatures(self.dim):
            raise EntryOutOfRange("invalid signature {}".format(key.signature))

    def dense(self) -> torch.Tensor:
        """
        Returns:
            tensor: (N, N, d, d), N = 2**(L*n), in flat Haar coefficient order
        """
        if self._dense is None:
            count = 1 << (self.level * self.dim)
            dense = torch.zeros((count, count, self.size, self.size), dtype=DTYPE)
            for (row, col), value in self.entries.items():
                dense[key_position(row, self.dim), key_position(col, self.dim)] = value
            self._dense = dense
        return self._dense

    def apply_coefficients(self, coefficients: HaarCoefficients) -> HaarCoefficients:
        flat = torch.einsum("jiab,ibc->jac", self.dense(), coefficients.flat())
        return HaarCoefficients.from_flat(flat, self.dim, self.level, coefficients.shift)

    def forward(self, f: MatrixField) -> MatrixField:
        self.check_domain(f)
        return haar_synthesize(self.apply_coefficients(haar_analyze(f)))

    def adjoint(self) -> "HaarTensorOperator":
        entries = {(col, row): value.conj().transpose(-1, -2) for (row, col), value in self.entries.items()}
        return HaarTensorOperator(entries, self.dim, self.level, self.size, self.band, self.shift)

    @classmethod
    def from_operator(cls,
                      operator,
                      dim: int,
                      level: int,
                      size: int,
                      tolerance: float = 0.0,
                      shift: Optional[ShiftStream] = None) -> "HaarTensorOperator":
        """Assemble ⟨h^η_J, T(h^θ_I ⊗ id)⟩ for a right-module linear map T."""
        entries = {}
        keys = haar_keys(dim, level)
        for col in keys:
            image = operator(haar_function(col, dim, level, shift=shift, size=size))
            column = haar_analyze(image).flat()
            for row, value in zip(keys, column):
                if float(value.abs().max()) > tolerance:
                    entries[(row, col)] = value
        return cls(entries, dim, level, size, shift=shift)

    @classmethod
    def from_perfect(cls, T, tolerance: float = 0.0) -> "HaarTensorOperator":
        return cls.from_operator(T, T.dim, T.level, T.size, tolerance, T.shift)

    @classmethod
    def identity(cls, dim: int, level: int, size: int) -> "HaarTensorOperator":
        eye = torch.eye(size, dtype=DTYPE)
        return cls({(key, key): eye for key in haar_keys(dim, level)}, dim, level, size, band=0)


def apply_tensor(T: HaarTensorOperator, f: MatrixField) -> MatrixField:
    return T(f)


class FigielTerms(NamedTuple):
    A: complex
    B0: complex
    P: complex
    C0: complex
    Q: complex
    coarse: complex
    by_shift: Dict[Tuple[int, ...], Tuple[complex, complex, complex]]

    def total(self) -> complex:
        return self.A + self.B0 + self.P + self.C0 + self.Q + self.coarse


def averaging_coordinates(dim: int, level: int, j: int, shift: Optional[ShiftStream] = None) -> torch.Tensor:
    """
    Returns:
        coordinates: (2**(j*n), N), the Haar coordinates of h^0_J = |J|^{-1/2} 1_J for J ∈ D_j
    """
    rows = []
    for index in np.ndindex(*((1 << j,) * dim)):
        key = HaarKey(j, tuple(int(i) for i in index), (0,) * dim)
        rows.append(haar_analyze(haar_function(key, dim, level, shift=shift)).flat()[:, 0, 0])
    return torch.stack(rows)


def _translation_codes(dim: int, j: int) -> np.ndarray:
    """(C, C, n) array of m with row cube = column cube ∔ m, minimal representatives."""
    side = 1 << j
    index = np.stack(np.unravel_index(np.arange(side ** dim), (side,) * dim), axis=-1)
    m = np.mod(index[:, None, :] - index[None, :, :], side)
    return np.where(m > side // 2, m - side, m)


def _accumulate(by_shift: Dict, codes: np.ndarray, values: torch.Tensor, slot: int) -> None:
    flat_codes = codes.reshape(-1, codes.shape[-1])
    flat_values = values.reshape(-1)
    for m in np.unique(flat_codes, axis=0):
        mask = torch.as_tensor(np.all(flat_codes == m, axis=1))
        key = tuple(int(s) for s in m)
        entry = list(by_shift.get(key, (0j, 0j, 0j)))
        entry[slot] += complex(flat_values[mask].sum())
        by_shift[key] = tuple(entry)


def figiel_terms(T: HaarTensorOperator, f: MatrixField, g: MatrixField) -> FigielTerms:
    """Figiel decomposition of ⟨⟨g, Tf⟩⟩ level by level.

    A collects same-level pairs ⟨h^η_{I∔m}, T h^θ_I⟩; B0 and P split
    ⟨⟨𝔼_{k−1} g, T 𝔻_k f⟩⟩ into translated differences and the T*1 paraproduct;
    C0 and Q split ⟨⟨𝔻_k g, T 𝔼_{k−1} f⟩⟩ likewise with T1. ``coarse`` is
    ⟨⟨𝔼_0 g, T 𝔼_0 f⟩⟩.
    """
    T.check_domain(f)
    f.check_compatible(g)
    n, L, d = f.dim, f.level, f.size
    dense = T.dense()
    count = 1 << (L * n)
    signature_count = (1 << n) - 1
    coefficients_f = haar_analyze(f)
    coefficients_g = haar_analyze(g)
    t1 = haar_analyze(T(T.one()))
    t_star_1_star = haar_analyze(T.adjoint()(T.one()).adjoint())

    by_shift: Dict[Tuple[int, ...], Tuple[complex, complex, complex]] = {}
    A = B0 = P = C0 = Q = 0j
    for j in range(L):
        cubes = 1 << (j * n)
        block = slice(cubes, cubes + cubes * signature_count)
        scale = 2.0 ** (j * n / 2.0)                                               # |I|^{-1/2}
        cf = coefficients_f.details[j].reshape(cubes, signature_count, d, d)
        cg = coefficients_g.details[j].reshape(cubes, signature_count, d, d)
        codes = _translation_codes(n, j)
        averages = averaging_coordinates(n, L, j, f.shift).to(DTYPE)               # (C, N)
        g0 = cube_averages(g, j).reshape(cubes, d, d) / scale                     # ⟨h^0_J, g⟩
        f0 = cube_averages(f, j).reshape(cubes, d, d) / scale                     # ⟨h^0_J, f⟩

        same_level = dense[block, block].reshape(cubes, signature_count, cubes, signature_count, d, d)
        a = torch.einsum("jeac,jeiqab,iqbc->ji", cg.conj(), same_level, cf)
        _accumulate(by_shift, codes, a, 0)
        A += complex(a.sum())

        w = torch.einsum("jk,kxab->jxab", averages.conj(), dense[:, block])
        w = w.reshape(cubes, cubes, signature_count, d, d)                       # [J, I, θ]
        difference_g = g0[:, None] - g0[None, :]                                  # [J, I]
        b0 = torch.einsum("jiac,jiqab,iqbc->ji", difference_g.conj(), w, cf)
        _accumulate(by_shift, codes, b0, 1)
        B0 += complex(b0.sum())
        row_symbol = t_star_1_star.details[j].reshape(cubes, signature_count, d, d)
        P += scale * complex(torch.einsum("iac,iqab,iqbc->", g0.conj(), row_symbol, cf))

        v = torch.einsum("xkab,jk->xjab", dense[block, :], averages)
        v = v.reshape(cubes, signature_count, cubes, d, d)                       # [I, θ, J]
        difference_f = f0[None, :] - f0[:, None]                                  # [I, J]
        c0 = torch.einsum("iqac,iqjab,ijbc->ij", cg.conj(), v, difference_f)
        _accumulate(by_shift, codes.transpose(1, 0, 2), c0, 2)
        C0 += complex(c0.sum())
        col_symbol = t1.details[j].reshape(cubes, signature_count, d, d)
        Q += scale * complex(torch.einsum("iqac,iqab,ibc->", cg.conj(), col_symbol, f0))

    coarse = pairing(cond_expect(g, 0), T(cond_expect(f, 0)))
    return FigielTerms(A, B0, P, C0, Q, coarse, by_shift)


def t1_data(T: BaseDyadicOperator) -> Tuple[MatrixField, MatrixField]:
    """(T1, T*1)."""
    return T.t1(), T.t_star_1()


def symmetric_defect(T: BaseDyadicOperator) -> float:
    """‖(T1)* − T*1‖₂; zero exactly when the symmetric condition holds."""
    t1, t_star_1 = t1_data(T)
    return l2_norm(t1.adjoint() - t_star_1)


def wbp_dyadic(T: BaseDyadicOperator) -> float:
    """max over dyadic cubes I of |I|^{-1} ‖⟨1_I, T 1_I⟩‖_op."""
    best = 0.0
    for j in range(T.level + 1):
        for index in np.ndindex(*((1 << j,) * T.dim)):
            key = HaarKey(j, tuple(int(i) for i in index), (0,) * T.dim)
            indicator = haar_function(key, T.dim, T.level, shift=T.shift, size=T.size)  # |I|^{-1/2} 1_I
            image = T(indicator)
            mask = indicator.values.abs().sum(dim=(-1, -2)) > 0
            block = image.values[mask].sum(dim=0) * image.cell_volume
            # block = |I|^{-1/2} ⟨1_I, T 1_I⟩
            value = float(torch.linalg.matrix_norm(block, ord=2)) * 2.0 ** (j * T.dim / 2.0)
            best = max(best, value)
    return best
