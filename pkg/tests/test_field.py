import random

import numpy as np
import pytest
from pytest import approx
import torch

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
from pytorch_dyadic_czo.field import mart_diff
from pytorch_dyadic_czo.field import pairing
from pytorch_dyadic_czo.grid import ShiftStream
from pytorch_dyadic_czo.samplers import random_field
from pytorch_dyadic_czo.utils import LayoutMismatch
from pytorch_dyadic_czo.utils import LevelOutOfRange
from pytorch_dyadic_czo.utils import ShapeMismatch

SEED = 4738
random.seed(SEED)
torch.manual_seed(SEED)

def manually_haar_coefficient(values, level, j, index):
    # ⟨h_I, f⟩ for n = 1, d = 1 with h_I = |I|^{-1/2}(1_left - 1_right)
    cells = 1 << (level - j)
    start = index * cells
    left = values[start:start + cells // 2].sum()
    right = values[start + cells // 2:start + cells].sum()
    return (left - right) * 2.0 ** (-level) * 2.0 ** (j / 2.0)

class TestMatrixField:
    def test_shapes(self):
        f = MatrixField.zeros(2, 3, 4)
        assert (f.dim, f.level, f.size) == (2, 3, 4)
        assert f.num_cells == 64
        assert f.cell_volume == approx(1 / 64)
        with pytest.raises(ShapeMismatch):
            MatrixField(torch.zeros(3, 2, 2), 1)
        with pytest.raises(ShapeMismatch):
            MatrixField(torch.zeros(4, 2, 2, 3), 1)

    def test_incompatible_grids(self):
        f = MatrixField.zeros(1, 2, 1)
        g = f.regrid(ShiftStream(1, np.array([[1], [0]])))
        with pytest.raises(ShapeMismatch):
            f + g
        with pytest.raises(ShapeMismatch):
            f + MatrixField.zeros(1, 3, 1)

    def test_pointwise_product(self):
        a = MatrixField.constant(torch.tensor([[0, 1], [0, 0]]), 1, 2)
        b = MatrixField.constant(torch.tensor([[0, 0], [1, 0]]), 1, 2)
        assert torch.equal((a @ b).values[0].real, torch.tensor([[1.0, 0.0], [0.0, 0.0]], dtype=torch.float64))
        assert torch.equal((b @ a).values[0].real, torch.tensor([[0.0, 0.0], [0.0, 1.0]], dtype=torch.float64))

class TestHaar:
    def setup_method(self):
        generator = torch.Generator().manual_seed(SEED)
        self.f = random_field(1, 4, 3, generator)
        self.g = random_field(2, 3, 2, generator)

    def test_scalar_coefficients(self):
        values = torch.arange(16, dtype=torch.float64) ** 2
        coefficients = haar_analyze(MatrixField.from_scalars(values))
        assert complex(coefficients.average[0, 0]).real == approx(float(values.mean()))
        for j in range(4):
            for index in range(1 << j):
                expected = manually_haar_coefficient(values, 4, j, index)
                assert complex(coefficients.details[j][index, 0, 0, 0]).real == approx(float(expected))

    def test_round_trip(self):
        for f in (self.f, self.g, self.f.regrid(ShiftStream(1, np.array([[1], [0], [1], [1]])))):
            assert haar_synthesize(haar_analyze(f)).values.numpy() == approx(f.values.numpy(), abs=1e-12)

    def test_parseval(self):
        for f in (self.f, self.g):
            energy = float((haar_analyze(f).flat().abs() ** 2).sum())
            assert energy == approx(l2_norm(f) ** 2, rel=1e-12)

    def test_flat_order(self):
        keys = haar_keys(2, 2)
        assert len(keys) == 16
        assert [key_position(key, 2) for key in keys] == list(range(16))
        coefficients = haar_analyze(self.g)
        rebuilt = HaarCoefficients.from_flat(coefficients.flat(), 2, 3)
        assert torch.equal(rebuilt.flat(), coefficients.flat())
        with pytest.raises(LayoutMismatch):
            HaarCoefficients.from_flat(coefficients.flat()[:10], 2, 3)

    def test_haar_function_is_a_basis_vector(self):
        key = HaarKey(1, (1, 0), (1, 1))
        h = haar_function(key, 2, 3)
        flat = haar_analyze(h).flat()[:, 0, 0]
        expected = torch.zeros(64, dtype=flat.dtype)
        expected[key_position(key, 2)] = 1.0
        assert flat.numpy() == approx(expected.numpy(), abs=1e-12)
        assert l2_norm(h) == approx(1.0)

class TestConditionalExpectation:
    def setup_method(self):
        self.f = random_field(1, 3, 2, torch.Generator().manual_seed(SEED))

    def test_levels(self):
        mean = self.f.values.mean(dim=0)
        assert cond_expect(self.f, 0).values[5].numpy() == approx(mean.numpy())
        assert cond_expect(self.f, 3) is self.f
        with pytest.raises(LevelOutOfRange):
            cond_expect(self.f, 4)
        with pytest.raises(LevelOutOfRange):
            mart_diff(self.f, 0)

    def test_telescoping(self):
        total = cond_expect(self.f, 0)
        for k in range(1, 4):
            total = total + mart_diff(self.f, k)
        assert total.values.numpy() == approx(self.f.values.numpy())

    def test_shifted_grid(self):
        # β_2 = 1 moves the level-1 cubes to {1, 2} and {3, 0}
        f = MatrixField.from_scalars([1.0, 2.0, 5.0, 4.0]).regrid(ShiftStream(1, np.array([[0], [1]])))
        assert cond_expect(f, 1).values[:, 0, 0].real.tolist() == approx([2.5, 3.5, 3.5, 2.5])

class TestPairing:
    def test_sesquilinear(self):
        generator = torch.Generator().manual_seed(SEED)
        f, g = random_field(1, 3, 2, generator), random_field(1, 3, 2, generator)
        alpha = 0.3 - 1.7j
        assert pairing(g * alpha, f) == approx(alpha.conjugate() * pairing(g, f))
        assert pairing(g, f * alpha) == approx(alpha * pairing(g, f))
        assert pairing(f, f).real == approx(l2_norm(f) ** 2)
        assert pairing(g, f) == approx(pairing(f, g).conjugate())
