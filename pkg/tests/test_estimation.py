import math
import random

import pytest
from pytest import approx
import torch

from pytorch_dyadic_czo.base_operator import IdentityOperator
from pytorch_dyadic_czo.base_operator import ZeroOperator
from pytorch_dyadic_czo.estimation import DUALITY_ENVELOPE
from pytorch_dyadic_czo.estimation import Trial
from pytorch_dyadic_czo.estimation import duality_check
from pytorch_dyadic_czo.estimation import haar_multiplier_envelope
from pytorch_dyadic_czo.estimation import haar_multiplier_family
from pytorch_dyadic_czo.estimation import hardy_mapping_suite
from pytorch_dyadic_czo.estimation import linearity_probe
from pytorch_dyadic_czo.estimation import martingale_envelope
from pytorch_dyadic_czo.estimation import martingale_family
from pytorch_dyadic_czo.estimation import materialize
from pytorch_dyadic_czo.estimation import op_norm
from pytorch_dyadic_czo.estimation import paraproduct_envelope
from pytorch_dyadic_czo.estimation import paraproduct_growth
from pytorch_dyadic_czo.estimation import ratio_suite
from pytorch_dyadic_czo.estimation import zero_family
from pytorch_dyadic_czo.field import MatrixField
from pytorch_dyadic_czo.field import l2_norm
from pytorch_dyadic_czo.norms import hardy_col_norm
from pytorch_dyadic_czo.norms import lp_norm
from pytorch_dyadic_czo.samplers import random_field
from pytorch_dyadic_czo.samplers import random_perfect_czo
from pytorch_dyadic_czo.utils import DegenerateInput
from pytorch_dyadic_czo.utils import DimensionTooLarge

SEED = 4738
random.seed(SEED)
torch.manual_seed(SEED)

class TestOperatorNorm:
    def setup_method(self):
        self.generator = torch.Generator().manual_seed(SEED)

    def test_materialize(self):
        matrix = materialize(IdentityOperator(1, 2, 2))
        assert matrix.shape == (16, 16)
        assert torch.equal(matrix, torch.eye(16, dtype=matrix.dtype))
        with pytest.raises(DimensionTooLarge):
            materialize(IdentityOperator(1, 10, 3))

    def test_scaled_identity(self):
        T = IdentityOperator(1, 2, 2) * 2.0
        assert op_norm(T, "dense").norm == approx(2.0)
        report = op_norm(T, "power", seed=SEED)
        assert report.norm == approx(2.0)
        assert report.converged

    def test_zero_operator(self):
        report = op_norm(ZeroOperator(1, 2, 2), "power")
        assert report.norm == 0.0
        assert report.converged

    def test_power_agrees_with_dense(self):
        T = random_perfect_czo(1, 3, 2, self.generator)
        dense = op_norm(T, "dense").norm
        power = op_norm(T, "power", tol=1e-10, max_iter=20000, seed=SEED).norm
        assert abs(power - dense) <= 1e-6 * dense
        assert power <= dense + 1e-10

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            op_norm(IdentityOperator(1, 2, 2), "lanczos")

    def test_linearity(self):
        T = random_perfect_czo(2, 2, 2, self.generator)
        assert linearity_probe(T, seed=SEED) == approx(0.0, abs=1e-12)

class TestRatioSuites:
    def test_zero_family(self):
        stats = ratio_suite(zero_family(1, 3, 2), lambda f: lp_norm(f, 2), lambda g: lp_norm(g, 2), 5, SEED)
        assert stats.max == 0.0
        assert stats.count == 5
        assert stats.skipped == 0

    def test_degenerate_trials_are_skipped(self):
        def family(generator):
            return Trial(IdentityOperator(1, 2, 1), MatrixField.zeros(1, 2, 1))
        stats = ratio_suite(family, l2_norm, l2_norm, 3, SEED)
        assert stats.count == 0
        assert stats.skipped == 3

    def test_martingale_is_a_contraction_on_l2(self):
        stats = ratio_suite(martingale_family(1, 3, 2), l2_norm, l2_norm, 8, SEED)
        assert stats.max <= 1.0 + 1e-8
        assert stats.quantiles[0.5] <= stats.quantiles[0.99]
        again = ratio_suite(martingale_family(1, 3, 2), l2_norm, l2_norm, 8, SEED)
        assert again.ratios == stats.ratios

    def test_hardy_mapping_envelopes(self):
        level = 3
        multiplier = hardy_mapping_suite(haar_multiplier_family(1, level, 2), (2.0, 4.0), 4, SEED)
        martingale = hardy_mapping_suite(martingale_family(1, level, 2), (2.0, 4.0), 4, SEED)
        for p in (2.0, 4.0):
            assert multiplier[p].max <= haar_multiplier_envelope(p, level)
            assert martingale[p].max <= martingale_envelope(p, level) + 1e-8

    def test_envelopes(self):
        assert haar_multiplier_envelope(1.5, 4) == math.inf
        assert martingale_envelope(1.0, 4) == math.inf
        assert haar_multiplier_envelope(2.0, 4) == 4.0
        assert martingale_envelope(2.0, 4) == 1.0
        assert martingale_envelope(4.0, 4) == 4.0
        assert paraproduct_envelope(4) == 4.0

class TestDuality:
    def test_bounded_pairing(self):
        generator = torch.Generator().manual_seed(SEED)
        for _ in range(4):
            b, f = random_field(1, 3, 2, generator), random_field(1, 3, 2, generator)
            record = duality_check(b, f)
            assert record.ratio <= DUALITY_ENVELOPE
            assert record.pairing <= DUALITY_ENVELOPE * record.bound

    def test_constant_symbol(self):
        f = random_field(1, 3, 2, torch.Generator().manual_seed(SEED))
        with pytest.raises(DegenerateInput):
            duality_check(MatrixField.identity(1, 3, 2), f)
        assert hardy_col_norm(f, 1) > 0.0

class TestParaproductGrowth:
    def test_nondecreasing(self):
        rows = paraproduct_growth((1, 2), 2, SEED, level=2)
        assert [row.d for row in rows] == [1, 2]
        assert rows[1].ratio >= rows[0].ratio
        assert rows[0].ratio <= paraproduct_envelope(2)

    def test_arguments(self):
        with pytest.raises(ValueError):
            paraproduct_growth((2, 1), 2, SEED)
        with pytest.raises(ValueError):
            paraproduct_growth((1, 2), 0, SEED)
