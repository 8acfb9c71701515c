import math
import random

import pytest
from pytest import approx
import torch

from pytorch_dyadic_czo.base_operator import FunctionOperator
from pytorch_dyadic_czo.base_operator import IdentityOperator
from pytorch_dyadic_czo.base_operator import ZeroOperator
from pytorch_dyadic_czo.field import HaarKey
from pytorch_dyadic_czo.field import MatrixField
from pytorch_dyadic_czo.field import cond_expect
from pytorch_dyadic_czo.field import haar_function
from pytorch_dyadic_czo.field import l2_norm
from pytorch_dyadic_czo.field import pairing
from pytorch_dyadic_czo.operators import HaarMultiplier
from pytorch_dyadic_czo.operators import MartingaleTransform
from pytorch_dyadic_czo.operators import Paraproduct
from pytorch_dyadic_czo.operators import ParaproductAdjoint
from pytorch_dyadic_czo.operators import apply_perfect
from pytorch_dyadic_czo.operators import commutator_audit
from pytorch_dyadic_czo.operators import dyadic_shift
from pytorch_dyadic_czo.operators import haar_multiplier
from pytorch_dyadic_czo.operators import paraproduct
from pytorch_dyadic_czo.operators import petermichl_signs
from pytorch_dyadic_czo.operators import r_operator
from pytorch_dyadic_czo.operators import r_operator_haar
from pytorch_dyadic_czo.operators import summation_identity
from pytorch_dyadic_czo.operators import DyadicShift
from pytorch_dyadic_czo.samplers import random_adapted_sequence
from pytorch_dyadic_czo.samplers import random_field
from pytorch_dyadic_czo.samplers import random_perfect_czo
from pytorch_dyadic_czo.samplers import random_shift
from pytorch_dyadic_czo.tensor import symmetric_defect
from pytorch_dyadic_czo.tensor import wbp_dyadic
from pytorch_dyadic_czo.utils import NotAdapted
from pytorch_dyadic_czo.utils import ShapeMismatch

SEED = 4738
random.seed(SEED)
torch.manual_seed(SEED)

def manually_check_adjoint(T, generator):
    f = random_field(T.dim, T.level, T.size, generator, T.shift)
    g = random_field(T.dim, T.level, T.size, generator, T.shift)
    return abs(pairing(g, T(f)) - pairing(T.H(g), f))

class TestParaproducts:
    def setup_method(self):
        self.generator = torch.Generator().manual_seed(SEED)
        self.b = random_field(1, 4, 3, self.generator)
        self.f = random_field(1, 4, 3, self.generator)

    def test_paraproduct_of_one(self):
        one = MatrixField.identity(1, 4, 3)
        expected = self.b - cond_expect(self.b, 0)
        assert paraproduct(self.b, one).values.numpy() == approx(expected.values.numpy())

    def test_product_splits(self):
        product = self.b @ self.f
        split = haar_multiplier(self.b, self.f) + r_operator(self.b, self.f)
        assert split.values.numpy() == approx(product.values.numpy())
        assert r_operator_haar(self.b, self.f).values.numpy() == approx(r_operator(self.b, self.f).values.numpy())

    def test_adjoints(self):
        for T in (Paraproduct(self.b), ParaproductAdjoint(self.b), HaarMultiplier(self.b)):
            assert manually_check_adjoint(T, self.generator) == approx(0.0, abs=1e-10)
            assert manually_check_adjoint(T.H, self.generator) == approx(0.0, abs=1e-10)

    def test_domain_is_checked(self):
        with pytest.raises(ShapeMismatch):
            paraproduct(self.b, random_field(1, 3, 3, self.generator))

class TestMartingaleTransform:
    def setup_method(self):
        self.generator = torch.Generator().manual_seed(SEED)

    def test_identity_symbol_removes_the_mean(self):
        xi = [MatrixField.identity(1, 4, 2) for _ in range(4)]
        f = random_field(1, 4, 2, self.generator)
        expected = f - cond_expect(f, 0)
        assert MartingaleTransform(xi)(f).values.numpy() == approx(expected.values.numpy())

    def test_bound_and_unitary_equality(self):
        f = random_field(2, 3, 2, self.generator)
        centered = l2_norm(f - cond_expect(f, 0))
        transform = MartingaleTransform(random_adapted_sequence(2, 3, 2, self.generator))
        assert l2_norm(transform(f)) <= transform.sup_norm() * centered + 1e-10
        isometry = MartingaleTransform(random_adapted_sequence(2, 3, 2, self.generator, unitary=True))
        assert l2_norm(isometry(f)) == approx(centered)
        assert isometry.sup_norm() == approx(1.0)

    def test_adjoint(self):
        transform = MartingaleTransform(random_adapted_sequence(1, 4, 2, self.generator))
        assert manually_check_adjoint(transform, self.generator) == approx(0.0, abs=1e-10)

    def test_not_adapted(self):
        xi = [random_field(1, 3, 2, self.generator) for _ in range(3)]
        with pytest.raises(NotAdapted):
            MartingaleTransform(xi)

class TestPerfectCZO:
    def setup_method(self):
        self.generator = torch.Generator().manual_seed(SEED)

    def test_lemma_terms(self):
        for dim in (1, 2):
            T = random_perfect_czo(dim, 3, 2, self.generator)
            f, g = random_field(dim, 3, 2, self.generator), random_field(dim, 3, 2, self.generator)
            terms = T.lemma_terms(f, g)
            assert terms.total == approx(terms.martingale + terms.adjoint_paraproduct + terms.paraproduct)

    def test_adjoint(self):
        T = random_perfect_czo(1, 4, 3, self.generator)
        assert manually_check_adjoint(T, self.generator) == approx(0.0, abs=1e-10)

    def test_symmetric_decomposition(self):
        T = random_perfect_czo(1, 4, 2, self.generator, symmetric=True)
        f = random_field(1, 4, 2, self.generator)
        split = MartingaleTransform(T.symbol())(f) + haar_multiplier(T.t1(), f)
        assert split.values.numpy() == approx(apply_perfect(T, f).values.numpy())
        assert T.is_symmetric()
        assert symmetric_defect(T) == approx(0.0, abs=1e-10)

    def test_t1(self):
        T = random_perfect_czo(1, 3, 2, self.generator)
        expected = T.b_col - cond_expect(T.b_col, 0)
        assert T.t1().values.numpy() == approx(expected.values.numpy())
        assert symmetric_defect(T) > 0.0

class TestDyadicShift:
    def setup_method(self):
        self.generator = torch.Generator().manual_seed(SEED)

    def test_moves_to_parent(self):
        S = DyadicShift(petermichl_signs(3), 1, 1)
        h = haar_function(HaarKey(1, (1,), (1,)), 1, 3)
        parent = haar_function(HaarKey(0, (0,), (1,)), 1, 3)
        assert dyadic_shift(S, h).values.numpy() == approx((-parent).values.numpy())
        left = haar_function(HaarKey(2, (2,), (1,)), 1, 3)
        assert S(left).values.numpy() == approx(haar_function(HaarKey(1, (1,), (1,)), 1, 3).values.numpy())

    def test_kills_coarse_data(self):
        S = DyadicShift(petermichl_signs(3), 1, 1)
        assert S(haar_function(HaarKey(0, (0,), (1,)), 1, 3)).max_abs() == approx(0.0, abs=1e-14)
        assert S(MatrixField.identity(1, 3, 1)).max_abs() == approx(0.0, abs=1e-14)

    def test_norm_bound(self):
        for dim in (1, 2):
            S = random_shift(dim, 3, 2, self.generator)
            f = random_field(dim, 3, 2, self.generator)
            bound = math.sqrt((1 << dim) * ((1 << dim) - 1))
            assert l2_norm(S(f)) <= bound * l2_norm(f) + 1e-10

    def test_adjoint(self):
        for dim in (1, 2):
            S = random_shift(dim, 3, 2, self.generator)
            assert manually_check_adjoint(S, self.generator) == approx(0.0, abs=1e-10)
            assert S.H.H is S

    def test_commutator_audit(self):
        for dim in (1, 2):
            S = random_shift(dim, 3, 2, self.generator)
            b, f = random_field(dim, 3, 2, self.generator), random_field(dim, 3, 2, self.generator)
            assert commutator_audit(S, b, f).error == approx(0.0, abs=1e-10)

class TestIdentities:
    def test_summation_identity(self):
        generator = torch.Generator().manual_seed(SEED)
        f, g = random_field(2, 3, 2, generator), random_field(2, 3, 2, generator)
        for ell in (1, 2, 3):
            lhs, rhs, coarse = summation_identity(f, g, ell)
            assert lhs.values.numpy() == approx(rhs.values.numpy())

    def test_simple_operators(self):
        f = random_field(1, 2, 2, torch.Generator().manual_seed(SEED))
        assert IdentityOperator(1, 2, 2)(f) is f
        assert ZeroOperator(1, 2, 2)(f).max_abs() == 0.0
        scaled = IdentityOperator(1, 2, 2) * 2j
        assert scaled.H(f).values.numpy() == approx((f * -2j).values.numpy())
        assert wbp_dyadic(IdentityOperator(1, 2, 2)) == approx(1.0)
        with pytest.raises(NotImplementedError):
            FunctionOperator(lambda x: x, 1, 2, 2).H
        with pytest.raises(ShapeMismatch):
            IdentityOperator(1, 3, 2)(f)
