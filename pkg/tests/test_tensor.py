import random

import pytest
from pytest import approx
import torch

from pytorch_dyadic_czo.field import HaarCoefficients
from pytorch_dyadic_czo.field import HaarKey
from pytorch_dyadic_czo.field import MatrixField
from pytorch_dyadic_czo.field import haar_analyze
from pytorch_dyadic_czo.field import haar_synthesize
from pytorch_dyadic_czo.field import key_position
from pytorch_dyadic_czo.field import pairing
from pytorch_dyadic_czo.samplers import embed_block
from pytorch_dyadic_czo.samplers import random_banded_tensor
from pytorch_dyadic_czo.samplers import random_field
from pytorch_dyadic_czo.samplers import random_perfect_czo
from pytorch_dyadic_czo.samplers import random_shift
from pytorch_dyadic_czo.tensor import HaarTensorOperator
from pytorch_dyadic_czo.tensor import apply_tensor
from pytorch_dyadic_czo.tensor import figiel_terms
from pytorch_dyadic_czo.tensor import minimal_translation
from pytorch_dyadic_czo.utils import EntryOutOfRange

SEED = 4738
random.seed(SEED)
torch.manual_seed(SEED)

def manually_apply(T, f):
    # ⟨h_J, Tf⟩ = Σ_I T[J, I] ⟨h_I, f⟩ over the stored entries
    flat = haar_analyze(f).flat()
    out = torch.zeros_like(flat)
    for (row, col), value in T.entries.items():
        out[key_position(row, T.dim)] += value @ flat[key_position(col, T.dim)]
    return haar_synthesize(HaarCoefficients.from_flat(out, T.dim, T.level))

class TestHaarTensorOperator:
    def setup_method(self):
        self.generator = torch.Generator().manual_seed(SEED)

    def test_minimal_translation(self):
        assert minimal_translation(HaarKey(2, (3,), (1,)), HaarKey(2, (0,), (1,))) == (-1,)
        assert minimal_translation(HaarKey(2, (2,), (1,)), HaarKey(2, (0,), (1,))) == (2,)
        assert minimal_translation(HaarKey(3, (1, 6), (1, 0)), HaarKey(3, (0, 0), (1, 0))) == (1, -2)

    def test_identity(self):
        f = random_field(2, 2, 2, self.generator)
        assert HaarTensorOperator.identity(2, 2, 2)(f).values.numpy() == approx(f.values.numpy())

    def test_apply_matches_entries(self):
        T = random_banded_tensor(1, 3, 2, 1, self.generator)
        f = random_field(1, 3, 2, self.generator)
        assert T(f).values.numpy() == approx(manually_apply(T, f).values.numpy())

    def test_band_is_enforced(self):
        eye = torch.eye(1)
        T = HaarTensorOperator({(HaarKey(2, (1,), (1,)), HaarKey(2, (0,), (1,))): eye}, 1, 3, 1, band=1)
        assert len(T.entries) == 1
        with pytest.raises(EntryOutOfRange):
            HaarTensorOperator({(HaarKey(2, (2,), (1,)), HaarKey(2, (0,), (1,))): eye}, 1, 3, 1, band=1)
        with pytest.raises(EntryOutOfRange):
            HaarTensorOperator({(HaarKey(3, (0,), (1,)), HaarKey(0, (0,), (1,))): eye}, 1, 3, 1)
        with pytest.raises(EntryOutOfRange):
            HaarTensorOperator({(HaarKey(1, (1,), (0,)), HaarKey(0, (0,), (1,))): eye}, 1, 3, 1)

    def test_from_operator(self):
        S = random_shift(1, 3, 2, self.generator)
        T = HaarTensorOperator.from_operator(S, 1, 3, 2, tolerance=1e-14)
        f = random_field(1, 3, 2, self.generator)
        assert T(f).values.numpy() == approx(S(f).values.numpy(), abs=1e-12)

    def test_adjoint(self):
        T = random_banded_tensor(2, 2, 2, 1, self.generator)
        f, g = random_field(2, 2, 2, self.generator), random_field(2, 2, 2, self.generator)
        assert pairing(g, T(f)) == approx(pairing(T.H(g), f))

class TestFigiel:
    def setup_method(self):
        self.generator = torch.Generator().manual_seed(SEED)

    def test_total(self):
        for dim, band in ((1, 2), (2, 1)):
            T = random_banded_tensor(dim, 3, 2, band, self.generator)
            f, g = random_field(dim, 3, 2, self.generator), random_field(dim, 3, 2, self.generator)
            terms = figiel_terms(T, f, g)
            assert terms.total() == approx(pairing(g, apply_tensor(T, f)))

    def test_translations_respect_the_band(self):
        T = random_banded_tensor(1, 4, 1, 1, self.generator)
        f, g = random_field(1, 4, 1, self.generator), random_field(1, 4, 1, self.generator)
        terms = figiel_terms(T, f, g)
        assert terms.A == approx(sum(entry[0] for entry in terms.by_shift.values()))
        for m, (a, _, _) in terms.by_shift.items():
            if max(abs(s) for s in m) > 1:
                assert a == approx(0.0, abs=1e-12)

    def test_perfect_operator_has_no_translated_terms(self):
        P = random_perfect_czo(1, 3, 2, self.generator)
        T = HaarTensorOperator.from_perfect(P)
        f, g = random_field(1, 3, 2, self.generator), random_field(1, 3, 2, self.generator)
        terms = figiel_terms(T, f, g)
        assert terms.total() == approx(pairing(g, P(f)))
        assert terms.B0 == approx(0.0, abs=1e-10)
        assert terms.C0 == approx(0.0, abs=1e-10)
        for m, (a, b0, c0) in terms.by_shift.items():
            if any(m):
                assert abs(a) + abs(b0) + abs(c0) == approx(0.0, abs=1e-10)

class TestSamplers:
    def test_embed_block(self):
        symbol = random_field(1, 2, 2, torch.Generator().manual_seed(SEED))
        big = embed_block(symbol, 5)
        assert big.size == 5
        assert torch.equal(big.values[..., :2, :2], symbol.values)
        assert big.values[..., 2:, :].abs().max() == 0

    def test_seeded_draws_repeat(self):
        first = random_field(1, 3, 2, torch.Generator().manual_seed(SEED))
        second = random_field(1, 3, 2, torch.Generator().manual_seed(SEED))
        assert torch.equal(first.values, second.values)
        assert isinstance(first, MatrixField)
