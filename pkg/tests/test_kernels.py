import math
import random

import numpy as np
import pytest
from pytest import approx
import torch

from pytorch_dyadic_czo.grid import DyadicCube
from pytorch_dyadic_czo.kernels import SampledFunction
from pytorch_dyadic_czo.kernels import constant_kernel
from pytorch_dyadic_czo.kernels import decay_fit
from pytorch_dyadic_czo.kernels import haar_coeff_closed_form
from pytorch_dyadic_czo.kernels import haar_coeff_kernel
from pytorch_dyadic_czo.kernels import hilbert_kernel
from pytorch_dyadic_czo.kernels import hilbert_transform
from pytorch_dyadic_czo.kernels import matrix_kernel
from pytorch_dyadic_czo.kernels import principal_value
from pytorch_dyadic_czo.kernels import scaled_kernel
from pytorch_dyadic_czo.kernels import shift_average_hilbert
from pytorch_dyadic_czo.kernels import size_audit
from pytorch_dyadic_czo.kernels import smoothed_absolute_kernel
from pytorch_dyadic_czo.kernels import smoothed_hilbert_kernel
from pytorch_dyadic_czo.kernels import symmetrize
from pytorch_dyadic_czo.kernels import wbp_audit
from pytorch_dyadic_czo.utils import DegenerateInput
from pytorch_dyadic_czo.utils import InsufficientPoints
from pytorch_dyadic_czo.utils import QuadratureFailure
from pytorch_dyadic_czo.utils import ShapeMismatch
from pytorch_dyadic_czo.utils import SingularOverlap

SEED = 4738
random.seed(SEED)
torch.manual_seed(SEED)

def manually_even_bump(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < 0.25, (1.0 - 16.0 * x * x) ** 3, 0.0)

def manually_odd_bump(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < 0.25, x * (1.0 - 16.0 * x * x) ** 3, 0.0)

class TestKernelModels:
    def test_shapes(self):
        K = hilbert_kernel(size=3)
        values = K(np.array([1.0, 2.0]), 0.0)
        assert values.shape == (2, 3, 3)
        assert values[0] == approx(np.eye(3) / math.pi)

    def test_size_audit(self):
        pairs = np.array([[0.0, 0.5], [1.0, -3.0], [0.2, 0.21]])
        assert size_audit(hilbert_kernel(), pairs) == approx(1.0 / math.pi)
        assert size_audit(smoothed_hilbert_kernel(0.1), pairs) <= 1.0 / math.pi + 1e-12

    def test_symmetrize(self):
        even, odd = symmetrize(hilbert_kernel())
        x, y = np.array([0.3, 2.0]), np.array([0.1, -1.0])
        assert even(x, y) == approx(np.zeros((2, 1, 1)))
        assert odd(x, y) == approx(hilbert_kernel()(x, y))
        K = matrix_kernel(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.eye(2))
        even, odd = symmetrize(K)
        assert (even(x, y) + odd(x, y)) == approx(K(x, y))

    def test_scaled(self):
        K = scaled_kernel(hilbert_kernel(), 2.0)
        assert K(1.0, 0.0) == approx(2.0 * hilbert_kernel()(1.0, 0.0))
        assert K.size_constant == approx(2.0 / math.pi)

class TestHaarCoefficients:
    def test_closed_form_matches_quadrature(self):
        K = hilbert_kernel()
        for m in (2, 3, 4, -5):
            for eta in (0, 1):
                quadrature = haar_coeff_kernel(K, (0.0, 1.0), m, eta=eta)
                assert complex(quadrature.value[0, 0]).real == approx(haar_coeff_closed_form((0.0, 1.0), m, eta=eta),
                                                                     abs=1e-10)
                assert quadrature.error < 1e-8

    def test_principal_value_rule(self):
        K = hilbert_kernel()
        for m in (-1, 0, 1):
            with pytest.raises(SingularOverlap):
                haar_coeff_kernel(K, (0.0, 1.0), m)
            quadrature = haar_coeff_kernel(K, (0.0, 1.0), m, principal_value=True)
            assert complex(quadrature.value[0, 0]).real == approx(haar_coeff_closed_form((0.0, 1.0), m), abs=1e-7)

    def test_dyadic_cube_input(self):
        K = hilbert_kernel()
        cube = DyadicCube(1, 2, (1,))
        from_cube = haar_coeff_kernel(K, cube, 3).value
        from_interval = haar_coeff_kernel(K, (0.25, 0.25), 3).value
        assert from_cube == approx(from_interval)
        with pytest.raises(ShapeMismatch):
            haar_coeff_kernel(K, DyadicCube(2, 1, (0, 0)), 3)

    def test_scale_invariance(self):
        # homogeneous of degree −1
        assert haar_coeff_closed_form((0.0, 0.125), 6) == approx(haar_coeff_closed_form((0.0, 1.0), 6))

    def test_smooth_kernel_without_principal_value(self):
        K = smoothed_absolute_kernel(1.0)
        value = haar_coeff_kernel(K, (0.0, 1.0), 0).value
        assert np.isfinite(value).all()

class TestDecay:
    def test_hilbert_decay(self):
        fit = decay_fit(hilbert_kernel(), range(2, 65))
        assert -2.3 <= fit.exponent <= -1.7
        assert fit.r_squared >= 0.98
        assert len(fit.ms) == 63
        assert max(fit.errors) < 1e-8

    def test_too_few_points(self):
        with pytest.raises(InsufficientPoints):
            decay_fit(hilbert_kernel(), range(2, 7))

    def test_vanishing_coefficients(self):
        with pytest.raises(DegenerateInput):
            decay_fit(constant_kernel(), range(2, 12))

class TestWeakBoundedness:
    def test_odd_kernel(self):
        audit = wbp_audit(hilbert_kernel(), [(0.0, 1.0), (0.0, 0.5), DyadicCube(1, 3, (5,))])
        assert audit.value == approx(0.0, abs=1e-12)

    def test_even_kernel(self):
        audit = wbp_audit(smoothed_absolute_kernel(1.0), [(0.0, 1.0)])
        expected = 2.0 * (math.asinh(1.0) - (math.sqrt(2.0) - 1.0))
        assert audit.value == approx(expected, rel=1e-7)

    def test_no_refinement_budget(self):
        with pytest.raises(QuadratureFailure):
            wbp_audit(smoothed_absolute_kernel(1.0), [(0.0, 1.0)], max_refinements=0)

class TestHilbertTransform:
    def setup_method(self):
        self.f = SampledFunction.from_function(manually_even_bump, -1.0, 1.0, 512)

    def test_matches_principal_value(self):
        image = hilbert_transform(self.f)
        for i in (100, 230, 256, 300, 400):
            x = float(self.f.points[i])
            expected = principal_value(lambda y: float(manually_even_bump(y)), x, -0.25, 0.25)
            assert image.values[i] == approx(expected, abs=2e-3)

    def test_even_input_gives_odd_output(self):
        values = hilbert_transform(self.f).values
        assert values == approx(-values[::-1], abs=1e-12)

    def test_support_must_be_inside(self):
        with pytest.raises(DegenerateInput):
            hilbert_transform(SampledFunction.from_function(np.cos, -1.0, 1.0, 64))

    def test_sampled_function(self):
        assert self.f.count == 512
        assert self.f.h == approx(2.0 / 512)
        assert self.f.points[0] == approx(-1.0 + 1.0 / 512)
        with pytest.raises(ShapeMismatch):
            SampledFunction(1.0, 0.0, np.zeros(4))

class TestShiftAverage:
    def test_average_is_close_to_a_multiple(self):
        f = SampledFunction.from_function(manually_odd_bump, -1.0, 1.0, 512)
        result = shift_average_hilbert(f, 2000, SEED)
        assert result.fitted_scale != 0.0
        assert result.rel_error <= 0.10
        assert result.approx.count == 512

    def test_doubling_grids_does_not_increase_error(self):
        # the first 500 grids of the larger run are the grids of the smaller one
        f = SampledFunction.from_function(manually_odd_bump, -1.0, 1.0, 512)
        fewer = shift_average_hilbert(f, 500, SEED)
        more = shift_average_hilbert(f, 1000, SEED)
        assert more.rel_error <= fewer.rel_error + 0.02

    def test_zero_function(self):
        result = shift_average_hilbert(SampledFunction(-1.0, 1.0, np.zeros(64)), 10, SEED)
        assert result.rel_error == 0.0
        assert result.fitted_scale == 0.0
        assert not np.any(result.approx.values)

    def test_deterministic(self):
        f = SampledFunction.from_function(manually_odd_bump, -1.0, 1.0, 128)
        first = shift_average_hilbert(f, 20, SEED)
        second = shift_average_hilbert(f, 20, SEED)
        assert np.array_equal(first.approx.values, second.approx.values)
        assert first.fitted_scale == second.fitted_scale

    def test_power_of_two_samples(self):
        f = SampledFunction.from_function(manually_odd_bump, -1.0, 1.0, 96)
        with pytest.raises(ShapeMismatch):
            shift_average_hilbert(f, 4, SEED)
