import logging
import math
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Sequence, Tuple, Union

import numpy as np
import torch
from scipy import integrate
from scipy.special import roots_legendre
from scipy.stats import linregress

from pytorch_dyadic_czo.field import MatrixField
from pytorch_dyadic_czo.grid import DyadicCube
from pytorch_dyadic_czo.grid import ShiftStream
from pytorch_dyadic_czo.operators import DyadicShift
from pytorch_dyadic_czo.operators import petermichl_signs
from pytorch_dyadic_czo.utils import DegenerateInput
from pytorch_dyadic_czo.utils import InsufficientPoints
from pytorch_dyadic_czo.utils import QuadratureFailure
from pytorch_dyadic_czo.utils import ShapeMismatch
from pytorch_dyadic_czo.utils import SingularOverlap

logger = logging.getLogger(__name__)

GAUSS_ORDER = 10
GRADING_RATIO = 0.15
MIN_FIT_POINTS = 8

Interval = Union[DyadicCube, Tuple[float, float]]


@dataclass(frozen=True)
class KernelModel:
    """Kernel K(x, y) on ℝ × ℝ with d×d matrix values.

    ``evaluate`` maps broadcastable float arrays x, y to an array of shape
    x.shape + (d, d). ``singular`` marks kernels that blow up on the diagonal.
    """
    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    size: int = 1
    dim: int = 1
    alpha: float = 1.0
    size_constant: float = 1.0
    regularity_constant: float = 1.0
    singular: bool = True
    name: str = "kernel"

    def __call__(self, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        return np.asarray(self.evaluate(x, y), dtype=np.complex128).reshape(x.shape + (self.size, self.size))


def _scalar(values: np.ndarray, size: int) -> np.ndarray:
    return values[..., None, None] * np.eye(size)


def hilbert_kernel(size: int = 1) -> KernelModel:
    """K(x, y) = 1/(π(x − y)) · Id."""
    return KernelModel(lambda x, y: _scalar(1.0 / (np.pi * (x - y)), size),
                       size=size, size_constant=1.0 / np.pi, regularity_constant=2.0 / np.pi,
                       singular=True, name="hilbert")


def smoothed_hilbert_kernel(epsilon: float, size: int = 1) -> KernelModel:
    """(x − y) / (π((x − y)² + ε²)), odd and bounded."""
    def evaluate(x, y):
        t = x - y
        return _scalar(t / (np.pi * (t * t + epsilon * epsilon)), size)
    return KernelModel(evaluate, size=size, size_constant=1.0 / np.pi, regularity_constant=2.0 / np.pi,
                       singular=False, name="smoothed-hilbert")


def smoothed_absolute_kernel(epsilon: float, size: int = 1) -> KernelModel:
    """1 / √((x − y)² + ε²), the smoothed |x − y|^{-1}; even and bounded."""
    def evaluate(x, y):
        t = x - y
        return _scalar(1.0 / np.sqrt(t * t + epsilon * epsilon), size)
    return KernelModel(evaluate, size=size, size_constant=1.0, regularity_constant=1.0,
                       singular=False, name="smoothed-absolute")


def constant_kernel(value: complex = 1.0, size: int = 1) -> KernelModel:
    return KernelModel(lambda x, y: _scalar(np.full(x.shape, value, dtype=np.complex128), size),
                       size=size, size_constant=math.inf, singular=False, name="constant")


def matrix_kernel(odd: np.ndarray, even: np.ndarray, epsilon: float = 1.0) -> KernelModel:
    """A/(π(x − y)) + B/√((x − y)² + ε²) for d×d matrices A (odd part) and B (even part)."""
    odd = np.asarray(odd, dtype=np.complex128)
    even = np.asarray(even, dtype=np.complex128)

    def evaluate(x, y):
        t = x - y
        return (1.0 / (np.pi * t))[..., None, None] * odd + (1.0 / np.sqrt(t * t + epsilon * epsilon))[..., None, None] * even
    bound = np.linalg.norm(odd, 2) / np.pi + np.linalg.norm(even, 2)
    return KernelModel(evaluate, size=odd.shape[-1], size_constant=float(bound), singular=True, name="matrix")


def scaled_kernel(K: KernelModel, factor: complex) -> KernelModel:
    return KernelModel(lambda x, y: factor * K(x, y), K.size, K.dim, K.alpha,
                       abs(factor) * K.size_constant, abs(factor) * K.regularity_constant,
                       K.singular, "{}*{}".format(factor, K.name))


def symmetrize(K: KernelModel) -> Tuple[KernelModel, KernelModel]:
    """(K_e, K_o) with K_e(x, y) = (K(x, y) + K(y, x))/2 and K_o = K − K_e."""
    even = KernelModel(lambda x, y: (K(x, y) + K(y, x)) / 2, K.size, K.dim, K.alpha,
                       K.size_constant, K.regularity_constant, K.singular, K.name + ":even")
    odd = KernelModel(lambda x, y: (K(x, y) - K(y, x)) / 2, K.size, K.dim, K.alpha,
                      K.size_constant, K.regularity_constant, K.singular, K.name + ":odd")
    return even, odd


def size_audit(K: KernelModel, pairs: np.ndarray) -> float:
    """max over sample pairs of ‖K(x, y)‖ · |x − y|^n, to compare with K.size_constant."""
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    x, y = pairs[:, 0], pairs[:, 1]
    norms = np.linalg.norm(K(x, y), ord=2, axis=(-2, -1))
    return float((norms * np.abs(x - y) ** K.dim).max())


class KernelIntegral(NamedTuple):
    value: np.ndarray
    error: float


def _legendre(order: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = roots_legendre(order)
    return (nodes + 1.0) / 2.0, weights / 2.0


def _uniform_rule(low: float, length: float, panels: int) -> Tuple[np.ndarray, np.ndarray]:
    base, weights = _legendre(GAUSS_ORDER)
    width = length / panels
    starts = low + width * np.arange(panels)
    return (starts[:, None] + width * base[None, :]).ravel(), np.tile(weights * width, panels)


def _graded_rule(length: float, layers: int) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss rule on [0, length] with panels shrinking geometrically toward 0."""
    base, weights = _legendre(GAUSS_ORDER)
    breaks = np.concatenate([[0.0], length * GRADING_RATIO ** np.arange(layers, -1, -1)])
    widths = np.diff(breaks)
    nodes = (breaks[:-1, None] + widths[:, None] * base[None, :]).ravel()
    return nodes, (widths[:, None] * weights[None, :]).ravel()


def _weighted_sum(K: KernelModel, x: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    terms = np.asarray(w)[..., None, None] * K(x, y)
    return terms.sum(axis=tuple(range(terms.ndim - 2)))


def _square_integral(K: KernelModel, start: float, length: float, level: int) -> np.ndarray:
    """∬ over [start, start+length)² by pairing the nodes (y + t, y) and (y, y + t)."""
    t, wt = _graded_rule(length, 4 << level)
    s, ws = _uniform_rule(0.0, 1.0, 1 << level)
    y = start + (length - t)[:, None] * s[None, :]
    x = y + t[:, None]
    w = wt[:, None] * ws[None, :] * (length - t)[:, None]
    return _weighted_sum(K, x, y, w) + _weighted_sum(K, y, x, w)


def _corner_integral(K: KernelModel, x0: float, y0: float, length: float, level: int) -> np.ndarray:
    """∬ over two squares that share one corner on the diagonal, graded toward that corner."""
    u, wu = _graded_rule(length, 4 << level)
    if x0 > y0:
        x, y = x0 + u, x0 - u
    else:
        x, y = y0 - u, y0 + u
    return _weighted_sum(K, x[:, None], y[None, :], wu[:, None] * wu[None, :])


def _rectangle_integral(K: KernelModel, x0: float, y0: float, length: float, level: int) -> np.ndarray:
    x, wx = _uniform_rule(x0, length, 1 << level)
    y, wy = _uniform_rule(y0, length, 1 << level)
    return _weighted_sum(K, x[:, None], y[None, :], wx[:, None] * wy[None, :])


def _piece_integral(K: KernelModel, x0: float, y0: float, length: float, level: int) -> np.ndarray:
    offset = int(round((x0 - y0) / length))
    if offset == 0:
        return _square_integral(K, x0, length, level)
    if abs(offset) == 1:
        return _corner_integral(K, x0, y0, length, level)
    return _rectangle_integral(K, x0, y0, length, level)


def _interval(I: Interval) -> Tuple[float, float]:
    if isinstance(I, DyadicCube):
        if I.dim != 1:
            raise ShapeMismatch("kernel integrals are implemented for n = 1")
        return float(I.corner()[0]), float(I.side_length)
    start, length = I
    return float(start), float(length)


def _haar_halves(start: float, length: float, signature: int) -> List[Tuple[float, float]]:
    """(start, amplitude) of the two half-intervals of h^θ_I, θ ∈ {0, 1}."""
    amplitude = length ** -0.5
    return [(start, amplitude), (start + length / 2, amplitude if signature == 0 else -amplitude)]


def _coefficient(K: KernelModel, start: float, length: float, m: int,
                 eta: int, theta: int, level: int) -> np.ndarray:
    half = length / 2
    total = np.zeros((K.size, K.size), dtype=np.complex128)
    for x0, a in _haar_halves(start + m * length, length, eta):
        for y0, b in _haar_halves(start, length, theta):
            total = total + a * b * _piece_integral(K, x0, y0, half, level)
    return total


def haar_coeff_kernel(K: KernelModel,
                      I: Interval,
                      m: int,
                      quadrature_level: int = 2,
                      eta: int = 1,
                      theta: int = 1,
                      principal_value: bool = False) -> KernelIntegral:
    """⟨h^η_{I∔m}, T h^θ_I⟩ = ∬ h^η_{I∔m}(x) K(x, y) h^θ_I(y) dy dx.

    Touching supports (|m| ≤ 1) of a singular kernel need ``principal_value``:
    diagonal squares are integrated over pairs (y + t, y), (y, y + t), so the
    odd part cancels node by node. The error is the change under one
    refinement doubling.
    """
    if K.dim != 1:
        raise ShapeMismatch("kernel integrals are implemented for n = 1")
    start, length = _interval(I)
    if abs(m) <= 1 and K.singular and not principal_value:
        raise SingularOverlap("supports of h_(I+{}) and h_I touch; select the principal-value rule".format(m))
    coarse = _coefficient(K, start, length, m, eta, theta, quadrature_level)
    fine = _coefficient(K, start, length, m, eta, theta, quadrature_level + 1)
    return KernelIntegral(fine, float(np.abs(fine - coarse).max()))


def _x_log_x(u: float) -> float:
    return 0.0 if u == 0.0 else u * math.log(abs(u))


def _hilbert_block(x0: float, x1: float, y0: float, y1: float) -> float:
    """(p.v.) ∬_{[x0,x1]×[y0,y1]} dy dx / (π(x − y)) from the antiderivative u log|u|."""
    return (_x_log_x(x1 - y0) - _x_log_x(x0 - y0) - _x_log_x(x1 - y1) + _x_log_x(x0 - y1)) / math.pi


def haar_coeff_closed_form(I: Interval, m: int, eta: int = 1, theta: int = 1) -> float:
    """Exact Hilbert-kernel coefficient ⟨h^η_{I∔m}, H h^θ_I⟩."""
    start, length = _interval(I)
    half = length / 2
    total = 0.0
    for x0, a in _haar_halves(start + m * length, length, eta):
        for y0, b in _haar_halves(start, length, theta):
            total += a * b * _hilbert_block(x0, x0 + half, y0, y0 + half)
    return total


class DecayFit(NamedTuple):
    exponent: float
    intercept: float
    r_squared: float
    ms: Tuple[int, ...]
    norms: Tuple[float, ...]
    errors: Tuple[float, ...]


def coefficient_norm(K: KernelModel, I: Interval, m: int, quadrature_level: int = 2) -> Tuple[float, float]:
    """max over η ∈ {0, 1} of ‖⟨h^η_{I∔m}, T h_I⟩‖, with its quadrature error."""
    best, error = 0.0, 0.0
    for eta in (0, 1):
        integral = haar_coeff_kernel(K, I, m, quadrature_level, eta=eta, theta=1)
        norm = float(np.linalg.norm(integral.value, 2))
        if norm >= best:
            best, error = norm, integral.error
    return best, error


def decay_fit(K: KernelModel,
              m_range: Sequence[int],
              I: Interval = (0.0, 1.0),
              quadrature_level: int = 2) -> DecayFit:
    """Least-squares slope of log‖coefficient‖ against log(1 + |m|)."""
    ms = tuple(int(m) for m in m_range)
    if len(ms) < MIN_FIT_POINTS:
        raise InsufficientPoints("decay fit needs at least {} translations, got {}".format(MIN_FIT_POINTS, len(ms)))
    norms, errors = [], []
    for m in ms:
        norm, error = coefficient_norm(K, I, m, quadrature_level)
        if norm == 0.0:
            raise DegenerateInput("coefficient at m={} vanishes".format(m))
        norms.append(norm)
        errors.append(error)
    fit = linregress(np.log1p(np.abs(ms)), np.log(norms))
    logger.info("decay fit for %s: exponent %.4f, r^2 %.5f", K.name, fit.slope, fit.rvalue ** 2)
    return DecayFit(float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2),
                    ms, tuple(norms), tuple(errors))


class WbpAudit(NamedTuple):
    value: float
    error: float


def wbp_audit(K: KernelModel,
              cubes: Sequence[Interval],
              quadrature_level: int = 2,
              rtol: float = 1e-8,
              max_refinements: int = 4) -> WbpAudit:
    """max over cubes of |I|^{-1} ‖p.v. ∬_{I×I} K(x, y) dy dx‖."""
    best, best_error = 0.0, 0.0
    for cube in cubes:
        start, length = _interval(cube)
        previous = _square_integral(K, start, length, quadrature_level)
        for level in range(quadrature_level + 1, quadrature_level + max_refinements + 1):
            current = _square_integral(K, start, length, level)
            change = float(np.abs(current - previous).max())
            if change <= rtol * max(1.0, float(np.abs(current).max())):
                break
            previous = current
        else:
            raise QuadratureFailure("diagonal integral on [{}, {}) does not stabilize".format(start, start + length))
        value = float(np.linalg.norm(current, 2)) / length
        if value >= best:
            best, best_error = value, change / length
    return WbpAudit(best, best_error)


@dataclass(frozen=True)
class SampledFunction:
    """Samples at the N cell centers of a uniform grid on [low, high); values (N,) or (N, d, d)."""
    low: float
    high: float
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim not in (1, 3) or values.shape[0] < 2:
            raise ShapeMismatch("samples must have shape (N,) or (N, d, d) with N ≥ 2")
        if not self.high > self.low:
            raise ShapeMismatch("empty box [{}, {})".format(self.low, self.high))
        object.__setattr__(self, "values", values)

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return (self.high - self.low) / self.count

    @property
    def points(self) -> np.ndarray:
        return self.low + self.h * (np.arange(self.count) + 0.5)

    def like(self, values: np.ndarray) -> "SampledFunction":
        return SampledFunction(self.low, self.high, values)

    def support_inside(self) -> bool:
        return not np.any(self.values[0]) and not np.any(self.values[-1])

    def l2_norm(self) -> float:
        return float(np.sqrt((np.abs(self.values) ** 2).sum() * self.h))

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray],
                      low: float, high: float, count: int) -> "SampledFunction":
        points = low + (high - low) / count * (np.arange(count) + 0.5)
        return cls(low, high, np.asarray(fn(points)))


def _interpolation_weights(count: int) -> np.ndarray:
    """w(k) = p.v. ∫ (1 − |s|)_+ / (k − s) ds for k = −(N−1), ..., N−1."""
    k = np.arange(-(count - 1), count, dtype=np.float64)
    phi = np.vectorize(_x_log_x)
    return phi(k + 1) - 2 * phi(k) + phi(k - 1)


def hilbert_transform(f: SampledFunction) -> SampledFunction:
    """(1/π) p.v. ∫ f(y)/(x − y) dy at the sample points, exact for the piecewise-linear interpolant."""
    if not f.support_inside():
        raise DegenerateInput("samples must vanish at both ends of the box")
    count = f.count
    weights = _interpolation_weights(count) / np.pi
    flat = f.values.reshape(count, -1)
    columns = [np.convolve(flat[:, c], weights)[count - 1:2 * count - 1] for c in range(flat.shape[1])]
    return f.like(np.stack(columns, axis=-1).reshape(f.values.shape))


def principal_value(fn: Callable[[float], float], x: float, low: float, high: float) -> float:
    """(1/π) p.v. ∫_low^high fn(y)/(x − y) dy by adaptive quadrature with Cauchy weight."""
    if low < x < high:
        value, _ = integrate.quad(fn, low, high, weight="cauchy", wvar=x, limit=200)
        return -value / math.pi
    value, _ = integrate.quad(lambda y: fn(y) / (x - y), low, high, limit=200)
    return value / math.pi


class ShiftAverage(NamedTuple):
    approx: SampledFunction
    fitted_scale: float
    rel_error: float


def _shifted_image(f: SampledFunction, signs: List[torch.Tensor], stream: ShiftStream, dilation: float) -> np.ndarray:
    """Sample values of the dyadic shift in the grid dilated by ``dilation`` about the box center."""
    points = f.points
    center = (f.low + f.high) / 2
    dilated = np.interp(center + (points - center) * dilation, points, f.values.real, left=0.0, right=0.0)
    if np.iscomplexobj(f.values):
        dilated = dilated + 1j * np.interp(center + (points - center) * dilation, points, f.values.imag,
                                           left=0.0, right=0.0)
    field = MatrixField(torch.as_tensor(dilated)[:, None, None], 1, stream)
    image = DyadicShift(signs, 1, 1, stream)(field).values[:, 0, 0].numpy()
    lookup = np.floor((center + (points - center) / dilation - f.low) / f.h).astype(np.int64)
    return image[np.clip(lookup, 0, f.count - 1)]


def shift_average_hilbert(f: SampledFunction, grids: int, seed: int, dilate: bool = True) -> ShiftAverage:
    """Average of the Petermichl shift over ``grids`` random dyadic grids, against λ·Hf.

    Each grid draws its shift bits and a log-uniform dilation r ∈ [1, 2) from its
    own spawned seed. λ is the least-squares scale of Hf onto the average.
    Runs with the same ``seed`` share grids: the first N grids of a longer run
    are exactly the grids of the run with ``grids`` = N.
    """
    if f.values.ndim != 1:
        raise ShapeMismatch("shift averaging is implemented for scalar samples")
    count = f.count
    if count & (count - 1):
        raise ShapeMismatch("sample count must be a power of two")
    level = count.bit_length() - 1
    signs = petermichl_signs(level)
    total = np.zeros(count, dtype=np.complex128)
    for child in np.random.SeedSequence(seed).spawn(grids):
        rng = np.random.default_rng(child)
        stream = ShiftStream(1, rng.integers(0, 2, size=(level, 1)))
        dilation = 2.0 ** rng.random() if dilate else 1.0
        total += _shifted_image(f, signs, stream, dilation)
    average = total / grids
    target = hilbert_transform(f).values
    energy = float(np.vdot(target, target).real)
    scale = float(np.vdot(target, average).real) / energy if energy > 0 else 0.0
    norm = float(np.linalg.norm(average))
    rel_error = float(np.linalg.norm(scale * target - average)) / norm if norm > 0 else 0.0
    logger.info("shift average over %d grids: lambda %.6f, relative error %.4f", grids, scale, rel_error)
    return ShiftAverage(f.like(average), scale, rel_error)
