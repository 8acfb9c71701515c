import logging
from typing import List, NamedTuple, Optional, Sequence

import torch

from pytorch_dyadic_czo.base_operator import BaseDyadicOperator
from pytorch_dyadic_czo.field import HaarCoefficients
from pytorch_dyadic_czo.field import MatrixField
from pytorch_dyadic_czo.field import _block_average
from pytorch_dyadic_czo.field import _merge_children
from pytorch_dyadic_czo.field import _split_children
from pytorch_dyadic_czo.field import cond_expect
from pytorch_dyadic_czo.field import conditional_expectations
from pytorch_dyadic_czo.field import haar_analyze
from pytorch_dyadic_czo.field import haar_synthesize
from pytorch_dyadic_czo.field import pairing
from pytorch_dyadic_czo.utils import NotAdapted
from pytorch_dyadic_czo.utils import ShapeMismatch
from pytorch_dyadic_czo.utils import first_signature
from pytorch_dyadic_czo.utils import signatures

from pytorch_dyadic_czo.utils import DTYPE

logger = logging.getLogger(__name__)

ADAPTEDNESS_TOLERANCE = 1e-12


def _differences(f: MatrixField) -> List[MatrixField]:
    """[𝔻_1 f, ..., 𝔻_L f] from one pass of conditional expectations."""
    expectations = conditional_expectations(f)
    return [expectations[k] - expectations[k - 1] for k in range(1, f.level + 1)]


def paraproduct(b: MatrixField, f: MatrixField) -> MatrixField:
    """π_b f = Σ_I 𝔻_I(b) 𝔼_I(f) = Σ_{k=1..L} 𝔻_k(b) 𝔼_{k−1}(f)."""
    b.check_compatible(f)
    expectations = conditional_expectations(f)
    result = f.like(torch.zeros_like(f.values))
    for k, diff in enumerate(_differences(b), start=1):
        result = result + diff @ expectations[k - 1]
    return result


def paraproduct_adjoint(b: MatrixField, f: MatrixField) -> MatrixField:
    """Σ_k 𝔼_{k−1}(𝔻_k(b) 𝔻_k(f)), the adjoint of f ↦ π_{b*} f."""
    b.check_compatible(f)
    result = f.like(torch.zeros_like(f.values))
    for k, (diff_b, diff_f) in enumerate(zip(_differences(b), _differences(f)), start=1):
        result = result + cond_expect(diff_b @ diff_f, k - 1)
    return result


def haar_multiplier(b: MatrixField, f: MatrixField) -> MatrixField:
    """Λ_b f = Σ_k 𝔻_k(b) 𝔼_k(f)."""
    b.check_compatible(f)
    expectations = conditional_expectations(f)
    result = f.like(torch.zeros_like(f.values))
    for k, diff in enumerate(_differences(b), start=1):
        result = result + diff @ expectations[k]
    return result


def r_operator(b: MatrixField, f: MatrixField) -> MatrixField:
    """R_b f = Σ_k 𝔼_{k−1}(b) 𝔻_k(f) + 𝔼_0(b) 𝔼_0(f), so that b f = Λ_b f + R_b f."""
    b.check_compatible(f)
    expectations = conditional_expectations(b)
    result = expectations[0] @ cond_expect(f, 0)
    for k, diff in enumerate(_differences(f), start=1):
        result = result + expectations[k - 1] @ diff
    return result


def cube_averages(b: MatrixField, j: int) -> torch.Tensor:
    """
    Returns:
        averages: (2**j,)*n + (d, d), ⟨b⟩_I for the level-j cubes in aligned labels
    """
    return _block_average(b.aligned(), b.dim, b.level, j)


def r_operator_haar(b: MatrixField, f: MatrixField) -> MatrixField:
    """R_b f as Σ_{I, θ} ⟨b⟩_I ⟨h^θ_I, f⟩ h^θ_I + 𝔼_0(b) 𝔼_0(f)."""
    b.check_compatible(f)
    coefficients = haar_analyze(f)
    details = [cube_averages(b, j).unsqueeze(b.dim) @ detail for j, detail in enumerate(coefficients.details)]
    average = cube_averages(b, 0).reshape(b.size, b.size) @ coefficients.average
    return haar_synthesize(HaarCoefficients(average, details, f.dim, f.shift))


def check_adapted(xi: Sequence[MatrixField], tolerance: float = ADAPTEDNESS_TOLERANCE) -> None:
    for k, xi_k in enumerate(xi):
        scale = max(1.0, xi_k.max_abs())
        if (xi_k - cond_expect(xi_k, k)).max_abs() > tolerance * scale:
            raise NotAdapted("ξ_{} is not constant on level-{} cubes".format(k, k))


def mart_transform(xi: Sequence[MatrixField], f: MatrixField) -> MatrixField:
    """M_ξ f = Σ_{k=1..L} ξ_{k−1} 𝔻_k(f); ``xi`` lists ξ_0, ..., ξ_{L−1}."""
    if len(xi) != f.level:
        raise ShapeMismatch("need one ξ_k per level 0..L-1")
    for xi_k in xi:
        xi_k.check_compatible(f)
    check_adapted(xi)
    result = f.like(torch.zeros_like(f.values))
    for xi_k, diff in zip(xi, _differences(f)):
        result = result + xi_k @ diff
    return result


def summation_identity(f: MatrixField, g: MatrixField, ell: int):
    """Both sides of Σ_{k≤ℓ} 𝔼_{k−1}(f)𝔻_k(g*) + 𝔻_k(f)𝔼_{k−1}(g*)
    = 𝔼_ℓ(f)𝔼_ℓ(g*) − Σ_{k≤ℓ} 𝔻_k(f)𝔻_k(g*) − 𝔼_0(f)𝔼_0(g*).

    Returns:
        lhs, rhs, coarse term 𝔼_0(f)𝔼_0(g*)
    """
    f.check_compatible(g)
    g_star = g.adjoint()
    expect_f = conditional_expectations(f)
    expect_g = conditional_expectations(g_star)
    lhs = f.like(torch.zeros_like(f.values))
    squares = f.like(torch.zeros_like(f.values))
    for k in range(1, ell + 1):
        diff_f = expect_f[k] - expect_f[k - 1]
        diff_g = expect_g[k] - expect_g[k - 1]
        lhs = lhs + expect_f[k - 1] @ diff_g + diff_f @ expect_g[k - 1]
        squares = squares + diff_f @ diff_g
    coarse = expect_f[0] @ expect_g[0]
    rhs = expect_f[ell] @ expect_g[ell] - squares - coarse
    return lhs, rhs, coarse


class Paraproduct(BaseDyadicOperator):
    def __init__(self, b: MatrixField) -> None:
        super().__init__(b.dim, b.level, b.size, b.shift)
        self.b = b

    def forward(self, f: MatrixField) -> MatrixField:
        return paraproduct(self.b, f)

    def adjoint(self) -> BaseDyadicOperator:
        return ParaproductAdjoint(self.b.adjoint())


class ParaproductAdjoint(BaseDyadicOperator):
    def __init__(self, b: MatrixField) -> None:
        super().__init__(b.dim, b.level, b.size, b.shift)
        self.b = b

    def forward(self, f: MatrixField) -> MatrixField:
        return paraproduct_adjoint(self.b, f)

    def adjoint(self) -> BaseDyadicOperator:
        return Paraproduct(self.b.adjoint())


class HaarMultiplier(BaseDyadicOperator):
    def __init__(self, b: MatrixField) -> None:
        super().__init__(b.dim, b.level, b.size, b.shift)
        self.b = b

    def forward(self, f: MatrixField) -> MatrixField:
        return haar_multiplier(self.b, f)

    def adjoint(self) -> BaseDyadicOperator:
        return HaarMultiplierAdjoint(self.b.adjoint())


class HaarMultiplierAdjoint(BaseDyadicOperator):
    """Λ_b* g = Σ_k 𝔼_{k−1}(𝔻_k(b*) 𝔻_k g) + 𝔻_k(𝔻_k(b*) g), built from b* directly."""
    def __init__(self, b_star: MatrixField) -> None:
        super().__init__(b_star.dim, b_star.level, b_star.size, b_star.shift)
        self.b_star = b_star

    def forward(self, g: MatrixField) -> MatrixField:
        result = paraproduct_adjoint(self.b_star, g)
        for k, diff in enumerate(_differences(self.b_star), start=1):
            product = diff @ g
            result = result + cond_expect(product, k) - cond_expect(product, k - 1)
        return result

    def adjoint(self) -> BaseDyadicOperator:
        return HaarMultiplier(self.b_star.adjoint())


class MartingaleTransform(BaseDyadicOperator):
    def __init__(self, xi: Sequence[MatrixField]) -> None:
        first = xi[0]
        super().__init__(first.dim, len(xi), first.size, first.shift)
        check_adapted(xi)
        self.xi = list(xi)

    def forward(self, f: MatrixField) -> MatrixField:
        return mart_transform(self.xi, f)

    def adjoint(self) -> BaseDyadicOperator:
        # 𝔻_k commutes with left multiplication by level-(k−1) measurable ξ
        return MartingaleTransform([xi_k.adjoint() for xi_k in self.xi])

    def sup_norm(self) -> float:
        return max(float(torch.linalg.matrix_norm(xi_k.values, ord=2).max()) for xi_k in self.xi)


class LemmaTerms(NamedTuple):
    total: complex
    martingale: complex
    adjoint_paraproduct: complex
    paraproduct: complex


class PerfectDyadicCZO(BaseDyadicOperator):
    """Perfect dyadic Calderón–Zygmund operator from its triple (ξ, T1, (T*1)*).

    Parameters:
        xi: per cube level j = 0..L-1, (2**j,)*n + (2**n - 1, d, d) diagonal entries ⟨h^θ_I, T h^θ_I⟩
        b_col: T1
        b_row: (T*1)*
    For n > 1 only diagonal (θ = η) transform entries are represented.
    """
    def __init__(self, xi: List[torch.Tensor], b_col: MatrixField, b_row: MatrixField) -> None:
        super().__init__(b_col.dim, b_col.level, b_col.size, b_col.shift)
        b_col.check_compatible(b_row)
        HaarCoefficients(torch.zeros(b_col.size, b_col.size, dtype=DTYPE), xi, b_col.dim).check_layout()
        self.xi = [torch.as_tensor(x, dtype=DTYPE) for x in xi]
        self.b_col = b_col
        self.b_row = b_row

    def transform_part(self, f: MatrixField) -> MatrixField:
        """Σ_{I, θ} ⟨h^θ_I, T h^θ_I⟩⟨h^θ_I, f⟩ h^θ_I."""
        self.check_domain(f)
        coefficients = haar_analyze(f)
        details = [x @ c for x, c in zip(self.xi, coefficients.details)]
        average = torch.zeros_like(coefficients.average)
        return haar_synthesize(HaarCoefficients(average, details, f.dim, f.shift))

    def forward(self, f: MatrixField) -> MatrixField:
        return (self.transform_part(f)
                + paraproduct_adjoint(self.b_row, f)
                + paraproduct(self.b_col, f))

    def adjoint(self) -> "PerfectDyadicCZO":
        xi = [x.conj().transpose(-1, -2) for x in self.xi]
        return PerfectDyadicCZO(xi, self.b_row.adjoint(), self.b_col.adjoint())

    def is_symmetric(self, tolerance: float = 1e-12) -> bool:
        """(T1)* = T*1, i.e. b_col = b_row."""
        return (self.b_col - self.b_row).max_abs() <= tolerance

    def symbol(self) -> List[MatrixField]:
        """ξ_k = Σ_{I ∈ D_k} ⟨h_I, T h_I⟩ 1_I for k = 0..L-1 (n = 1)."""
        if self.dim != 1:
            raise ShapeMismatch("the martingale-transform symbol is defined for n = 1")
        fields = []
        carrier = self.zero_field()
        for j, x in enumerate(self.xi):
            block = 1 << (self.level - j)
            values = x[:, 0].repeat_interleave(block, dim=0)
            fields.append(carrier.from_aligned(values))
        return fields

    def lemma_terms(self, f: MatrixField, g: MatrixField) -> LemmaTerms:
        """⟨⟨g, Tf⟩⟩ and its three bracket terms, each evaluated without applying T."""
        self.check_domain(f)
        coefficients_f = haar_analyze(f)
        coefficients_g = haar_analyze(g)
        martingale = sum(complex(torch.einsum("...ab,...ab->", cg.conj(), x @ cf))
                         for x, cf, cg in zip(self.xi, coefficients_f.details, coefficients_g.details))
        expect_g = conditional_expectations(g)
        expect_f = conditional_expectations(f)
        diffs_row = _differences(self.b_row)
        diffs_col = _differences(self.b_col)
        diffs_f = _differences(f)
        diffs_g = _differences(g)
        adjoint_part = sum(pairing(expect_g[k - 1], diffs_row[k - 1] @ diffs_f[k - 1])
                           for k in range(1, f.level + 1))
        paraproduct_part = sum(pairing(diffs_g[k - 1], diffs_col[k - 1] @ expect_f[k - 1])
                               for k in range(1, f.level + 1))
        total = pairing(g, self(f))
        return LemmaTerms(total, complex(martingale), complex(adjoint_part), complex(paraproduct_part))


def apply_perfect(T: PerfectDyadicCZO, f: MatrixField) -> MatrixField:
    return T(f)


def petermichl_signs(level: int) -> List[torch.Tensor]:
    """ε_I = +1 on left children, −1 on right children (n = 1); entry j is for cube level j."""
    signs = []
    for j in range(level):
        index = torch.arange(1 << j)
        signs.append((1 - 2 * (index % 2)).to(torch.float64).reshape(-1, 1))
    return signs


class DyadicShift(BaseDyadicOperator):
    """Sf = Σ_{I, θ≠0} ε^θ_I ⟨h^{θ₀}_I, f⟩ h^θ_{Î}.

    ``signs[j]`` has shape (2**j,)*n + (2**n - 1,); level-0 coefficients have no
    parent and are mapped to zero, as is the coarse average.
    """
    def __init__(self, signs: List[torch.Tensor], dim: int, size: int,
                 shift=None) -> None:
        super().__init__(dim, len(signs), size, shift)
        self.signs = [torch.as_tensor(s, dtype=torch.float64) for s in signs]
        self.theta0 = signatures(dim).index(first_signature(dim))

    def shift_coefficients(self, coefficients: HaarCoefficients,
                           weights: Optional[List[torch.Tensor]] = None) -> HaarCoefficients:
        """Apply the shift on Haar data; ``weights[j]`` left-multiplies the θ₀ inputs of level j."""
        n = self.dim
        details = [torch.zeros_like(d) for d in coefficients.details]
        for j in range(1, self.level):
            source = coefficients.details[j][..., self.theta0, :, :]                # (2**j,)*n + (d, d)
            if weights is not None:
                source = weights[j] @ source
            contribution = self.signs[j].to(DTYPE)[..., None, None] * source.unsqueeze(n)
            details[j - 1] = _split_children(contribution, n).sum(dim=n)
        average = torch.zeros_like(coefficients.average)
        return HaarCoefficients(average, details, n, coefficients.shift)

    def forward(self, f: MatrixField) -> MatrixField:
        self.check_domain(f)
        return haar_synthesize(self.shift_coefficients(haar_analyze(f)))

    def adjoint(self) -> BaseDyadicOperator:
        return DyadicShiftAdjoint(self)


class DyadicShiftAdjoint(BaseDyadicOperator):
    def __init__(self, shift_operator: DyadicShift) -> None:
        super().__init__(shift_operator.dim, shift_operator.level, shift_operator.size, shift_operator.shift)
        self.shift_operator = shift_operator

    def forward(self, f: MatrixField) -> MatrixField:
        self.check_domain(f)
        S = self.shift_operator
        n = self.dim
        coefficients = haar_analyze(f)
        details = [torch.zeros_like(d) for d in coefficients.details]
        for j in range(1, self.level):
            parents = coefficients.details[j - 1]                                     # (2**(j-1),)*n + (T, d, d)
            children = _merge_children(parents.unsqueeze(n).expand(
                parents.shape[:n] + (1 << n,) + parents.shape[n:]), n)                 # (2**j,)*n + (T, d, d)
            details[j][..., S.theta0, :, :] = (S.signs[j].to(DTYPE)[..., None, None] * children).sum(dim=n)
        average = torch.zeros_like(coefficients.average)
        return haar_synthesize(HaarCoefficients(average, details, n, f.shift))

    def adjoint(self) -> BaseDyadicOperator:
        return self.shift_operator


def dyadic_shift(S: DyadicShift, f: MatrixField) -> MatrixField:
    return S(f)


def commutator(S: BaseDyadicOperator, b: MatrixField, f: MatrixField) -> MatrixField:
    """[S, b] f = S(b f) − b S(f)."""
    b.check_compatible(f)
    return S(b @ f) - b @ S(f)


def commutator_formula(S: DyadicShift, b: MatrixField, f: MatrixField) -> MatrixField:
    """Σ ⟨h^η_J, S h^θ_I⟩ (⟨b⟩_I − ⟨b⟩_J) ⟨h^θ_I, f⟩ h^η_J; only parent pairs J = Î occur."""
    b.check_compatible(f)
    S.check_domain(f)
    n = f.dim
    weights = [None]
    for j in range(1, f.level):
        own = cube_averages(b, j)
        parent = cube_averages(b, j - 1)
        for axis in range(n):
            parent = parent.repeat_interleave(2, dim=axis)
        weights.append(own - parent)
    return haar_synthesize(S.shift_coefficients(haar_analyze(f), weights))


class CommutatorAudit(NamedTuple):
    residual: MatrixField
    coarse: MatrixField
    error: float


def commutator_audit(S: DyadicShift, b: MatrixField, f: MatrixField) -> CommutatorAudit:
    """[S, b]f − [S, Λ_b]f − formula, against the coarse correction S(𝔼_0b 𝔼_0f) − 𝔼_0b 𝔼_0(Sf)."""
    full = commutator(S, b, f)
    multiplier_part = S(haar_multiplier(b, f)) - haar_multiplier(b, S(f))
    residual = full - multiplier_part - commutator_formula(S, b, f)
    mean_b = cond_expect(b, 0)
    coarse = S(mean_b @ cond_expect(f, 0)) - mean_b @ cond_expect(S(f), 0)
    error = (residual - coarse).max_abs()
    logger.debug("commutator audit error %.3e", error)
    return CommutatorAudit(residual, coarse, error)
