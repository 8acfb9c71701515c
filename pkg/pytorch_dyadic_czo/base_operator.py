from abc import abstractmethod
from typing import Optional

import torch
import torch.nn as nn

from pytorch_dyadic_czo.field import MatrixField
from pytorch_dyadic_czo.grid import ShiftStream
from pytorch_dyadic_czo.utils import ShapeMismatch


class BaseDyadicOperator(nn.Module):
    """BaseDyadicOperator

    A linear map on MatrixFields of a fixed domain (n, L, d, grid). Subclasses
    implement ``forward``; ``H`` is the adjoint under ⟨⟨·,·⟩⟩.
    """
    def __init__(self, dim: int, level: int, size: int, shift: Optional[ShiftStream] = None) -> None:
        super().__init__()
        self.dim = dim
        self.level = level
        self.size = size
        self.shift = shift

    @abstractmethod
    def forward(self, f: MatrixField) -> MatrixField:
        raise NotImplementedError()

    def adjoint(self) -> "BaseDyadicOperator":
        raise NotImplementedError()

    @property
    def H(self) -> "BaseDyadicOperator":
        return self.adjoint()

    @property
    def dimension(self) -> int:
        """Complex dimension of the domain, 2^{Ln}·d²."""
        return (1 << (self.level * self.dim)) * self.size * self.size

    def check_domain(self, f: MatrixField) -> None:
        if (f.dim, f.level, f.size) != (self.dim, self.level, self.size):
            raise ShapeMismatch("operator on (n={}, L={}, d={}) applied to a field on (n={}, L={}, d={})".format(
                self.dim, self.level, self.size, f.dim, f.level, f.size))

    def zero_field(self) -> MatrixField:
        return MatrixField.zeros(self.dim, self.level, self.size, self.shift)

    def one(self) -> MatrixField:
        return MatrixField.identity(self.dim, self.level, self.size, self.shift)

    def t1(self) -> MatrixField:
        """T1, the image of the identity-valued constant field."""
        return self(self.one())

    def t_star_1(self) -> MatrixField:
        return self.adjoint()(self.one())

    def __mul__(self, scalar) -> "BaseDyadicOperator":
        return ScaledOperator(self, scalar)

    __rmul__ = __mul__


class ScaledOperator(BaseDyadicOperator):
    def __init__(self, operator: BaseDyadicOperator, scalar) -> None:
        super().__init__(operator.dim, operator.level, operator.size, operator.shift)
        self.operator = operator
        self.scalar = complex(scalar)

    def forward(self, f: MatrixField) -> MatrixField:
        return self.operator(f) * self.scalar

    def adjoint(self) -> BaseDyadicOperator:
        return ScaledOperator(self.operator.adjoint(), self.scalar.conjugate())


class IdentityOperator(BaseDyadicOperator):
    def forward(self, f: MatrixField) -> MatrixField:
        self.check_domain(f)
        return f

    def adjoint(self) -> BaseDyadicOperator:
        return self


class ZeroOperator(BaseDyadicOperator):
    def forward(self, f: MatrixField) -> MatrixField:
        self.check_domain(f)
        return f.like(torch.zeros_like(f.values))

    def adjoint(self) -> BaseDyadicOperator:
        return self


class FunctionOperator(BaseDyadicOperator):
    """Wraps a pair of callables (map, adjoint map) as an operator."""
    def __init__(self, fn, dim: int, level: int, size: int,
                 adjoint_fn=None, shift: Optional[ShiftStream] = None) -> None:
        super().__init__(dim, level, size, shift)
        self.fn = fn
        self.adjoint_fn = adjoint_fn

    def forward(self, f: MatrixField) -> MatrixField:
        self.check_domain(f)
        return self.fn(f)

    def adjoint(self) -> BaseDyadicOperator:
        if self.adjoint_fn is None:
            raise NotImplementedError()
        return FunctionOperator(self.adjoint_fn, self.dim, self.level, self.size, self.fn, self.shift)
