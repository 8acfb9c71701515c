import itertools
from typing import List, Tuple

import numpy as np
import torch

DTYPE = torch.complex128
REAL_DTYPE = torch.float64

PSD_CLIP_TOLERANCE = 1e-12
DENSE_DIMENSION_LIMIT = 4096

DEFAULT_R = 8
DEFAULT_GAMMA = 0.5
DEFAULT_K_MAX = 24


class DyadicError(Exception):
    """Base class of every error raised by pytorch_dyadic_czo.
    """


class AncestorOutOfRange(DyadicError, ValueError):
    pass


class InsufficientShiftDepth(DyadicError, ValueError):
    pass


class LayoutMismatch(DyadicError, ValueError):
    pass


class LevelOutOfRange(DyadicError, ValueError):
    pass


class ShapeMismatch(DyadicError, ValueError):
    pass


class InvalidExponent(DyadicError, ValueError):
    pass


class NotAdapted(DyadicError, ValueError):
    pass


class EntryOutOfRange(DyadicError, ValueError):
    pass


class DimensionTooLarge(DyadicError, ValueError):
    pass


class DegenerateInput(DyadicError, ValueError):
    pass


class InsufficientPoints(DyadicError, ValueError):
    pass


class SingularOverlap(DyadicError, ValueError):
    pass


class QuadratureFailure(DyadicError, RuntimeError):
    pass


class ConfigInvalid(DyadicError, ValueError):
    pass


class NotPositiveSemidefinite(DyadicError, ArithmeticError):
    pass


def signatures(n: int) -> List[Tuple[int, ...]]:
    """Nonzero Haar signatures θ ∈ {0,1}^n in lexicographic order.
    """
    return [theta for theta in itertools.product((0, 1), repeat=n) if any(theta)]


def first_signature(n: int) -> Tuple[int, ...]:
    return (1,) + (0,) * (n - 1)


def child_offsets(n: int) -> List[Tuple[int, ...]]:
    return list(itertools.product((0, 1), repeat=n))


def sign_table(n: int) -> torch.Tensor:
    """
    Returns:
        table: (2**n - 1, 2**n) with entry ∏_i (1 - 2 ε_i)^{θ_i} for signature θ and child ε
    """
    rows = []
    for theta in signatures(n):
        row = []
        for eps in child_offsets(n):
            sign = 1
            for t, e in zip(theta, eps):
                if t and e:
                    sign = -sign
            row.append(sign)
        rows.append(row)
    return torch.tensor(rows, dtype=DTYPE)


def substream(seed: int, name: str) -> np.random.SeedSequence:
    """Named child of the root seed ("grid", "symbols", "probes", ...).
    """
    key = [ord(c) for c in name]
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key))


def torch_generator(seed_sequence: np.random.SeedSequence) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(int(seed_sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)))
    return generator
