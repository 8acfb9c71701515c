import concurrent.futures
import logging
from dataclasses import dataclass
from dataclasses import field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from pytorch_dyadic_czo.utils import AncestorOutOfRange
from pytorch_dyadic_czo.utils import ConfigInvalid
from pytorch_dyadic_czo.utils import InsufficientShiftDepth

from pytorch_dyadic_czo.utils import DEFAULT_GAMMA
from pytorch_dyadic_czo.utils import DEFAULT_K_MAX
from pytorch_dyadic_czo.utils import DEFAULT_R

logger = logging.getLogger(__name__)

MC_BLOCK_SIZE = 4096
ORACLE_CHUNK = 1 << 20
GAMMA_MAX_DENOMINATOR = 1000
GAMMA_RESOLUTION = 1e-12


@dataclass(frozen=True, eq=False)
class ShiftStream:
    """Random shift β = (β_j)_{j=1..L_max}, row j-1 of ``bits`` holding β_j ∈ {0,1}^n.
    """
    dim: int
    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=np.int64).reshape(-1, self.dim)
        if np.any((bits != 0) & (bits != 1)):
            raise ValueError("shift bits must be 0 or 1")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def depth(self) -> int:
        return self.bits.shape[0]

    def bit(self, i: int) -> np.ndarray:
        # β_i, zero beyond the realized depth
        if 1 <= i <= self.depth:
            return self.bits[i - 1]
        return np.zeros(self.dim, dtype=np.int64)

    def dumps(self) -> str:
        return "\n".join("".join(str(int(b)) for b in row) for row in self.bits) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ShiftStream":
        rows = [line.strip() for line in text.splitlines() if line.strip()]
        if not rows:
            raise ValueError("empty shift stream")
        dim = len(rows[0])
        if any(len(row) != dim for row in rows):
            raise ValueError("ragged shift stream")
        bits = np.array([[int(c) for c in row] for row in rows], dtype=np.int64)
        return cls(dim, bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ShiftStream):
            return NotImplemented
        return self.dim == other.dim and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash((self.dim, self.bits.tobytes()))


def exact_gamma(gamma: float) -> Fraction:
    """γ as a fraction p/q with q ≤ GAMMA_MAX_DENOMINATOR, the form thresholds are computed in."""
    fraction = Fraction(gamma).limit_denominator(GAMMA_MAX_DENOMINATOR)
    if abs(float(fraction) - gamma) > GAMMA_RESOLUTION:
        raise ConfigInvalid("gamma {} is not a fraction with denominator at most {}".format(
            gamma, GAMMA_MAX_DENOMINATOR))
    return fraction


@dataclass(frozen=True)
class GoodBadParams:
    r: int = DEFAULT_R
    gamma: float = DEFAULT_GAMMA
    k_max: int = DEFAULT_K_MAX

    def __post_init__(self) -> None:
        if self.r < 1:
            raise ValueError("r must be a positive integer")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        exact_gamma(self.gamma)
        if self.k_max < self.r:
            raise ValueError("k_max must be at least r")
        if self.k_max > 62:
            raise ValueError("k_max above 62 overflows 64-bit offsets")

    @property
    def gamma_fraction(self) -> Fraction:
        return exact_gamma(self.gamma)

    def thresholds(self) -> np.ndarray:
        """
        Returns:
            thresholds: (k_max + 1,) with t_k = max{D ∈ ℕ : D ≤ 2^{k(1-γ)}}, computed exactly
        """
        gamma = self.gamma_fraction
        p, q = gamma.numerator, gamma.denominator
        out = np.zeros(self.k_max + 1, dtype=np.int64)
        for k in range(self.k_max + 1):
            bound = 2 ** (k * (q - p))
            t = int(2.0 ** (k * (q - p) / q))
            while t > 0 and t ** q > bound:
                t -= 1
            while (t + 1) ** q <= bound:
                t += 1
            out[k] = t
        return out

    def compatibility_depth(self, m: Sequence[int]) -> int:
        """M(m) = max{r, ⌈(1-γ)^{-1} log₂⁺|m|⌉}."""
        norm_sq = sum(int(x) ** 2 for x in m)
        if norm_sq <= 1:
            return self.r
        # smallest M with 2^{2(1-γ)M} ≥ |m|², exact in rationals
        one_minus = 1 - self.gamma_fraction
        p, q = one_minus.numerator, one_minus.denominator
        depth = 0
        while 2 ** (2 * p * depth) < norm_sq ** q:
            depth += 1
        return max(self.r, depth)


@dataclass(frozen=True)
class DyadicCube:
    dim: int
    level: int
    index: Tuple[int, ...]
    shift: Optional[ShiftStream] = field(default=None, compare=True)

    def __post_init__(self) -> None:
        if self.level < 0:
            raise ValueError("level must be nonnegative")
        index = tuple(int(i) for i in self.index)
        if len(index) != self.dim:
            raise ValueError("index must have one entry per coordinate")
        modulus = 1 << self.level
        object.__setattr__(self, "index", tuple(i % modulus for i in index))

    @property
    def side_length(self) -> Fraction:
        return Fraction(1, 1 << self.level)

    @property
    def volume(self) -> Fraction:
        return self.side_length ** self.dim

    def corner(self) -> Tuple[Fraction, ...]:
        """Lower corner of the cube on the torus, including the shift Σ_{i>level} 2^{-i} β_i."""
        offset = [Fraction(0)] * self.dim
        if self.shift is not None:
            for i in range(self.level + 1, self.shift.depth + 1):
                beta = self.shift.bit(i)
                for c in range(self.dim):
                    if beta[c]:
                        offset[c] += Fraction(1, 1 << i)
        return tuple((Fraction(idx, 1 << self.level) + off) % 1
                     for idx, off in zip(self.index, offset))

    def _check_depth(self, level: int) -> None:
        if self.shift is not None and self.shift.depth < level:
            raise InsufficientShiftDepth(
                "shift stream of depth {} cannot realize level {}".format(self.shift.depth, level))

    def child(self, offset: Sequence[int]) -> "DyadicCube":
        self._check_depth(self.level + 1)
        beta = self.shift.bit(self.level + 1) if self.shift is not None else np.zeros(self.dim, dtype=np.int64)
        index = tuple(2 * i + int(e) + int(b) for i, e, b in zip(self.index, offset, beta))
        return DyadicCube(self.dim, self.level + 1, index, self.shift)

    def parent(self) -> "DyadicCube":
        return ancestor(self, 1)

    def intersects(self, other: "DyadicCube") -> bool:
        for x, y in zip(self.corner(), other.corner()):
            if not ((y - x) % 1 < self.side_length or (x - y) % 1 < other.side_length):
                return False
        return True

    def contains(self, other: "DyadicCube") -> bool:
        """Point-set containment other ⊆ self on the torus."""
        if other.side_length > self.side_length:
            return False
        if self.level == 0:
            return True
        gap = self.side_length - other.side_length
        return all((y - x) % 1 <= gap for x, y in zip(self.corner(), other.corner()))


def translate(I: DyadicCube, m: Sequence[int]) -> DyadicCube:
    """I∔m: same level, index moved by m modulo 2^level."""
    return DyadicCube(I.dim, I.level, tuple(i + int(s) for i, s in zip(I.index, m)), I.shift)


def _ancestor_data(I: DyadicCube, k: int) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    """
    Returns:
        index: ancestor index at level - k
        offset: per-coordinate position of I inside its ancestor, in units of ℓ(I)
    """
    if k < 0 or I.level - k < 0:
        raise AncestorOutOfRange("level {} has no {}-th ancestor".format(I.level, k))
    if k > 0:
        I._check_depth(I.level)
    index, offset = [], []
    for c in range(I.dim):
        shift_sum = 0
        if I.shift is not None:
            for t in range(k):
                shift_sum += int(I.shift.bit(I.level - t)[c]) << t
        relative = I.index[c] - shift_sum
        index.append(relative >> k)
        offset.append(relative % (1 << k))
    return tuple(index), tuple(offset)


def ancestor(I: DyadicCube, k: int) -> DyadicCube:
    index, _ = _ancestor_data(I, k)
    return DyadicCube(I.dim, I.level - k, index, I.shift)


def boundary_distance(offset: Sequence[int], k: int) -> int:
    """dist(closure of I, complement of I^(k)) in units of ℓ(I), ∞-metric."""
    side = 1 << k
    return min(min(u, side - 1 - u) for u in offset)


def is_bad(I: DyadicCube, params: GoodBadParams) -> bool:
    """True iff dist(I, J^c) ≤ ℓ(I)^γ ℓ(J)^{1-γ} for some J = I^(k), r ≤ k ≤ k_max.

    Ancestors at level 0 are the whole torus and never witness badness.
    """
    if I.shift is not None and I.shift.depth < I.level:
        raise InsufficientShiftDepth(
            "shift stream of depth {} cannot classify a level {} cube".format(I.shift.depth, I.level))
    thresholds = params.thresholds()
    for k in range(params.r, min(params.k_max, I.level - 1) + 1):
        _, offset = _ancestor_data(I, k)
        if boundary_distance(offset, k) <= thresholds[k]:
            return True
    return False


def sample_shift(seed: int, L_max: int, n: int) -> ShiftStream:
    rng = np.random.default_rng(seed)
    return ShiftStream(n, rng.integers(0, 2, size=(L_max, n)))


def _bad_mask(relative: np.ndarray, params: GoodBadParams, thresholds: np.ndarray) -> np.ndarray:
    """
    Parameters:
        relative: (num, n) integers idx - B_{k_max}, only the low k bits enter u_k
    Returns:
        bad: (num,) boolean
    """
    bad = np.zeros(relative.shape[0], dtype=bool)
    for k in range(params.r, params.k_max + 1):
        side = np.int64(1) << np.int64(k)
        u = np.mod(relative, side)
        distance = np.minimum(u, side - 1 - u).min(axis=1)
        bad |= distance <= thresholds[k]
    return bad


def _pi_good_block(n: int, params: GoodBadParams, size: int, seed_sequence: np.random.SeedSequence) -> int:
    rng = np.random.default_rng(seed_sequence)
    # bits[:, t, c] holds β_{J-t} for the reference cube at level J = k_max + 1, index 0
    bits = rng.integers(0, 2, size=(size, params.k_max, n), dtype=np.int64)
    weights = np.int64(1) << np.arange(params.k_max, dtype=np.int64)
    shift_sum = np.einsum("stc,t->sc", bits, weights)
    bad = _bad_mask(-shift_sum, params, params.thresholds())
    return int(size - bad.sum())


def _block_sizes(samples: int) -> List[int]:
    full, rest = divmod(samples, MC_BLOCK_SIZE)
    return [MC_BLOCK_SIZE] * full + ([rest] if rest else [])


def estimate_pi_good(n: int,
                     params: GoodBadParams,
                     samples: int,
                     seed: int,
                     jobs: int = 1) -> Tuple[float, float]:
    """Monte-Carlo ℙ(reference cube is good).

    Blocks carry their own spawned seeds, so the estimate does not depend on ``jobs``.

    Returns:
        estimate, binomial standard error
    """
    if samples < 100:
        raise ValueError("estimate_pi_good needs at least 100 samples")
    sizes = _block_sizes(samples)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            counts = list(pool.map(_pi_good_block, [n] * len(sizes), [params] * len(sizes), sizes, seeds))
    else:
        counts = [_pi_good_block(n, params, size, s) for size, s in zip(sizes, seeds)]
    estimate = sum(counts) / samples
    stderr = float(np.sqrt(max(estimate * (1.0 - estimate), 0.0) / samples))
    logger.info("pi_good estimate %.6f +/- %.6f from %d samples", estimate, stderr, samples)
    return estimate, stderr


def exact_pi_good(params: GoodBadParams) -> float:
    """Exact π_good for n = 1 by enumerating the 2^{k_max} relative-offset bit patterns."""
    thresholds = params.thresholds()
    total = 1 << params.k_max
    good = 0
    for start in range(0, total, ORACLE_CHUNK):
        pattern = np.arange(start, min(start + ORACLE_CHUNK, total), dtype=np.int64)
        bad = _bad_mask(-pattern[:, None], params, thresholds)
        good += int(bad.size - bad.sum())
    return good / total


@dataclass(frozen=True)
class CubeFunctional:
    """φ on dyadic cubes, nonzero only on ``levels``.

    ``fn(level, corners)`` maps the (num, n) float array of lower corners of the
    level's cubes to their (num,) values.
    """
    levels: Tuple[int, ...]
    fn: Callable[[int, np.ndarray], np.ndarray]


def window_indicator(level: int, low: Sequence[float], high: Sequence[float]) -> CubeFunctional:
    low_ = np.asarray(low, dtype=np.float64)
    high_ = np.asarray(high, dtype=np.float64)

    def fn(_level: int, corners: np.ndarray) -> np.ndarray:
        return np.all((corners >= low_) & (corners < high_), axis=1).astype(np.float64)
    return CubeFunctional((level,), fn)


def level_constant(level: int, value: float = 1.0) -> CubeFunctional:
    def fn(_level: int, corners: np.ndarray) -> np.ndarray:
        return np.full(corners.shape[0], value, dtype=np.float64)
    return CubeFunctional((level,), fn)


def _decoupling_block(n: int,
                      phi: CubeFunctional,
                      params: GoodBadParams,
                      size: int,
                      seed_sequence: np.random.SeedSequence) -> Tuple[float, float, float, float]:
    rng = np.random.default_rng(seed_sequence)
    depth = max(phi.levels) + 1
    thresholds = params.thresholds()
    bits = rng.integers(0, 2, size=(size, depth, n), dtype=np.int64)   # bits[:, i-1] = β_i
    sums = np.zeros(size)
    good_sums = np.zeros(size)
    for level in phi.levels:
        grid = _level_indices(level, n)                                # (cubes, n)
        scales = np.zeros(depth)
        scales[level:] = 2.0 ** -np.arange(level + 1, depth + 1)
        tail = np.einsum("sic,i->sc", bits, scales)                    # (size, n)
        corners = np.mod(grid[None] * 2.0 ** (-level) + tail[:, None], 1.0)
        values = np.asarray(phi.fn(level, corners.reshape(-1, n)), dtype=np.float64).reshape(size, -1)
        weights = np.zeros(depth, dtype=np.int64)
        for t in range(params.k_max):
            weights[level - t - 1] = np.int64(1) << np.int64(t)
        shift_sum = np.einsum("sic,i->sc", bits, weights)              # (size, n)
        relative = (grid[None] - shift_sum[:, None]).reshape(-1, n)
        good = ~_bad_mask(relative, params, thresholds).reshape(size, -1)
        sums += values.sum(axis=1)
        good_sums += (values * good).sum(axis=1)
    return sums.sum(), (sums ** 2).sum(), good_sums.sum(), (good_sums ** 2).sum()


def _level_indices(level: int, n: int) -> np.ndarray:
    axes = [np.arange(1 << level, dtype=np.int64)] * n
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)


def verify_good_decoupling(phi: CubeFunctional,
                           params: GoodBadParams,
                           samples: int,
                           seed: int,
                           n: int = 1,
                           jobs: int = 1) -> Tuple[float, float, float]:
    """Monte-Carlo sides of π_good 𝔼_β Σ_I φ(I) = 𝔼_β Σ_{I good} φ(I).

    π_good is estimated from an independent substream.

    Returns:
        lhs, rhs, combined standard error of lhs - rhs
    """
    if min(phi.levels) <= params.k_max:
        raise ValueError("functional levels must exceed k_max so every tested ancestor is realized")
    root = np.random.SeedSequence(seed)
    pi_seed, sum_seed = root.spawn(2)
    pi_good, pi_stderr = estimate_pi_good(n, params, max(samples, 100), int(pi_seed.generate_state(1)[0]), jobs)
    sizes = _block_sizes(samples)
    seeds = sum_seed.spawn(len(sizes))
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_decoupling_block, [n] * len(sizes), [phi] * len(sizes),
                                  [params] * len(sizes), sizes, seeds))
    else:
        parts = [_decoupling_block(n, phi, params, size, s) for size, s in zip(sizes, seeds)]
    total, total_sq, good, good_sq = (sum(p[i] for p in parts) for i in range(4))
    mean = total / samples
    good_mean = good / samples
    var = max(total_sq / samples - mean ** 2, 0.0) / samples
    good_var = max(good_sq / samples - good_mean ** 2, 0.0) / samples
    lhs = pi_good * mean
    lhs_var = (pi_good ** 2) * var + (mean ** 2) * pi_stderr ** 2
    stderr = float(np.sqrt(lhs_var + good_var))
    logger.info("good decoupling lhs %.6f rhs %.6f stderr %.6f", lhs, good_mean, stderr)
    return float(lhs), float(good_mean), stderr


def orbit_parity(I: DyadicCube, m: Sequence[int]) -> int:
    """b(I): position of I along its orbit under J ↦ J∔m, modulo 2.

    Positions are counted from the orbit element whose pivot coordinate is
    smallest; the pivot is a coordinate where m has the least 2-adic valuation,
    so it alone determines the position along the orbit.
    """
    side = 1 << I.level
    steps = [int(s) % side for s in m]
    valuations = [np.gcd(s, side) if s else side for s in steps]
    pivot = int(np.argmin(valuations))
    g = int(valuations[pivot])
    length = side // g
    if length == 1:
        return 0
    a = I.index[pivot]
    position = ((a - a % g) // g) * pow(steps[pivot] // g, -1, length) % length
    return position % 2


def compatibility_partition(m: Sequence[int],
                            params: GoodBadParams,
                            cubes: Sequence[DyadicCube]) -> Dict[Tuple[int, int], List[DyadicCube]]:
    """Split good cubes into the 2(1 + M(m)) classes D^m_{k,v}, k = a(I), v = b(I).

    a(I) = log₂ ℓ(I) mod (M + 1); b(I) alternates along the orbits of I ↦ I∔m.
    Cubes that are bad for ``params`` are left out of every class.
    """
    depth = params.compatibility_depth(m)
    classes = {(k, v): [] for k in range(depth + 1) for v in (0, 1)}
    dropped = 0
    for cube in cubes:
        if is_bad(cube, params):
            dropped += 1
            continue
        a = (-cube.level) % (depth + 1)
        classes[(a, orbit_parity(cube, m))].append(cube)
    if dropped:
        logger.debug("compatibility partition for m=%s dropped %d bad cubes", tuple(m), dropped)
    return classes


def is_m_compatible(I: DyadicCube, J: DyadicCube, m: Sequence[int]) -> bool:
    """Either I ∪ (I∔m) and J ∪ (J∔m) are disjoint, or one lies inside J or J∔m (resp. I or I∔m).

    Lying inside a dyadic subcube of J is the same as lying inside J, so the
    containment is tested against J and J∔m directly. The condition is stated
    for two different cubes; a cube counts as compatible with itself.
    """
    if I == J:
        return True
    first = (I, translate(I, m))
    second = (J, translate(J, m))
    if not any(a.intersects(b) for a in first for b in second):
        return True
    if I.level > J.level:
        return any(all(K.contains(a) for a in first) for K in second)
    if J.level > I.level:
        return any(all(K.contains(b) for b in second) for K in first)
    return False


def compatibility_audit(m: Sequence[int],
                        classes: Dict[Tuple[int, int], List[DyadicCube]],
                        pairs: int,
                        seed: int) -> Tuple[int, List[Tuple[DyadicCube, DyadicCube]]]:
    """Checks ``is_m_compatible`` on random pairs of different cubes from one class.

    Each draw picks a class with at least two members uniformly, then two of its
    members without replacement.

    Returns:
        number of pairs checked, the pairs that failed
    """
    pools = [classes[key] for key in sorted(classes) if len(classes[key]) > 1]
    if not pools:
        return 0, []
    rng = np.random.default_rng(seed)
    failures = []
    for _ in range(pairs):
        members = pools[int(rng.integers(len(pools)))]
        i, j = rng.choice(len(members), size=2, replace=False)
        I, J = members[int(i)], members[int(j)]
        if not is_m_compatible(I, J, m):
            failures.append((I, J))
    logger.info("compatibility audit for m=%s: %d failures in %d pairs", tuple(m), len(failures), pairs)
    return pairs, failures
