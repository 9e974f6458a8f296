import logging
import math
import numbers
import re
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from toda_cft.core.errors import InputError, NumericalError

logger = logging.getLogger(__name__)

Scalar = Fraction | float

# Floats that round-trip through a rational with a small denominator are
# promoted to that rational (1.1 -> 11/10); anything else stays a float.
_PROMOTION_DENOMINATOR = 10**6


def as_scalar(value) -> Scalar:
    """Coerce user-facing numbers to Fraction when exact, float otherwise."""
    if isinstance(value, bool):
        raise InputError(f"Expected a number, got boolean {value!r}")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, numbers.Integral):
        return Fraction(int(value))
    if isinstance(value, Decimal):
        if not value.is_finite():
            raise InputError(f"Expected a finite number, got {value}")
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise InputError(f"Cannot parse number {value!r}") from exc
    if isinstance(value, numbers.Real):
        value = float(value)
        if not math.isfinite(value):
            raise InputError(f"Expected a finite number, got {value}")
        approx = Fraction(value).limit_denominator(_PROMOTION_DENOMINATOR)
        return approx if float(approx) == value else value
    raise InputError(f"Expected a real number, got {type(value).__name__}")


def exact_sum(values: Iterable[Scalar]) -> Scalar:
    """Order-independent sum: exact for rationals, correctly rounded otherwise."""
    values = list(values)
    if all(isinstance(v, Fraction) for v in values):
        return sum(values, Fraction(0))
    return math.fsum(float(v) for v in values)


def is_exact(value: Scalar) -> bool:
    return isinstance(value, Fraction)


# ---------------------------------------------------------------------------
# Algebra specs
# ---------------------------------------------------------------------------


class Family(Enum):
    A = "A"
    D = "D"
    E6 = "E6"
    E7 = "E7"
    E8 = "E8"


_E_RANKS = {Family.E6: 6, Family.E7: 7, Family.E8: 8}

# Bourbaki numbering: chain 1-3-4-5-6-7-8 with node 2 attached to node 4.
_E_EDGES = ((1, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (2, 4))

_DUAL_COXETER_E = {Family.E6: 12, Family.E7: 18, Family.E8: 30}
_DIMENSION_E = {Family.E6: 78, Family.E7: 133, Family.E8: 248}


@dataclass(frozen=True)
class Summand:
    family: Family
    rank: int

    def __post_init__(self):
        if not isinstance(self.rank, int) or self.rank < 1:
            raise InputError(f"Invalid rank {self.rank!r} for summand '{self.label}'")
        if self.family is Family.D and self.rank < 4:
            raise InputError(
                f"Invalid summand '{self.label}': D family requires rank >= 4"
            )
        if self.family in _E_RANKS and self.rank != _E_RANKS[self.family]:
            raise InputError(
                f"Invalid summand '{self.family.value}' with rank {self.rank}: "
                f"E family ranks are fixed"
            )

    @property
    def label(self) -> str:
        if self.family in _E_RANKS:
            return self.family.value
        return f"{self.family.value}{self.rank}"

    @property
    def dual_coxeter(self) -> int:
        if self.family is Family.A:
            return self.rank + 1
        if self.family is Family.D:
            return 2 * self.rank - 2
        return _DUAL_COXETER_E[self.family]

    @property
    def dimension(self) -> int:
        if self.family is Family.A:
            return (self.rank + 1) ** 2 - 1
        if self.family is Family.D:
            return self.rank * (2 * self.rank - 1)
        return _DIMENSION_E[self.family]

    def cartan(self) -> list[list[int]]:
        n = self.rank
        matrix = [[2 if i == j else 0 for j in range(n)] for i in range(n)]
        for i, j in self._edges():
            matrix[i - 1][j - 1] = -1
            matrix[j - 1][i - 1] = -1
        return matrix

    def _edges(self) -> list[tuple[int, int]]:
        n = self.rank
        if self.family is Family.A:
            return [(i, i + 1) for i in range(1, n)]
        if self.family is Family.D:
            # chain 1..n-1, node n hangs off node n-2
            return [(i, i + 1) for i in range(1, n - 1)] + [(n - 2, n)]
        return [edge for edge in _E_EDGES if max(edge) <= n]


@dataclass(frozen=True)
class AlgebraSpec:
    summands: tuple[Summand, ...]

    def __post_init__(self):
        if not self.summands:
            raise InputError("An algebra needs at least one simple summand")

    @property
    def rank(self) -> int:
        return sum(s.rank for s in self.summands)

    @property
    def label(self) -> str:
        return "+".join(s.label for s in self.summands)


_SUMMAND_PATTERN = re.compile(r"^([ADE])(\d+)$")


def parse_algebra(text: str) -> AlgebraSpec:
    """Parse "A2", "D4", "E6" or direct sums such as "A1+A1"."""
    if not isinstance(text, str) or not text.strip():
        raise InputError(f"Empty algebra spec: {text!r}")
    summands = []
    for token in text.split("+"):
        token = token.strip().upper()
        match = _SUMMAND_PATTERN.match(token)
        if match is None:
            raise InputError(f"Cannot parse summand '{token}' in algebra spec {text!r}")
        letter, rank = match.group(1), int(match.group(2))
        if letter == "E":
            try:
                family = Family(f"E{rank}")
            except ValueError:
                raise InputError(
                    f"Invalid summand '{token}': E family has ranks 6, 7, 8 only"
                ) from None
        else:
            family = Family(letter)
        summands.append(Summand(family, rank))
    return AlgebraSpec(tuple(summands))


# ---------------------------------------------------------------------------
# Exact matrix helpers
# ---------------------------------------------------------------------------


def exact_inverse(matrix: Sequence[Sequence[int | Fraction]]) -> tuple[tuple[Fraction, ...], ...]:
    """Gauss-Jordan inverse over the rationals."""
    n = len(matrix)
    work = [
        [Fraction(v) for v in row] + [Fraction(int(i == j)) for j in range(n)]
        for i, row in enumerate(matrix)
    ]
    for col in range(n):
        pivot = next((r for r in range(col, n) if work[r][col] != 0), None)
        if pivot is None:
            raise NumericalError("Cartan matrix is singular")
        work[col], work[pivot] = work[pivot], work[col]
        scale = work[col][col]
        work[col] = [v / scale for v in work[col]]
        for r in range(n):
            if r != col and work[r][col] != 0:
                factor = work[r][col]
                work[r] = [a - factor * b for a, b in zip(work[r], work[col])]
    return tuple(tuple(row[n:]) for row in work)


def leading_minors(matrix: Sequence[Sequence[int | Fraction]]) -> list[Fraction]:
    """Exact leading principal minors via fraction-free elimination."""
    n = len(matrix)
    work = [[Fraction(v) for v in row] for row in matrix]
    minors = []
    det = Fraction(1)
    for k in range(n):
        pivot = work[k][k]
        det *= pivot
        minors.append(det)
        if pivot == 0:
            minors.extend([Fraction(0)] * (n - k - 1))
            break
        for r in range(k + 1, n):
            factor = work[r][k] / pivot
            for c in range(k, n):
                work[r][c] -= factor * work[k][c]
    return minors


def _block_diagonal(blocks: list[list[list[int]]]) -> list[list[int]]:
    size = sum(len(b) for b in blocks)
    out = [[0] * size for _ in range(size)]
    offset = 0
    for block in blocks:
        for i, row in enumerate(block):
            for j, v in enumerate(row):
                out[offset + i][offset + j] = v
        offset += len(block)
    return out


# ---------------------------------------------------------------------------
# Algebra data
# ---------------------------------------------------------------------------


class Basis(Enum):
    ROOT = "root"
    WEIGHT = "weight"


@dataclass(frozen=True, eq=False)
class AlgebraData:
    spec: AlgebraSpec
    cartan: tuple[tuple[int, ...], ...]
    cartan_inv: tuple[tuple[Fraction, ...], ...]
    weyl_norm_sq: Fraction
    dual_coxeter: tuple[int, ...]

    @property
    def rank(self) -> int:
        return len(self.cartan)

    @property
    def label(self) -> str:
        return self.spec.label

    @cached_property
    def cartan_array(self) -> np.ndarray:
        return np.array(self.cartan, dtype=float)

    @cached_property
    def determinant(self) -> Fraction:
        return leading_minors(self.cartan)[-1]

    def simple_root(self, i: int) -> "CartanVector":
        """e_i, 1-based index."""
        return CartanVector(Basis.ROOT, _unit(self.rank, i), self)

    def fundamental_weight(self, i: int) -> "CartanVector":
        """omega_i, 1-based index."""
        return CartanVector(Basis.WEIGHT, _unit(self.rank, i), self)

    def weyl_vector(self) -> "CartanVector":
        return CartanVector(Basis.WEIGHT, (Fraction(1),) * self.rank, self)

    def zero(self) -> "CartanVector":
        return CartanVector(Basis.ROOT, (Fraction(0),) * self.rank, self)

    def vector(self, coords: Sequence, basis: Basis | str = Basis.ROOT) -> "CartanVector":
        return CartanVector(Basis(basis), tuple(coords), self)

    def block_slices(self) -> list[slice]:
        slices, start = [], 0
        for summand in self.spec.summands:
            slices.append(slice(start, start + summand.rank))
            start += summand.rank
        return slices


def _unit(rank: int, i: int) -> tuple[Fraction, ...]:
    if not 1 <= i <= rank:
        raise InputError(f"Index {i} out of range 1..{rank}")
    return tuple(Fraction(int(j == i - 1)) for j in range(rank))


def build_algebra(spec: AlgebraSpec | str) -> AlgebraData:
    if isinstance(spec, str):
        spec = parse_algebra(spec)
    cartan = _block_diagonal([s.cartan() for s in spec.summands])
    n = len(cartan)
    cartan_inv = exact_inverse(cartan)

    for i in range(n):
        for j in range(n):
            if cartan[i][j] != cartan[j][i]:
                raise NumericalError(f"Cartan matrix of {spec.label} is not symmetric")
            product = sum(cartan[i][k] * cartan_inv[k][j] for k in range(n))
            if product != int(i == j):
                raise NumericalError(f"A*A^-1 != I for {spec.label} at ({i}, {j})")
    if any(m <= 0 for m in leading_minors(cartan)):
        raise NumericalError(f"Cartan matrix of {spec.label} is not positive definite")

    norm_sq = sum((v for row in cartan_inv for v in row), Fraction(0))
    freudenthal = sum(
        (Fraction(s.dual_coxeter * s.dimension, 12) for s in spec.summands), Fraction(0)
    )
    if norm_sq != freudenthal:
        raise NumericalError(
            f"|rho|^2 = {norm_sq} disagrees with Freudenthal-de Vries value {freudenthal} "
            f"for {spec.label}"
        )
    logger.debug(f"Built algebra {spec.label}: rank {n}, |rho|^2 = {norm_sq}")
    return AlgebraData(
        spec=spec,
        cartan=tuple(tuple(row) for row in cartan),
        cartan_inv=cartan_inv,
        weyl_norm_sq=norm_sq,
        dual_coxeter=tuple(s.dual_coxeter for s in spec.summands),
    )


def weyl_norm_sq(data: AlgebraData) -> Fraction:
    return sum((v for row in data.cartan_inv for v in row), Fraction(0))


# ---------------------------------------------------------------------------
# Vectors in the Cartan subalgebra
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CartanVector:
    basis: Basis
    coords: tuple[Scalar, ...]
    algebra: AlgebraData

    def __post_init__(self):
        coords = tuple(as_scalar(c) for c in self.coords)
        if len(coords) != self.algebra.rank:
            raise InputError(
                f"Vector has {len(coords)} coordinates, algebra {self.algebra.label} "
                f"has rank {self.algebra.rank}"
            )
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "basis", Basis(self.basis))

    @cached_property
    def root_coords(self) -> tuple[Scalar, ...]:
        if self.basis is Basis.ROOT:
            return self.coords
        inv = self.algebra.cartan_inv
        return tuple(
            exact_sum(inv[i][j] * w for j, w in enumerate(self.coords))
            for i in range(self.algebra.rank)
        )

    @cached_property
    def weight_coords(self) -> tuple[Scalar, ...]:
        if self.basis is Basis.WEIGHT:
            return self.coords
        cartan = self.algebra.cartan
        return tuple(
            exact_sum(cartan[i][j] * c for j, c in enumerate(self.coords))
            for i in range(self.algebra.rank)
        )

    def to_basis(self, basis: Basis | str) -> "CartanVector":
        basis = Basis(basis)
        coords = self.root_coords if basis is Basis.ROOT else self.weight_coords
        return CartanVector(basis, coords, self.algebra)

    @property
    def is_exact(self) -> bool:
        return all(is_exact(c) for c in self.coords)

    def _check_same(self, other: "CartanVector"):
        if other.algebra.spec != self.algebra.spec:
            raise InputError(
                f"Vectors belong to different algebras: {self.algebra.label} "
                f"vs {other.algebra.label}"
            )

    def __add__(self, other: "CartanVector") -> "CartanVector":
        self._check_same(other)
        return CartanVector(
            Basis.ROOT,
            tuple(exact_sum((a, b)) for a, b in zip(self.root_coords, other.root_coords)),
            self.algebra,
        )

    def __neg__(self) -> "CartanVector":
        return CartanVector(self.basis, tuple(-c for c in self.coords), self.algebra)

    def __sub__(self, other: "CartanVector") -> "CartanVector":
        return self + (-other)

    def __mul__(self, factor) -> "CartanVector":
        factor = as_scalar(factor)
        return CartanVector(self.basis, tuple(factor * c for c in self.coords), self.algebra)

    __rmul__ = __mul__

    def __truediv__(self, divisor) -> "CartanVector":
        divisor = as_scalar(divisor)
        return CartanVector(self.basis, tuple(c / divisor for c in self.coords), self.algebra)

    def __repr__(self):
        coords = ", ".join(str(c) for c in self.coords)
        return f"CartanVector({self.basis.value}: [{coords}] in {self.algebra.label})"


def vector_sum(vectors: Iterable[CartanVector], data: AlgebraData) -> CartanVector:
    vectors = list(vectors)
    for v in vectors:
        data.zero()._check_same(v)
    coords = tuple(
        exact_sum(v.root_coords[i] for v in vectors) for i in range(data.rank)
    )
    return CartanVector(Basis.ROOT, coords, data)


def inner_product(u: CartanVector, v: CartanVector) -> Scalar:
    u._check_same(v)
    data = u.algebra
    n = data.rank
    if u.basis is Basis.ROOT and v.basis is Basis.ROOT:
        matrix = data.cartan
        return exact_sum(
            u.coords[i] * matrix[i][j] * v.coords[j]
            for i in range(n)
            for j in range(n)
            if matrix[i][j]
        )
    if u.basis is Basis.WEIGHT and v.basis is Basis.WEIGHT:
        matrix = data.cartan_inv
        return exact_sum(
            u.coords[i] * matrix[i][j] * v.coords[j] for i in range(n) for j in range(n)
        )
    # <e_i, omega_j> = delta_ij
    return exact_sum(a * b for a, b in zip(u.coords, v.coords))


# ---------------------------------------------------------------------------
# Couplings and derived constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CouplingParams:
    gamma: Scalar
    mu: tuple[Scalar, ...]

    def __post_init__(self):
        gamma = as_scalar(self.gamma)
        # exact comparison: Fraction(float) is the binary value of the float
        if not (gamma > 0 and Fraction(gamma) ** 2 < 2):
            raise InputError(f"gamma must lie in (0, sqrt(2)), got {gamma}")
        mu = tuple(as_scalar(m) for m in self.mu)
        for i, m in enumerate(mu, start=1):
            if m <= 0:
                raise InputError(f"mu_{i} must be positive, got {m}")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "mu", mu)

    @property
    def q(self) -> Scalar:
        return self.gamma + 2 / self.gamma

    def check_rank(self, data: AlgebraData) -> None:
        if len(self.mu) != data.rank:
            raise InputError(
                f"Expected {data.rank} cosmological constants for {data.label}, "
                f"got {len(self.mu)}"
            )


def background_charge(data: AlgebraData, params: CouplingParams) -> CartanVector:
    return CartanVector(Basis.WEIGHT, (params.q,) * data.rank, data)


def central_charge(data: AlgebraData, params: CouplingParams) -> Scalar:
    return data.rank + 6 * params.q**2 * data.weyl_norm_sq


def central_charge_table(summand: Summand) -> tuple[Fraction, Fraction]:
    """Closed-form coefficients (a, b) with c_T = a + b*q^2 for a simple summand."""
    n = summand.rank
    if summand.family is Family.A:
        m = n + 1
        return Fraction(m - 1), Fraction((m - 1) * m * (m + 1), 2)
    if summand.family is Family.D:
        return Fraction(n), Fraction(n * (n - 1) * (2 * n - 1))
    coefficient = {Family.E6: 468, Family.E7: 1197, Family.E8: 3720}[summand.family]
    return Fraction(n), Fraction(coefficient)


def conformal_weight(alpha: CartanVector, data: AlgebraData, params: CouplingParams) -> Scalar:
    charge = background_charge(data, params)
    return inner_product(alpha / 2, charge - alpha / 2)


# ---------------------------------------------------------------------------
# Seiberg bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeibergVerdict:
    """Per-condition outcome of the Seiberg bounds, indices 1-based in messages."""

    s: tuple[Scalar, ...]
    margins: tuple[tuple[Scalar, ...], ...]

    @property
    def s_positive(self) -> tuple[bool, ...]:
        return tuple(si > 0 for si in self.s)

    @property
    def margins_positive(self) -> tuple[tuple[bool, ...], ...]:
        return tuple(tuple(m > 0 for m in row) for row in self.margins)

    @property
    def passed(self) -> bool:
        return all(self.s_positive) and all(all(row) for row in self.margins_positive)

    def failures(self) -> list[str]:
        out = [
            f"condition 1 fails at i={i} (s_{i} = {_fmt(si)} <= 0)"
            for i, si in enumerate(self.s, start=1)
            if not si > 0
        ]
        for k, row in enumerate(self.margins, start=1):
            for i, margin in enumerate(row, start=1):
                if not margin > 0:
                    out.append(
                        f"condition 2 fails at k={k}, i={i} "
                        f"(margin gamma + 2/gamma - <alpha_{k}, e_{i}> = {_fmt(margin)})"
                    )
        return out

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "s": [_fmt(si) for si in self.s],
            "s_positive": list(self.s_positive),
            "margins": [[_fmt(m) for m in row] for row in self.margins],
            "margins_positive": [list(row) for row in self.margins_positive],
            "failures": self.failures(),
        }


@dataclass(frozen=True)
class ExtendedSeibergVerdict:
    s: tuple[Scalar, ...]
    bounds: tuple[Scalar, ...]

    @property
    def per_index(self) -> tuple[bool, ...]:
        return tuple(-si < bound for si, bound in zip(self.s, self.bounds))

    @property
    def passed(self) -> bool:
        return all(self.per_index)

    def failures(self) -> list[str]:
        return [
            f"extended bound fails at i={i} (-s_{i} = {_fmt(-si)} >= {_fmt(bound)})"
            for i, (si, bound, ok) in enumerate(
                zip(self.s, self.bounds, self.per_index), start=1
            )
            if not ok
        ]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "s": [_fmt(si) for si in self.s],
            "bounds": [_fmt(b) for b in self.bounds],
            "per_index": list(self.per_index),
            "failures": self.failures(),
        }


def _fmt(value: Scalar) -> str:
    return str(value) if is_exact(value) else repr(float(value))


def validate_points(points: Sequence[complex]) -> None:
    for k, z in enumerate(points, start=1):
        if not (math.isfinite(z.real) and math.isfinite(z.imag)):
            raise InputError(f"Insertion {k} is at infinity or not finite: {z}")
    seen = {}
    for k, z in enumerate(points, start=1):
        if z in seen:
            raise InputError(f"Insertions {seen[z]} and {k} share the point {z}")
        seen[z] = k


def seiberg_parameters(
    insertions: Sequence[tuple[complex, CartanVector]],
    data: AlgebraData,
    params: CouplingParams,
) -> tuple[Scalar, ...]:
    """s_i = <sum alpha_k - 2Q, omega_i> / gamma, i.e. root coords of (sum alpha - 2Q)/gamma."""
    total = vector_sum((alpha for _, alpha in insertions), data)
    shifted = total - 2 * background_charge(data, params)
    return tuple(c / params.gamma for c in shifted.root_coords)


def _checked(insertions, data):
    insertions = [(complex(z), alpha) for z, alpha in insertions]
    if not insertions:
        raise InputError("At least one insertion is required")
    validate_points([z for z, _ in insertions])
    for _, alpha in insertions:
        data.zero()._check_same(alpha)
    return insertions


def seiberg_check(
    insertions: Sequence[tuple[complex, CartanVector]],
    data: AlgebraData,
    params: CouplingParams,
) -> SeibergVerdict:
    insertions = _checked(insertions, data)
    q = params.q
    margins = tuple(
        tuple(q - w for w in alpha.weight_coords) for _, alpha in insertions
    )
    verdict = SeibergVerdict(s=seiberg_parameters(insertions, data, params), margins=margins)
    if not verdict.passed:
        logger.info(f"Seiberg check failed: {'; '.join(verdict.failures())}")
    return verdict


def extended_seiberg_check(
    insertions: Sequence[tuple[complex, CartanVector]],
    data: AlgebraData,
    params: CouplingParams,
) -> ExtendedSeibergVerdict:
    insertions = _checked(insertions, data)
    gamma, q = params.gamma, params.q
    bounds = []
    for i in range(data.rank):
        weakest = min((q - alpha.weight_coords[i]) / gamma for _, alpha in insertions)
        bounds.append(min(2 / gamma**2, weakest))
    return ExtendedSeibergVerdict(
        s=seiberg_parameters(insertions, data, params), bounds=tuple(bounds)
    )
