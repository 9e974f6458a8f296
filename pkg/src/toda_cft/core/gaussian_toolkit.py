import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from toda_cft.core.errors import CertificateViolation, InputError

logger = logging.getLogger(__name__)

MAX_COORDINATES = 64
PSD_TOLERANCE = 1e-12
SPOT_CHECKS = 100
KAHANE_SIGMA = 3.0
GIRSANOV_SIGMA = 4.0
CLOSED_FORM_TOLERANCE = 1e-10


def _generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True, eq=False)
class SmallGaussianModel:
    """Centered Gaussian vector in (R^n)^d, coordinates laid out block by block."""

    covariance: np.ndarray
    blocks: int
    block_size: int

    def __post_init__(self):
        covariance = np.array(self.covariance, dtype=float)
        dimension = self.blocks * self.block_size
        if self.blocks < 1 or self.block_size < 1:
            raise InputError("blocks and block_size must be positive")
        if dimension > MAX_COORDINATES:
            raise InputError(f"Small models hold at most {MAX_COORDINATES} coordinates, got {dimension}")
        if covariance.shape != (dimension, dimension):
            raise InputError(f"Covariance must be {dimension}x{dimension}, got {covariance.shape}")
        if not np.allclose(covariance, covariance.T, rtol=0.0, atol=PSD_TOLERANCE):
            raise InputError("Covariance is not symmetric")
        covariance = 0.5 * (covariance + covariance.T)
        smallest = float(np.linalg.eigvalsh(covariance).min())
        if smallest < -PSD_TOLERANCE * max(1.0, float(np.abs(covariance).max())):
            raise InputError(f"Covariance is not positive semi-definite (eigenvalue {smallest:.3e})")
        covariance.setflags(write=False)
        object.__setattr__(self, "covariance", covariance)

    @property
    def dimension(self) -> int:
        return self.blocks * self.block_size

    def block_of(self, coordinate: int) -> int:
        return coordinate // self.block_size

    def partition_decouple(self, groups: Sequence[Sequence[int]]) -> "SmallGaussianModel":
        """Zero the covariance between blocks in different groups; marginals are unchanged."""
        label = np.full(self.blocks, -1)
        for g, group in enumerate(groups):
            for block in group:
                if not 0 <= block < self.blocks or label[block] != -1:
                    raise InputError(f"Partition must use every block 0..{self.blocks - 1} exactly once")
                label[block] = g
        if np.any(label < 0):
            raise InputError(f"Partition must use every block 0..{self.blocks - 1} exactly once")
        coordinate_label = np.repeat(label, self.block_size)
        keep = coordinate_label[:, None] == coordinate_label[None, :]
        return SmallGaussianModel(np.where(keep, self.covariance, 0.0), self.blocks, self.block_size)

    def decoupled(self) -> "SmallGaussianModel":
        return self.partition_decouple([[b] for b in range(self.blocks)])

    def factor(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.covariance)
        except np.linalg.LinAlgError:
            eigenvalues, eigenvectors = np.linalg.eigh(self.covariance)
            return eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))

    def transform(self, normals: np.ndarray) -> np.ndarray:
        """Map standard normals (count, D) to samples (count, d, n)."""
        values = normals @ self.factor().T
        return values.reshape(-1, self.blocks, self.block_size)

    def sample(self, count: int, seed: int) -> np.ndarray:
        return self.transform(_generator(seed).standard_normal((count, self.dimension)))


def two_block_exponential_model(c: float) -> SmallGaussianModel:
    """d=2, n=1, unit variances and covariance -c."""
    return SmallGaussianModel(np.array([[1.0, -c], [-c, 1.0]]), blocks=2, block_size=1)


def two_block_chaos_model(c: float, points: int = 8, correlation_length: float = 4.0) -> SmallGaussianModel:
    """[[1, -c], [-c, 1]] (x) K with K an exponential kernel on `points` sites."""
    sites = np.arange(points, dtype=float)
    kernel = np.exp(-np.abs(sites[:, None] - sites[None, :]) / correlation_length)
    coupling = np.array([[1.0, -c], [-c, 1.0]])
    return SmallGaussianModel(np.kron(coupling, kernel), blocks=2, block_size=points)


# ---------------------------------------------------------------------------
# Functionals
# ---------------------------------------------------------------------------


class Functional:
    """F evaluated on samples of shape (count, d, n).

    ``certified`` is the caller's assertion that every cross-block mixed
    partial derivative of F is nonnegative.
    """

    certified = False
    name = "functional"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mixed_partial(self, x: np.ndarray, a: tuple[int, int], b: tuple[int, int], step: float) -> np.ndarray:
        """Central difference of d^2 F / dx_a dx_b at points x (count, d, n)."""
        def shifted(sa, sb):
            y = x.copy()
            y[:, a[0], a[1]] += sa * step
            y[:, b[0], b[1]] += sb * step
            return self(y)

        return (shifted(1, 1) - shifted(1, -1) - shifted(-1, 1) + shifted(-1, -1)) / (4.0 * step**2)


class ExponentialFunctional(Functional):
    """exp(<b, x>)."""

    certified = True
    name = "exponential"

    def __init__(self, coefficients: np.ndarray | None = None):
        self.coefficients = None if coefficients is None else np.asarray(coefficients, dtype=float)

    def _b(self, x: np.ndarray) -> np.ndarray:
        return np.ones(x.shape[1:]) if self.coefficients is None else self.coefficients.reshape(x.shape[1:])

    def __call__(self, x):
        return np.exp(np.einsum("cdn,dn->c", x, self._b(x)))

    def expectation(self, model: SmallGaussianModel) -> float:
        b = np.ones(model.dimension) if self.coefficients is None else self.coefficients.reshape(-1)
        return math.exp(0.5 * float(b @ model.covariance @ b))


class MassPowerFunctional(Functional):
    """prod_b M_b^(-power) with M_b the Wick-normalized discrete chaos mass of block b."""

    certified = True
    name = "mass-power"

    def __init__(self, model: SmallGaussianModel, power: float = 0.3):
        self.power = float(power)
        variance = np.diag(model.covariance).reshape(model.blocks, model.block_size)
        self.log_offset = -0.5 * variance - math.log(model.block_size)

    def __call__(self, x):
        log_mass = np.log(np.exp(x + self.log_offset[None]).sum(axis=-1))
        return np.exp(-self.power * log_mass.sum(axis=-1))


class QuadraticFunctional(Functional):
    """c0 + <b, x> + x^T M x on the flattened coordinates."""

    name = "quadratic"

    def __init__(self, constant: float, linear: np.ndarray, quadratic: np.ndarray):
        self.constant = float(constant)
        self.linear = np.asarray(linear, dtype=float)
        quadratic = np.asarray(quadratic, dtype=float)
        self.quadratic = 0.5 * (quadratic + quadratic.T)

    def __call__(self, x):
        flat = x.reshape(len(x), -1)
        return self.constant + flat @ self.linear + np.einsum("ci,ij,cj->c", flat, self.quadratic, flat)

    def tilted_expectation(self, covariance: np.ndarray, mean: np.ndarray) -> float:
        """E[F] from the moments E[x_a x_b] = Sigma_ab + m_a m_b."""
        second = covariance + np.outer(mean, mean)
        return self.constant + float(self.linear @ mean) + float(np.sum(self.quadratic * second))

    def shifted_expectation(self, covariance: np.ndarray, shift: np.ndarray) -> float:
        """E[F(X + m)] for centered X."""
        return (
            self.constant
            + float(self.linear @ shift)
            + float(shift @ self.quadratic @ shift)
            + float(np.trace(self.quadratic @ covariance))
        )


class BoxIndicator(Functional):
    name = "box"

    def __init__(self, lower: np.ndarray, upper: np.ndarray):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)

    def __call__(self, x):
        flat = x.reshape(len(x), -1)
        inside = np.all((flat >= self.lower) & (flat <= self.upper), axis=1)
        return inside.astype(float)


# ---------------------------------------------------------------------------
# Kahane comparison
# ---------------------------------------------------------------------------


@dataclass
class KahaneReport:
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float
    z_score: float
    replicas: int

    @property
    def passed(self) -> bool:
        return self.z_score <= KAHANE_SIGMA

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "lhs_stderr": self.lhs_stderr,
            "rhs": self.rhs,
            "rhs_stderr": self.rhs_stderr,
            "z_score": self.z_score,
            "replicas": self.replicas,
            "passed": self.passed,
        }


def check_certificate(
    model: SmallGaussianModel,
    functional: Functional,
    seed: int,
    points: int = SPOT_CHECKS,
    step: float = 1e-3,
) -> None:
    """Spot-check nonnegative cross-block mixed partials at random points."""
    if not functional.certified:
        raise CertificateViolation(f"Functional '{functional.name}' carries no cross-block certificate")
    if model.blocks < 2:
        return
    rng = _generator(seed)
    x = model.transform(rng.standard_normal((points, model.dimension)))
    first = rng.integers(0, model.dimension, size=points)
    # a partner coordinate in another block
    offset = rng.integers(1, model.blocks, size=points)
    partner_block = (first // model.block_size + offset) % model.blocks
    second = partner_block * model.block_size + rng.integers(0, model.block_size, size=points)
    for p in range(points):
        a = divmod(int(first[p]), model.block_size)
        b = divmod(int(second[p]), model.block_size)
        point = x[p : p + 1]
        value = float(functional.mixed_partial(point, a, b, step)[0])
        scale = 1.0 + abs(float(functional(point)[0]))
        if value < -1e-6 * scale:
            raise CertificateViolation(
                f"Mixed partial d2F/dx{a}dx{b} = {value:.3e} < 0 at spot check {p}"
            )


def kahane_compare(
    model: SmallGaussianModel,
    functional: Functional,
    replicas: int,
    seed: int,
    groups: Sequence[Sequence[int]] | None = None,
) -> KahaneReport:
    """E[F(X)] against E[F(X~)] for the decoupled X~, on common random numbers."""
    check_certificate(model, functional, seed)
    reference = model.decoupled() if groups is None else model.partition_decouple(groups)
    normals = _generator(seed).standard_normal((replicas, model.dimension))
    lhs = functional(model.transform(normals))
    rhs = functional(reference.transform(normals))
    difference = lhs - rhs
    difference_stderr = float(np.std(difference, ddof=1)) / math.sqrt(replicas)
    mean_difference = float(np.mean(difference))
    if difference_stderr == 0.0:
        z_score = 0.0 if mean_difference == 0.0 else math.copysign(math.inf, mean_difference)
    else:
        z_score = mean_difference / difference_stderr
    report = KahaneReport(
        lhs=float(np.mean(lhs)),
        lhs_stderr=float(np.std(lhs, ddof=1)) / math.sqrt(replicas),
        rhs=float(np.mean(rhs)),
        rhs_stderr=float(np.std(rhs, ddof=1)) / math.sqrt(replicas),
        z_score=z_score,
        replicas=replicas,
    )
    logger.info(f"Kahane comparison for '{functional.name}': z = {z_score:+.2f}")
    return report


# ---------------------------------------------------------------------------
# Girsanov
# ---------------------------------------------------------------------------


@dataclass
class GirsanovReport:
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float
    z_score: float
    closed_form_lhs: float | None = None
    closed_form_rhs: float | None = None

    @property
    def closed_form_gap(self) -> float | None:
        if self.closed_form_lhs is None:
            return None
        return abs(self.closed_form_lhs - self.closed_form_rhs)

    @property
    def closed_form_z_scores(self) -> tuple[float, float] | None:
        """Distance of each Monte Carlo side from its closed form, in standard errors."""
        if self.closed_form_lhs is None:
            return None

        def distance(estimate, stderr, exact):
            if stderr == 0.0:
                return 0.0 if estimate == exact else math.inf
            return (estimate - exact) / stderr

        return (
            distance(self.lhs, self.lhs_stderr, self.closed_form_lhs),
            distance(self.rhs, self.rhs_stderr, self.closed_form_rhs),
        )

    @property
    def passed(self) -> bool:
        if abs(self.z_score) > GIRSANOV_SIGMA:
            return False
        if self.closed_form_lhs is None:
            return True
        exact = self.closed_form_gap <= CLOSED_FORM_TOLERANCE * max(1.0, abs(self.closed_form_rhs))
        return exact and all(abs(z) <= GIRSANOV_SIGMA for z in self.closed_form_z_scores)

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "lhs_stderr": self.lhs_stderr,
            "rhs": self.rhs,
            "rhs_stderr": self.rhs_stderr,
            "z_score": self.z_score,
            "closed_form_lhs": self.closed_form_lhs,
            "closed_form_rhs": self.closed_form_rhs,
            "closed_form_z_scores": self.closed_form_z_scores,
            "passed": self.passed,
        }


def _direction(model: SmallGaussianModel, weight) -> np.ndarray:
    if isinstance(weight, (int, np.integer)):
        if not 0 <= weight < model.dimension:
            raise InputError(f"weight index {weight} outside 0..{model.dimension - 1}")
        direction = np.zeros(model.dimension)
        direction[weight] = 1.0
        return direction
    direction = np.asarray(weight, dtype=float).reshape(-1)
    if direction.shape != (model.dimension,):
        raise InputError(f"weight must have {model.dimension} entries")
    return direction


def girsanov_closed_form(
    model: SmallGaussianModel, weight, functional: QuadraticFunctional
) -> tuple[float, float]:
    """Both sides of the Girsanov identity for a quadratic F, evaluated independently."""
    direction = _direction(model, weight)
    shift = model.covariance @ direction
    return (
        functional.tilted_expectation(model.covariance, shift),
        functional.shifted_expectation(model.covariance, shift),
    )


def girsanov_verify(
    model: SmallGaussianModel,
    weight,
    functional: Functional,
    replicas: int,
    seed: int,
) -> GirsanovReport:
    """E[e^(Z - Var Z / 2) F(X)] against E[F(X + E[Z X])] with Z = <weight, X>."""
    direction = _direction(model, weight)
    shift = model.covariance @ direction
    variance = float(direction @ shift)
    normals = _generator(seed).standard_normal((replicas, model.dimension))
    x = model.transform(normals)
    flat = x.reshape(replicas, -1)
    lhs = np.exp(flat @ direction - 0.5 * variance) * functional(x)
    rhs = functional((flat + shift).reshape(x.shape))
    lhs_stderr = float(np.std(lhs, ddof=1)) / math.sqrt(replicas)
    rhs_stderr = float(np.std(rhs, ddof=1)) / math.sqrt(replicas)
    # paired spread over shared normals
    difference = lhs - rhs
    spread = float(np.std(difference, ddof=1)) / math.sqrt(replicas)
    z_score = 0.0 if spread == 0.0 else float(np.mean(difference)) / spread

    closed = (None, None)
    if isinstance(functional, QuadraticFunctional):
        closed = girsanov_closed_form(model, weight, functional)
    report = GirsanovReport(
        lhs=float(np.mean(lhs)),
        lhs_stderr=lhs_stderr,
        rhs=float(np.mean(rhs)),
        rhs_stderr=rhs_stderr,
        z_score=z_score,
        closed_form_lhs=closed[0],
        closed_form_rhs=closed[1],
    )
    logger.info(f"Girsanov check for '{functional.name}': z = {z_score:+.2f}")
    return report
