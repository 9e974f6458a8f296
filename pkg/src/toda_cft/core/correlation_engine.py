"""Toda correlation functions through their chaos representation.

The zero mode is integrated out analytically, leaving a deterministic prefactor
times a negative moment E[prod_i M_i^(-s_i)] of insertion-shifted chaos masses.
All replica reductions run in log space with compensated summation.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import quad

from toda_cft.core.chaos import tilted_log_masses
from toda_cft.core.errors import InputError, NumericalError, SeibergRejection
from toda_cft.core.field_sampler import (
    DEFAULT_CHUNK_SIZE,
    DEFAULT_CLEARANCE,
    CovarianceModel,
    build_covariance,
)
from toda_cft.core.lie_structure import (
    AlgebraData,
    CartanVector,
    CouplingParams,
    SeibergVerdict,
    background_charge,
    central_charge,
    conformal_weight,
    inner_product,
    seiberg_check,
    seiberg_parameters,
    validate_points,
)
from toda_cft.core.special_functions import log_gamma
from toda_cft.core.sphere_geometry import (
    ConformalFactor,
    ConformalMetric,
    MobiusMap,
    SphereGrid,
    green_round,
    liouville_functional,
    log_round_metric,
    round_metric,
)

logger = logging.getLogger(__name__)

NORMALIZATION = "Z(g_round) = det(A)^(-1/2), cancelled by the zero-mode Jacobian det(A)^(1/2)"
ZERO_MODE_RANGE = 40.0
COVARIANCE_SIGMA = 3.0
WEYL_TOLERANCE = 0.10


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InsertionSet:
    """Vertex insertions (z_k, alpha_k), kept in canonical (re, im) order."""

    entries: tuple[tuple[complex, CartanVector], ...]

    def __post_init__(self):
        entries = tuple((complex(z), alpha) for z, alpha in self.entries)
        if not entries:
            raise InputError("At least one insertion is required")
        validate_points([z for z, _ in entries])
        spec = entries[0][1].algebra.spec
        for k, (_, alpha) in enumerate(entries, start=1):
            if alpha.algebra.spec != spec:
                raise InputError(f"insertion {k} belongs to a different algebra")
        entries = tuple(sorted(entries, key=lambda entry: (entry[0].real, entry[0].imag)))
        object.__setattr__(self, "entries", entries)

    @classmethod
    def of(cls, entries: Iterable[tuple[complex, CartanVector]]) -> "InsertionSet":
        return entries if isinstance(entries, InsertionSet) else cls(tuple(entries))

    @property
    def points(self) -> list[complex]:
        return [z for z, _ in self.entries]

    @property
    def weights(self) -> list[CartanVector]:
        return [alpha for _, alpha in self.entries]

    def mapped(self, psi: MobiusMap) -> "InsertionSet":
        return InsertionSet(tuple((psi(z), alpha) for z, alpha in self.entries))

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class SiVector:
    s: tuple

    @classmethod
    def of(cls, insertions, data: AlgebraData, params: CouplingParams) -> "SiVector":
        return cls(seiberg_parameters(list(InsertionSet.of(insertions)), data, params))

    def as_array(self) -> np.ndarray:
        return np.array([float(si) for si in self.s])


@dataclass(frozen=True)
class McBudget:
    replicas: int
    seed: int
    workers: int = 1
    chunk_size: int = DEFAULT_CHUNK_SIZE

    def __post_init__(self):
        if self.replicas < 2:
            raise InputError(f"At least 2 replicas are needed for an error bar, got {self.replicas}")
        if not 0 <= self.seed < 2**64:
            raise InputError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.workers < 1 or self.chunk_size < 1:
            raise InputError("workers and chunk_size must be positive")

    def with_seed(self, seed: int) -> "McBudget":
        return McBudget(self.replicas, seed, self.workers, self.chunk_size)


@dataclass
class McEstimate:
    value: float
    stderr: float
    log_value: float
    replicas: int
    seed: int
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "log_value": self.log_value,
            "replicas": self.replicas,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# Deterministic parts
# ---------------------------------------------------------------------------


def _gated(insertions, data: AlgebraData, params: CouplingParams) -> tuple[InsertionSet, SeibergVerdict]:
    insertions = InsertionSet.of(insertions)
    params.check_rank(data)
    verdict = seiberg_check(list(insertions), data, params)
    if not verdict.passed:
        raise SeibergRejection(verdict)
    return insertions, verdict


def zero_mode_log_factor(s: Sequence, params: CouplingParams) -> float:
    """sum_i [ln Gamma(s_i) - s_i ln mu_i - ln gamma]."""
    gamma = float(params.gamma)
    return math.fsum(
        log_gamma(float(si)) - float(si) * math.log(float(mu)) - math.log(gamma)
        for si, mu in zip(s, params.mu)
    )


def pair_log_factor(insertions: InsertionSet, green=green_round) -> float:
    entries = insertions.entries
    return math.fsum(
        float(inner_product(entries[k][1], entries[l][1])) * float(green(entries[k][0], entries[l][0]))
        for k in range(len(entries))
        for l in range(k + 1, len(entries))
    )


def prefactor(insertions, data: AlgebraData, params: CouplingParams) -> float:
    """Log of the deterministic factor in front of the chaos negative moment (round metric)."""
    insertions = InsertionSet.of(insertions)
    params.check_rank(data)
    s = seiberg_parameters(list(insertions), data, params)
    if any(not si > 0 for si in s):
        raise SeibergRejection(seiberg_check(list(insertions), data, params))
    vertex = math.fsum(
        float(conformal_weight(alpha, data, params)) * log_round_metric(z)
        for z, alpha in insertions
    )
    return zero_mode_log_factor(s, params) + vertex + pair_log_factor(insertions)


# ---------------------------------------------------------------------------
# Monte Carlo factor
# ---------------------------------------------------------------------------


def _replica_log_weights(
    model: CovarianceModel,
    insertions: InsertionSet,
    s: np.ndarray,
    gamma: float,
    budget: McBudget,
    clearance: float,
    extra_shift: np.ndarray | None = None,
) -> np.ndarray:
    """-sum_i s_i ln M_i plus the Girsanov offset, per replica."""
    totals, offsets = tilted_log_masses(
        model,
        gamma,
        budget.seed,
        budget.replicas,
        list(insertions),
        clearance,
        extra_shift=extra_shift,
        workers=budget.workers,
        chunk_size=budget.chunk_size,
    )
    return offsets - totals @ s


def _log_mean(log_weights: np.ndarray) -> tuple[float, float]:
    """ln mean(exp(w)) and the relative standard error of that mean."""
    top = float(np.max(log_weights))
    scaled = np.exp(log_weights - top)
    mean = math.fsum(scaled) / len(scaled)
    relative = float(np.std(scaled, ddof=1)) / math.sqrt(len(scaled)) / mean
    return top + math.log(mean), relative


def _estimate(log_prefactor: float, log_weights: np.ndarray, budget: McBudget, metadata: dict) -> McEstimate:
    log_mc, relative = _log_mean(log_weights)
    log_value = log_prefactor + log_mc
    if log_value > 700.0:
        raise NumericalError(f"Correlation overflows double precision (log value {log_value:.1f})")
    value = math.exp(log_value)
    return McEstimate(
        value=value,
        stderr=value * relative,
        log_value=log_value,
        replicas=budget.replicas,
        seed=budget.seed,
        metadata=metadata,
    )


def _metadata(model: CovarianceModel) -> dict:
    return {
        **model.metadata(),
        "normalization": NORMALIZATION,
        "quadrature": "fibonacci equal-volume cells, cap-averaged insertion kernel",
        "orientation": "haar-random per replica" if model.isotropic else "fixed",
        "rng": "philox4x64, key (replica << 64) | seed",
    }


def estimate_correlation(
    insertions,
    data: AlgebraData,
    params: CouplingParams,
    grid: SphereGrid,
    budget: McBudget,
    epsilon: float | None = None,
    clearance: float = DEFAULT_CLEARANCE,
    model: CovarianceModel | None = None,
) -> McEstimate:
    insertions, verdict = _gated(insertions, data, params)
    if model is None:
        model = build_covariance(grid, data, epsilon)
    s = SiVector.of(insertions, data, params).as_array()
    log_weights = _replica_log_weights(
        model, insertions, s, float(params.gamma), budget, clearance
    )
    estimate = _estimate(prefactor(insertions, data, params), log_weights, budget, _metadata(model))
    logger.info(
        f"Correlation estimate for {data.label} with {len(insertions)} insertions: "
        f"{estimate.value:.6g} +/- {estimate.stderr:.2g} ({budget.replicas} replicas)"
    )
    return estimate


def spawn_seeds(seed: int, count: int) -> list[int]:
    """Independent 64-bit seeds derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


# ---------------------------------------------------------------------------
# Conformal covariance
# ---------------------------------------------------------------------------


@dataclass
class CovarianceReport:
    left: McEstimate
    right: McEstimate
    log_jacobian: float
    z_score: float

    @property
    def passed(self) -> bool:
        return abs(self.z_score) <= COVARIANCE_SIGMA

    def to_dict(self) -> dict:
        return {
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
            "log_jacobian": self.log_jacobian,
            "z_score": self.z_score,
            "passed": self.passed,
        }


def covariance_test(
    insertions,
    psi: MobiusMap,
    data: AlgebraData,
    params: CouplingParams,
    grid: SphereGrid,
    budget: McBudget,
    epsilon: float | None = None,
    clearance: float = DEFAULT_CLEARANCE,
    model: CovarianceModel | None = None,
) -> CovarianceReport:
    """Compare C(psi z) with prod |psi'(z_k)|^(-2 Delta_k) C(z) on independent seeds."""
    insertions, _ = _gated(insertions, data, params)
    mapped, _ = _gated(insertions.mapped(psi), data, params)
    if model is None:
        model = build_covariance(grid, data, epsilon)
    left_seed, right_seed = spawn_seeds(budget.seed, 2)

    left = estimate_correlation(
        mapped, data, params, grid, budget.with_seed(left_seed), clearance=clearance, model=model
    )
    base = estimate_correlation(
        insertions, data, params, grid, budget.with_seed(right_seed), clearance=clearance, model=model
    )
    log_jacobian = -math.fsum(
        2.0 * float(conformal_weight(alpha, data, params)) * math.log(abs(psi.derivative(z)))
        for z, alpha in insertions
    )
    scale = math.exp(log_jacobian)
    right = McEstimate(
        value=base.value * scale,
        stderr=base.stderr * scale,
        log_value=base.log_value + log_jacobian,
        replicas=base.replicas,
        seed=base.seed,
        metadata=base.metadata,
    )
    z_score = (left.value - right.value) / math.hypot(left.stderr, right.stderr)
    logger.info(f"Covariance test under psi={psi.to_string()}: z = {z_score:+.2f}")
    return CovarianceReport(left=left, right=right, log_jacobian=log_jacobian, z_score=z_score)


# ---------------------------------------------------------------------------
# Weyl anomaly
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CurvatureCoupling:
    """Girsanov data of the linear curvature term in metric e^phi g_round.

    u(x) = -(1/4 pi) integral of R_g G_g(x, .) dv_g; the singular part is
    integrated analytically through Green's identity.
    """

    metric: ConformalMetric
    density: np.ndarray
    phi_mean_round: float
    node_potential: np.ndarray

    @classmethod
    def of(cls, metric: ConformalMetric) -> "CurvatureCoupling":
        grid = metric.grid
        if metric.phi is None:
            zeros = np.zeros(grid.resolution)
            return cls(metric, 2.0 * np.ones(grid.resolution), 0.0, zeros)
        # e^phi R_g = 2 - Laplacian_round(phi)
        density = 2.0 - metric.phi.laplacian(grid.points) / round_metric(grid.points)
        phi_mean = float(metric.round_weights @ metric.phi_values)
        source = density * grid.cell_volume
        smooth = metric.node_green_difference() @ source
        node_potential = -0.5 * (metric.phi_values - phi_mean) - smooth / (4.0 * math.pi)
        return cls(metric, density, phi_mean, node_potential)

    def potential(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        metric = self.metric
        if metric.phi is None:
            return np.zeros(z.shape)
        difference = (
            -metric.mean_shift(z)[:, None]
            - metric.node_mean_shift[None, :]
            + metric.theta_shift
        )
        smooth = difference @ (self.density * metric.grid.cell_volume)
        return -0.5 * (metric.phi(z) - self.phi_mean_round) - smooth / (4.0 * math.pi)

    def variance(self, charge_norm_sq: float) -> float:
        """Variance of the linear curvature functional of the field."""
        grid = self.metric.grid
        return -charge_norm_sq / (4.0 * math.pi) * float(
            np.dot(self.density * self.node_potential, grid.cell_volume)
        )


def metric_prefactor(
    insertions: InsertionSet,
    data: AlgebraData,
    params: CouplingParams,
    metric: ConformalMetric,
    coupling: CurvatureCoupling,
) -> float:
    """Deterministic log factor of the correlation in metric e^phi g_round, anomaly included."""
    s = seiberg_parameters(list(insertions), data, params)
    charge = background_charge(data, params)
    charge_norm_sq = float(inner_product(charge, charge))
    phi = metric.phi
    log_det = 0.0 if phi is None else data.rank / (96.0 * math.pi) * liouville_functional(phi, metric.grid)

    points = np.array(insertions.points)
    phi_at = np.zeros(len(points)) if phi is None else phi(points)
    offsets = metric.variance_offset(points)
    potentials = coupling.potential(points)
    vertex = math.fsum(
        float(conformal_weight(alpha, data, params)) * (log_round_metric(z) + phi_at[k])
        + 0.5 * float(inner_product(alpha, alpha)) * offsets[k]
        + float(inner_product(alpha, charge)) * potentials[k]
        for k, (z, alpha) in enumerate(insertions)
    )

    def green(x, y):
        return green_round(x, y) + float(metric.green_difference(x, y)[0])

    return (
        log_det
        + zero_mode_log_factor(s, params)
        + vertex
        + pair_log_factor(insertions, green)
        + 0.5 * coupling.variance(charge_norm_sq)
    )


def metric_log_weights(
    insertions,
    data: AlgebraData,
    params: CouplingParams,
    grid: SphereGrid,
    phi: ConformalFactor | None,
    budget: McBudget,
    epsilon: float | None = None,
    clearance: float = DEFAULT_CLEARANCE,
) -> tuple[float, np.ndarray, CovarianceModel]:
    """Log prefactor and per-replica log weights of the correlation in metric e^phi g_round."""
    insertions, _ = _gated(insertions, data, params)
    if epsilon is None:
        epsilon = grid.mean_neighbor_distance
    metric = ConformalMetric(phi, grid)
    model = build_covariance(grid, data, epsilon, metric=metric)
    coupling = CurvatureCoupling.of(metric)
    gamma = float(params.gamma)
    # <Q, e_i> = q for every i
    curvature_shift = gamma * float(params.q) * coupling.node_potential
    s = SiVector.of(insertions, data, params).as_array()
    log_weights = _replica_log_weights(
        model,
        insertions,
        s,
        gamma,
        budget,
        clearance,
        extra_shift=np.broadcast_to(curvature_shift, (data.rank, grid.resolution)),
    )
    return metric_prefactor(insertions, data, params, metric, coupling), log_weights, model


def metric_log_correlation(
    insertions,
    data: AlgebraData,
    params: CouplingParams,
    grid: SphereGrid,
    phi: ConformalFactor | None,
    budget: McBudget,
    epsilon: float | None = None,
    clearance: float = DEFAULT_CLEARANCE,
) -> McEstimate:
    log_prefactor, log_weights, model = metric_log_weights(
        insertions, data, params, grid, phi, budget, epsilon, clearance
    )
    return _estimate(log_prefactor, log_weights, budget, _metadata(model))


@dataclass
class WeylReport:
    round_estimate: McEstimate
    metric_estimate: McEstimate
    anomaly_log_factor: float
    observed_log_ratio: float
    log_ratio_stderr: float

    @property
    def relative_deviation(self) -> float:
        return math.expm1(self.observed_log_ratio - self.anomaly_log_factor)

    @property
    def sigma_distance(self) -> float:
        if self.log_ratio_stderr == 0.0:
            return 0.0 if self.observed_log_ratio == self.anomaly_log_factor else math.inf
        return (self.observed_log_ratio - self.anomaly_log_factor) / self.log_ratio_stderr

    @property
    def passed(self) -> bool:
        return abs(self.relative_deviation) <= WEYL_TOLERANCE

    def to_dict(self) -> dict:
        return {
            "round": self.round_estimate.to_dict(),
            "metric": self.metric_estimate.to_dict(),
            "anomaly_log_factor": self.anomaly_log_factor,
            "observed_log_ratio": self.observed_log_ratio,
            "log_ratio_stderr": self.log_ratio_stderr,
            "relative_deviation": self.relative_deviation,
            "sigma_distance": self.sigma_distance,
            "passed": self.passed,
        }


def weyl_anomaly_test(
    insertions,
    phi: ConformalFactor,
    data: AlgebraData,
    params: CouplingParams,
    grid: SphereGrid,
    budget: McBudget,
    epsilon: float | None = None,
    clearance: float = DEFAULT_CLEARANCE,
) -> WeylReport:
    """Metric pipeline against exp((c_T / 96 pi) S_L(phi)) times the round pipeline, matched seeds."""
    round_prefactor, round_weights, round_model = metric_log_weights(
        insertions, data, params, grid, None, budget, epsilon, clearance
    )
    metric_prefactor_, metric_weights, metric_model = metric_log_weights(
        insertions, data, params, grid, phi, budget, epsilon, clearance
    )
    round_estimate = _estimate(round_prefactor, round_weights, budget, _metadata(round_model))
    metric_estimate = _estimate(metric_prefactor_, metric_weights, budget, _metadata(metric_model))

    anomaly = float(central_charge(data, params)) / (96.0 * math.pi) * liouville_functional(phi, grid)
    # paired delta method on the ratio of the two replica means
    a = np.exp(metric_weights - np.max(metric_weights))
    b = np.exp(round_weights - np.max(round_weights))
    residual = a / a.mean() - b / b.mean()
    log_ratio_stderr = float(np.std(residual, ddof=1)) / math.sqrt(len(residual))

    report = WeylReport(
        round_estimate=round_estimate,
        metric_estimate=metric_estimate,
        anomaly_log_factor=anomaly,
        observed_log_ratio=metric_estimate.log_value - round_estimate.log_value,
        log_ratio_stderr=log_ratio_stderr,
    )
    logger.info(
        f"Weyl test for '{phi.name}': predicted log factor {anomaly:.6f}, "
        f"observed {report.observed_log_ratio:.6f} ({report.sigma_distance:+.2f} sigma)"
    )
    return report


# ---------------------------------------------------------------------------
# Zero mode
# ---------------------------------------------------------------------------


def zero_mode_oracle(z_total_mass: float, s: float, mu: float, params: CouplingParams | float) -> float:
    """Relative deviation of the quadrature of int e^(s gamma c - mu e^(gamma c) z) dc from Gamma(s)(mu z)^-s / gamma."""
    gamma = float(params.gamma) if isinstance(params, CouplingParams) else float(params)
    s, mu, z = float(s), float(mu), float(z_total_mass)
    if not s > 0:
        raise InputError(f"The zero-mode integral diverges for s = {s} <= 0")
    if not (mu > 0 and z > 0 and gamma > 0):
        raise InputError("mu, the total mass and gamma must be positive")

    # t = gamma c; the integrand peaks at t* = ln(s / (mu z))
    scale = mu * z
    peak = math.log(s / scale)
    log_peak = s * peak - s

    def integrand(t: float) -> float:
        return math.exp(s * t - scale * math.exp(t) - log_peak)

    value, _ = quad(
        integrand,
        -ZERO_MODE_RANGE,
        ZERO_MODE_RANGE,
        points=[peak] if -ZERO_MODE_RANGE < peak < ZERO_MODE_RANGE else None,
        epsabs=0.0,
        epsrel=1e-12,
        limit=500,
    )
    log_numeric = math.log(value) + log_peak - math.log(gamma)
    log_exact = log_gamma(s) - s * math.log(scale) - math.log(gamma)
    return abs(math.expm1(log_numeric - log_exact))
