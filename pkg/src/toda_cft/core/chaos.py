import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from toda_cft.core.errors import InputError, NumericalError
from toda_cft.core.field_sampler import (
    DEFAULT_CHUNK_SIZE,
    DEFAULT_CLEARANCE,
    CovarianceModel,
    FieldSample,
    build_covariance,
    map_replica_chunks,
    oriented_points,
    sample_block,
    weight_coefficients,
)
from toda_cft.core.lie_structure import CartanVector, build_algebra, inner_product, validate_points

logger = logging.getLogger(__name__)

LOG_MASS_LIMIT = 700.0
THRESHOLD = 4.0
# no verdict is issued for |alpha|^2 inside this band
INDETERMINATE_BAND = (3.9, 4.1)
STABLE_SPREAD = 0.10

Insertions = Sequence[tuple[complex, CartanVector]]


@dataclass(frozen=True, eq=False)
class ChaosMeasure:
    """GMC masses of one replica, stored as logs, shape (r, N)."""

    log_masses: np.ndarray
    insertions: tuple = ()
    epsilon: float = math.nan
    seed: int = 0
    replica_index: int = 0

    @property
    def masses(self) -> np.ndarray:
        return np.exp(self.log_masses)

    def total_log_masses(self) -> np.ndarray:
        return logsumexp(self.log_masses, axis=-1)

    def total_masses(self) -> np.ndarray:
        return np.exp(self.total_log_masses())


def _gamma(gamma) -> float:
    value = float(gamma)
    if not (0.0 <= value < math.sqrt(2.0)):
        raise InputError(f"gamma must lie in [0, sqrt(2)), got {value}")
    return value


def cell_log_weights(model: CovarianceModel, gamma: float) -> np.ndarray:
    """Log of the reference volume each Wick exponential is integrated against."""
    log_volume = np.log(model.grid.cell_volume)
    if model.metric is None:
        return log_volume
    metric = model.metric
    return log_volume + metric.phi_values + gamma**2 * metric.node_variance_offset()


def _guard(log_masses: np.ndarray) -> np.ndarray:
    if np.any(log_masses > LOG_MASS_LIMIT):
        where = np.argwhere(log_masses > LOG_MASS_LIMIT)[0]
        i, n = int(where[-2]) + 1, int(where[-1])
        raise NumericalError(
            f"Log-mass exceeds {LOG_MASS_LIMIT:g} in direction {i}, node {n}; epsilon is mis-scaled"
        )
    return log_masses


def wick_log_masses(values: np.ndarray, model: CovarianceModel, gamma) -> np.ndarray:
    """Log-masses for field values of shape (..., r, N)."""
    gamma = _gamma(gamma)
    variance = np.outer(np.diag(model.algebra.cartan_array), model.spatial_diagonal)
    log_masses = gamma * values - 0.5 * gamma**2 * variance + cell_log_weights(model, gamma)
    return _guard(log_masses)


def gmc_from_sample(sample: FieldSample, model: CovarianceModel, gamma) -> ChaosMeasure:
    return ChaosMeasure(
        log_masses=wick_log_masses(sample.values, model, gamma),
        epsilon=model.epsilon,
        seed=sample.seed,
        replica_index=sample.replica_index,
    )


def _insertion_data(
    insertions: Insertions, model: CovarianceModel, clearance: float
) -> tuple[list[complex], np.ndarray]:
    points = [complex(z) for z, _ in insertions]
    validate_points(points)
    model.grid.check_clearance(points, clearance)
    coefficients = np.stack([weight_coefficients(alpha, model) for _, alpha in insertions])
    return points, coefficients


def insertion_log_shift(
    insertions: Insertions,
    model: CovarianceModel,
    gamma,
    clearance: float = DEFAULT_CLEARANCE,
) -> np.ndarray:
    """gamma * sum_k <alpha_k, e_i> G(x_n, z_k), shape (r, N)."""
    gamma = _gamma(gamma)
    if not insertions:
        return np.zeros((model.algebra.rank, model.grid.resolution))
    points, coefficients = _insertion_data(insertions, model, clearance)
    columns, _ = model.insertion_columns(points)
    return gamma * (coefficients.T @ columns)


def girsanov_log_offset(insertions: Insertions, means: np.ndarray, model: CovarianceModel) -> np.ndarray:
    """Log normalization of the insertion tilt left over by the continuum pair and vertex terms.

    The projected field at z is the raw one minus the weighted mean of the raw
    field, so every covariance between insertions moves by kappa - c_k - c_l
    with c the raw column means (shape (..., K)) and kappa = w^T C w.
    """
    gram = np.array([[float(inner_product(a, b)) for _, b in insertions] for _, a in insertions])
    return 0.5 * model.kernel_mean * gram.sum() - means @ gram.sum(axis=1)


def oriented_insertion_shift(
    insertions: Insertions,
    model: CovarianceModel,
    gamma,
    seed: int,
    replica_indices: Sequence[int],
) -> tuple[np.ndarray, np.ndarray]:
    """Insertion log shifts (B, r, N) and Girsanov offsets (B,) on each replica's rotated grid."""
    gamma = _gamma(gamma)
    if not model.isotropic:
        raise InputError("Random grid orientation needs a rotation-invariant covariance model")
    coefficients = np.stack([weight_coefficients(alpha, model) for _, alpha in insertions])
    unit = oriented_points(seed, replica_indices, [z for z, _ in insertions])
    columns, means = model.project_columns(model.raw_columns(unit))
    shift = gamma * np.einsum("kr,bkn->brn", coefficients, columns)
    return shift, girsanov_log_offset(insertions, means, model)


def tilted_log_masses(
    model: CovarianceModel,
    gamma,
    seed: int,
    replicas: int,
    insertions: Insertions,
    clearance: float = DEFAULT_CLEARANCE,
    extra_shift: np.ndarray | None = None,
    oriented: bool | None = None,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> tuple[np.ndarray, np.ndarray]:
    """Log total masses (replicas, r) under the insertion tilt and the Girsanov offsets (replicas,).

    Isotropic models draw a fresh grid orientation per replica unless
    oriented is False; the proximity rule always applies to the fixed grid.
    """
    gamma = _gamma(gamma)
    points, coefficients = _insertion_data(insertions, model, clearance)
    if oriented is None:
        oriented = model.isotropic

    if oriented:

        def block(chunk):
            shift, offset = oriented_insertion_shift(insertions, model, gamma, seed, chunk)
            if extra_shift is not None:
                shift = shift + extra_shift
            totals = total_log_mass_block(model, gamma, seed, chunk, shift)
            return np.column_stack([totals, offset])

    else:
        columns, means = model.insertion_columns(points)
        shift = gamma * (coefficients.T @ columns)
        if extra_shift is not None:
            shift = shift + extra_shift
        offset = float(girsanov_log_offset(insertions, means, model))

        def block(chunk):
            totals = total_log_mass_block(model, gamma, seed, chunk, shift)
            return np.column_stack([totals, np.full(len(totals), offset)])

    combined = map_replica_chunks(block, replicas, workers=workers, chunk_size=chunk_size)
    return combined[:, :-1], combined[:, -1]


def shift_measure(
    measure: ChaosMeasure,
    insertions: Insertions,
    model: CovarianceModel,
    gamma,
    clearance: float = DEFAULT_CLEARANCE,
) -> ChaosMeasure:
    shift = insertion_log_shift(insertions, model, gamma, clearance)
    return replace(
        measure,
        log_masses=_guard(measure.log_masses + shift),
        insertions=measure.insertions + tuple((complex(z), a) for z, a in insertions),
    )


def total_log_mass_block(
    model: CovarianceModel,
    gamma,
    seed: int,
    replica_indices: Sequence[int],
    log_shift: np.ndarray | None = None,
) -> np.ndarray:
    """Per-direction log total masses for a block of replicas, shape (B, r)."""
    log_masses = wick_log_masses(sample_block(model, seed, replica_indices), model, gamma)
    if log_shift is not None:
        log_masses = _guard(log_masses + log_shift)
    return logsumexp(log_masses, axis=-1)


def total_log_masses(
    model: CovarianceModel,
    gamma,
    seed: int,
    replicas: int,
    log_shift: np.ndarray | None = None,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> np.ndarray:
    """Log total masses of replicas 0..replicas-1, shape (replicas, r)."""
    return map_replica_chunks(
        lambda chunk: total_log_mass_block(model, gamma, seed, chunk, log_shift),
        replicas,
        workers=workers,
        chunk_size=chunk_size,
    )


def gmc_traces(
    model: CovarianceModel,
    gamma,
    seed: int,
    replicas: int,
    insertions: Insertions = (),
    clearance: float = DEFAULT_CLEARANCE,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> pd.DataFrame:
    """Per-replica total masses as a long table (replica, direction, total_mass)."""
    log_shift = insertion_log_shift(insertions, model, gamma, clearance) if insertions else None
    totals = np.exp(
        total_log_masses(model, gamma, seed, replicas, log_shift, workers, chunk_size)
    )
    rank = totals.shape[1]
    return pd.DataFrame(
        {
            "replica": np.repeat(np.arange(replicas), rank),
            "direction": np.tile(np.arange(1, rank + 1), replicas),
            "total_mass": totals.reshape(-1),
        }
    )


# ---------------------------------------------------------------------------
# Threshold probe
# ---------------------------------------------------------------------------


@dataclass
class ThresholdReport:
    weight_scale: float
    alpha_norm_sq: float
    levels: list[dict] = field(default_factory=list)
    verdict: str = "indeterminate"

    @property
    def medians(self) -> list[float]:
        return [level["median_total_mass"] for level in self.levels]

    def to_dict(self) -> dict:
        return {
            "weight_scale": self.weight_scale,
            "alpha_norm_sq": self.alpha_norm_sq,
            "levels": self.levels,
            "verdict": self.verdict,
        }


def _probe_verdict(alpha_norm_sq: float, medians: list[float]) -> str:
    low, high = INDETERMINATE_BAND
    if low <= alpha_norm_sq <= high:
        return "indeterminate"
    if alpha_norm_sq < THRESHOLD:
        finest = medians[-1]
        spread = max(abs(m - finest) for m in medians) / finest
        return "stable" if spread <= STABLE_SPREAD else "unsettled"
    decreasing = all(fine < coarse for coarse, fine in zip(medians, medians[1:]))
    return "collapsing" if decreasing else "unsettled"


def vertex_threshold_probe(
    weight_scale: float,
    model: CovarianceModel,
    replicas: int,
    seed: int = 0,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> ThresholdReport:
    """Median total mass of the chaos of alpha = a e_1 over grids N/4, N/2, N.

    Epsilon follows the cell size, so each halving of N scales it by sqrt(2).
    Medians are reported coarse to fine.
    """
    a = float(weight_scale)
    if not (math.isfinite(a) and a > 0):
        raise InputError(f"weight scale must be positive, got {weight_scale}")
    alpha_norm_sq = 2.0 * a * a
    low, high = INDETERMINATE_BAND
    if low <= alpha_norm_sq <= high:
        logger.warning(
            f"|alpha|^2 = {alpha_norm_sq:.3f} is at the threshold; trend reported without verdict"
        )

    single = build_algebra("A1")
    report = ThresholdReport(weight_scale=a, alpha_norm_sq=alpha_norm_sq)
    for factor in (4, 2, 1):
        grid = model.grid if factor == 1 else model.grid.coarsened(factor)
        epsilon = model.epsilon * math.sqrt(factor)
        if factor == 1 and model.algebra.rank == 1 and model.metric is None:
            level_model = model
        else:
            level_model = build_covariance(grid, single, epsilon=epsilon)
        variance = 2.0 * level_model.spatial_diagonal
        log_volume = np.log(grid.cell_volume)

        def block(chunk, level_model=level_model, variance=variance, log_volume=log_volume):
            values = sample_block(level_model, seed, chunk)[:, 0, :]
            return logsumexp(a * values - 0.5 * a * a * variance + log_volume, axis=-1)

        log_totals = map_replica_chunks(block, replicas, workers=workers, chunk_size=chunk_size)
        report.levels.append(
            {
                "grid_n": grid.resolution,
                "epsilon": epsilon,
                "median_total_mass": float(np.exp(np.median(log_totals))),
                "mean_total_mass": float(np.mean(np.exp(log_totals))),
            }
        )
    report.verdict = _probe_verdict(alpha_norm_sq, report.medians)
    logger.info(
        f"Threshold probe |alpha|^2={alpha_norm_sq:.3f}: medians {report.medians} -> {report.verdict}"
    )
    return report
