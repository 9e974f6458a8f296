import logging
import math
from dataclasses import dataclass
from functools import cached_property
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from toda_cft.core.errors import InputError
from toda_cft.core.lie_structure import AlgebraData, CartanVector
from toda_cft.core.sphere_geometry import (
    LOG_TWO,
    ConformalMetric,
    SphereGrid,
    cap_log_average,
    inverse_stereographic,
)

logger = logging.getLogger(__name__)

THETA_ETA = LOG_TWO - 0.5
CLIP_WARNING_FRACTION = 0.05
# insertions closer than this fraction of a cell radius to a node are rejected
DEFAULT_CLEARANCE = 0.02
_ROW_CHUNK = 512


def symmetric_sqrt(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric PSD square root with negative eigenvalues clipped; also returns the raw spectrum."""
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    clipped = np.clip(eigenvalues, 0.0, None)
    root = (eigenvectors * np.sqrt(clipped)) @ eigenvectors.T
    return 0.5 * (root + root.T), eigenvalues


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """Regularized covariance A (x) S of the r-component field on a grid.

    Only the symmetric square roots are stored; the spatial factor S is
    rebuilt on demand.
    """

    grid: SphereGrid
    algebra: AlgebraData
    epsilon: float
    theta_eta: float
    cartan_root: np.ndarray
    spatial_root: np.ndarray
    spatial_diagonal: np.ndarray
    projection_weights: np.ndarray
    raw_row_mean: np.ndarray
    clipped_fraction: float
    min_eigenvalue_ratio: float
    metric: ConformalMetric | None = None

    @cached_property
    def spatial_factor(self) -> np.ndarray:
        return self.spatial_root @ self.spatial_root

    @property
    def clip_warning(self) -> bool:
        return self.clipped_fraction > CLIP_WARNING_FRACTION

    def component_variance(self, i: int) -> np.ndarray:
        """Variance of <e_i, X(x_n)> for every node n (0-based i)."""
        return self.algebra.cartan[i][i] * self.spatial_diagonal

    @property
    def isotropic(self) -> bool:
        """True when the spatial kernel only depends on chordal distances."""
        return self.metric is None or self.metric.is_constant

    @cached_property
    def kernel_mean(self) -> float:
        """w^T C w of the unprojected kernel."""
        return float(self.projection_weights @ self.raw_row_mean)

    def raw_columns(self, unit: np.ndarray) -> np.ndarray:
        """Unprojected round kernel between unit vectors (..., 3) and the nodes, shape (..., N).

        The cell of every node is replaced by the spherical cap of equal volume.
        """
        chord = self.grid.chord_to_nodes(unit)
        return cap_log_average(chord, self.grid.cap_chord) + LOG_TWO - 0.5

    def project_columns(self, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Projected columns and the weighted means w @ raw of the unprojected ones."""
        means = raw @ self.projection_weights
        columns = raw - self.raw_row_mean - (means - self.kernel_mean)[..., None]
        return columns, means

    def insertion_columns(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Columns of the projected field at each point, shape (K, N), and their raw means (K,)."""
        points = np.atleast_1d(np.asarray(points, dtype=complex))
        raw = self.raw_columns(inverse_stereographic(points))
        if self.metric is not None:
            raw = (
                raw
                - self.metric.node_mean_shift[None, :]
                - self.metric.mean_shift(points)[:, None]
                + self.metric.theta_shift
            )
        return self.project_columns(raw)

    def green_column(self, z: complex) -> np.ndarray:
        """Covariance between the model field at the nodes and the projected field at z."""
        columns, _ = self.insertion_columns([complex(z)])
        return columns[0]

    def node_column(self, node: int) -> np.ndarray:
        return self.spatial_root @ self.spatial_root[:, node]

    def metadata(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "theta_eta": self.theta_eta,
            "clipped_fraction": self.clipped_fraction,
            "clip_warning": self.clip_warning,
            "min_eigenvalue_ratio": self.min_eigenvalue_ratio,
            "metric": "round" if self.metric is None else self.metric.name,
            **self.grid.metadata(),
        }


def build_covariance(
    grid: SphereGrid,
    algebra: AlgebraData,
    epsilon: float | None = None,
    metric: ConformalMetric | None = None,
) -> CovarianceModel:
    if epsilon is None:
        epsilon = grid.mean_neighbor_distance
    epsilon = float(epsilon)
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise InputError(f"epsilon must be a positive finite length, got {epsilon}")

    points, log_g = grid.points, grid.log_metric
    n = grid.resolution
    kernel = np.empty((n, n))
    with np.errstate(divide="ignore"):
        for start in range(0, n, _ROW_CHUNK):
            rows = slice(start, start + _ROW_CHUNK)
            kernel[rows] = (
                -np.log(np.abs(points[rows, None] - points[None, :]))
                - 0.25 * (log_g[rows, None] + log_g[None, :])
                + LOG_TWO
                - 0.5
            )
    # epsilon is the origin-chart scale; transported round-isometrically every
    # node diagonal equals -ln(2 epsilon) + theta_eta
    local_epsilon = 2.0 * epsilon * np.exp(-0.5 * log_g)
    np.fill_diagonal(kernel, -np.log(local_epsilon) - 0.5 * log_g + THETA_ETA)

    if metric is None:
        weights = grid.cell_volume / grid.cell_volume.sum()
    else:
        kernel += metric.node_green_difference()
        weights = metric.weights

    row_mean = kernel @ weights
    # P C P^T with P = I - 1 w^T
    kernel -= row_mean[None, :]
    kernel -= row_mean[:, None]
    kernel += float(weights @ row_mean)
    kernel = 0.5 * (kernel + kernel.T)

    trace = float(np.trace(kernel))
    spatial_root, eigenvalues = symmetric_sqrt(kernel)
    del kernel
    clipped = float(-eigenvalues[eigenvalues < 0].sum())
    clipped_fraction = clipped / trace
    min_ratio = float(eigenvalues.min() / eigenvalues.max())
    spatial_diagonal = np.einsum("ij,ij->i", spatial_root, spatial_root)

    cartan_root, _ = symmetric_sqrt(algebra.cartan_array)

    if clipped_fraction > CLIP_WARNING_FRACTION:
        logger.warning(
            f"Eigenvalue clipping removed {clipped_fraction:.1%} of the trace "
            f"(grid_n={grid.resolution}, epsilon={epsilon:.4g}); the grid is under-resolved"
        )
    logger.info(
        f"Covariance model on {grid.resolution} nodes for {algebra.label}: "
        f"epsilon={epsilon:.4g}, clipped fraction={clipped_fraction:.2e}"
    )
    return CovarianceModel(
        grid=grid,
        algebra=algebra,
        epsilon=epsilon,
        theta_eta=THETA_ETA,
        cartan_root=cartan_root,
        spatial_root=spatial_root,
        spatial_diagonal=spatial_diagonal,
        projection_weights=weights,
        raw_row_mean=row_mean,
        clipped_fraction=clipped_fraction,
        min_eigenvalue_ratio=min_ratio,
        metric=metric,
    )


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FieldSample:
    values: np.ndarray
    seed: int
    replica_index: int


def replica_generator(seed: int, replica_index: int) -> np.random.Generator:
    """Philox stream keyed on (seed, replica_index)."""
    if not 0 <= seed < 2**64:
        raise InputError(f"seed must be an unsigned 64-bit integer, got {seed}")
    if not 0 <= replica_index < 2**64:
        raise InputError(f"replica index out of range: {replica_index}")
    return np.random.Generator(np.random.Philox(key=(replica_index << 64) | seed))


def replica_rotation(seed: int, replica_index: int) -> np.ndarray:
    """Haar-random orientation of the grid for one replica, as a 3 x 3 matrix.

    Drawn from the replica's Philox key jumped by 2^128 draws, so it never
    overlaps the field normals.
    """
    bit_generator = replica_generator(seed, replica_index).bit_generator.jumped()
    return Rotation.random(None, np.random.Generator(bit_generator)).as_matrix()


def oriented_points(seed: int, replica_indices: Sequence[int], points) -> np.ndarray:
    """Unit vectors of the points seen from each replica's rotated grid, shape (B, K, 3).

    A grid rotated by R holds the point z where the fixed grid holds R^-1 z.
    """
    unit = inverse_stereographic(np.atleast_1d(np.asarray(points, dtype=complex)))
    rotations = np.stack([replica_rotation(seed, int(k)) for k in replica_indices])
    # row vectors: u R == R^T u
    return unit[None, :, :] @ rotations


def sample_block(model: CovarianceModel, seed: int, replica_indices: Sequence[int]) -> np.ndarray:
    """Field values for several replicas, shape (len(replica_indices), r, N)."""
    r, n = model.algebra.rank, model.grid.resolution
    normals = np.stack(
        [replica_generator(seed, int(k)).standard_normal((r, n)) for k in replica_indices]
    )
    values = np.matmul(model.cartan_root, normals)
    values = (values.reshape(-1, n) @ model.spatial_root).reshape(len(replica_indices), r, n)
    # exact v_g-mean zero
    values -= (values @ model.projection_weights)[..., None]
    return values


def sample(model: CovarianceModel, seed: int, replica_index: int) -> FieldSample:
    values = sample_block(model, seed, [replica_index])[0]
    return FieldSample(values=values, seed=seed, replica_index=replica_index)


def weight_coefficients(weight: CartanVector, model: CovarianceModel) -> np.ndarray:
    model.algebra.zero()._check_same(weight)
    return np.array([float(w) for w in weight.weight_coords])


def pair_with_girsanov_shift(
    model: CovarianceModel,
    weight: CartanVector,
    at: complex,
    clearance: float = DEFAULT_CLEARANCE,
) -> np.ndarray:
    """Mean shift E[<weight, X(z)> X(.)] of the field, shape (r, N)."""
    model.grid.check_clearance([at], clearance)
    return weight_coefficients(weight, model)[:, None] * model.green_column(at)[None, :]


def pair_with_girsanov_shift_at_node(
    model: CovarianceModel, weight: CartanVector, node: int
) -> np.ndarray:
    return weight_coefficients(weight, model)[:, None] * model.node_column(node)[None, :]


# ---------------------------------------------------------------------------
# Replica scheduling
# ---------------------------------------------------------------------------

DEFAULT_CHUNK_SIZE = 64


def replica_chunks(replicas: int, chunk_size: int = DEFAULT_CHUNK_SIZE) -> list[range]:
    """Fixed replica blocks; boundaries never depend on the worker count."""
    if replicas < 1:
        raise InputError(f"replicas must be positive, got {replicas}")
    return [
        range(start, min(start + chunk_size, replicas))
        for start in range(0, replicas, chunk_size)
    ]


def map_replica_chunks(
    task: Callable[[range], np.ndarray],
    replicas: int,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> np.ndarray:
    """Run task over replica blocks and concatenate results in replica order."""
    chunks = replica_chunks(replicas, chunk_size)
    if workers <= 1 or len(chunks) == 1:
        results = [task(chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, chunks))
    logger.debug(f"Finished {replicas} replicas in {len(chunks)} blocks on {workers} workers")
    return np.concatenate(results, axis=0)
