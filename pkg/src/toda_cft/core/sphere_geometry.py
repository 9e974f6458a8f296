"""Round-sphere geometry in the stereographic chart.

Points of the Riemann sphere minus the north pole are complex numbers x; the
round metric is 4/(1+|x|^2)^2 |dx|^2 with total volume 4*pi.  Everything here
works on a fixed Fibonacci grid with equal round-volume cells.
"""

import cmath
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from toda_cft.core.errors import InputError, ProximityError

logger = logging.getLogger(__name__)

LOG_TWO = math.log(2.0)
SPHERE_VOLUME = 4.0 * math.pi
GRADIENT_STEP = 1e-5
LAPLACIAN_STEP = 1e-3
# rows per block when forming N x N log-kernel sums
_KERNEL_CHUNK = 512


def _as_points(x) -> np.ndarray:
    arr = np.asarray(x, dtype=complex)
    if not np.all(np.isfinite(arr)):
        raise InputError("Points must be finite; the point at infinity is excluded")
    return arr


def _scalar_or_array(value, like):
    return float(value) if np.ndim(like) == 0 else value


def round_metric(x):
    x = _as_points(x)
    return _scalar_or_array(4.0 / (1.0 + np.abs(x) ** 2) ** 2, x)


def log_round_metric(x):
    x = _as_points(x)
    return _scalar_or_array(2.0 * LOG_TWO - 2.0 * np.log1p(np.abs(x) ** 2), x)


def green_round(x, y):
    """Green function of the round sphere, mean zero against v_g."""
    x, y = _as_points(x), _as_points(y)
    distance = np.abs(x - y)
    if np.any(distance == 0):
        raise InputError("green_round is singular on the diagonal (x == y)")
    value = (
        -np.log(distance)
        - 0.25 * (log_round_metric(x) + log_round_metric(y))
        + LOG_TWO
        - 0.5
    )
    return float(value) if np.ndim(value) == 0 else value


def stereographic(unit_vectors: np.ndarray) -> np.ndarray:
    """Project unit vectors (N, 3) from the north pole onto the plane."""
    X, Y, Z = unit_vectors[:, 0], unit_vectors[:, 1], unit_vectors[:, 2]
    return (X + 1j * Y) / (1.0 - Z)


def inverse_stereographic(x) -> np.ndarray:
    x = _as_points(x)
    r2 = np.abs(x) ** 2
    return np.stack([2 * x.real, 2 * x.imag, r2 - 1.0], axis=-1) / (1.0 + r2)[..., None]


def disk_log_average(distance, radius):
    """Mean of ln 1/|w - z| over a disk of given radius whose centre is `distance` from z."""
    distance = np.asarray(distance, dtype=float)
    radius = np.asarray(radius, dtype=float)
    inside = distance < radius
    safe = np.where(inside, radius, distance)
    ratio = np.where(inside, distance / radius, 1.0)
    return np.where(inside, -np.log(radius) + 0.5 * (1.0 - ratio**2), -np.log(safe))


def cap_log_average(chord, cap_chord):
    """Mean of ln 1/|u - v| over a spherical cap whose centre is `chord` away from v.

    All lengths are chordal on the unit sphere (the cap has chordal radius
    cap_chord), so the average only depends on round-invariant data.
    """
    chord = np.asarray(chord, dtype=float)
    cap_chord = np.asarray(cap_chord, dtype=float)
    half_sq = 0.25 * cap_chord**2
    inside = chord < cap_chord
    # -2 ln cos(delta/2): radial solution of Laplacian h = 1 with h(0) = 0
    radial = -np.log1p(-0.25 * np.minimum(chord, cap_chord) ** 2)
    spread = (1.0 - half_sq) * np.log1p(-half_sq) / half_sq + 1.0
    outside_value = -np.log(np.where(inside, cap_chord, chord)) + 0.5 * spread
    inside_value = -np.log(cap_chord) + 0.5 + (0.5 - 0.5 / half_sq) * radial
    return np.where(inside, inside_value, outside_value)


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SphereGrid:
    points: np.ndarray
    cell_volume: np.ndarray

    @classmethod
    def fibonacci(cls, n: int) -> "SphereGrid":
        if not isinstance(n, (int, np.integer)) or n < 4:
            raise InputError(f"Grid resolution must be an integer >= 4, got {n!r}")
        n = int(n)
        k = np.arange(n, dtype=float)
        z = 1.0 - (2.0 * k + 1.0) / n
        radius = np.sqrt(1.0 - z**2)
        angle = k * math.pi * (3.0 - math.sqrt(5.0))
        unit = np.stack([radius * np.cos(angle), radius * np.sin(angle), z], axis=1)
        points = stereographic(unit)
        cell_volume = np.full(n, SPHERE_VOLUME / n)
        points.setflags(write=False)
        cell_volume.setflags(write=False)
        logger.debug(f"Built Fibonacci grid with {n} points")
        return cls(points=points, cell_volume=cell_volume)

    @property
    def resolution(self) -> int:
        return len(self.points)

    @cached_property
    def log_metric(self) -> np.ndarray:
        return log_round_metric(self.points)

    @cached_property
    def cell_radius(self) -> np.ndarray:
        """Planar radius of the disk with the same round volume as each cell."""
        return np.sqrt(self.cell_volume / (math.pi * np.exp(self.log_metric)))

    @cached_property
    def unit_vectors(self) -> np.ndarray:
        return inverse_stereographic(self.points)

    @cached_property
    def mean_neighbor_distance(self) -> float:
        """Mean nearest-neighbour distance in chart units at the origin (chord / 2)."""
        distances, _ = cKDTree(self.unit_vectors).query(self.unit_vectors, k=2)
        return float(np.mean(distances[:, 1]) / 2.0)

    def integrate(self, values) -> float:
        return float(np.dot(np.asarray(values, dtype=float), self.cell_volume))

    def coarsened(self, factor: int) -> "SphereGrid":
        return SphereGrid.fibonacci(self.resolution // factor)

    @cached_property
    def cap_chord(self) -> np.ndarray:
        """Chordal radius of the spherical cap with the same round volume as each cell."""
        return np.sqrt(self.cell_volume / math.pi)

    def chord_to_nodes(self, unit: np.ndarray) -> np.ndarray:
        """Chordal distances from unit vectors (..., 3) to every node, shape (..., N)."""
        return np.linalg.norm(unit[..., None, :] - self.unit_vectors, axis=-1)

    def check_clearance(self, points, fraction: float) -> None:
        """Raise ProximityError if any point sits within fraction * cell radius of a node."""
        offending = []
        for k, z in enumerate(np.atleast_1d(_as_points(points)), start=1):
            distance = np.abs(self.points - z)
            limit = fraction * self.cell_radius
            for node in np.flatnonzero(distance < limit):
                offending.append((int(node), k, float(distance[node]), float(limit[node])))
        if offending:
            raise ProximityError(offending)

    def metadata(self) -> dict:
        return {
            "scheme": "fibonacci-sphere/stereographic",
            "grid_n": self.resolution,
            "cell_volume": SPHERE_VOLUME / self.resolution,
        }


# ---------------------------------------------------------------------------
# Conformal factors
# ---------------------------------------------------------------------------


class ConformalFactor:
    """A smooth real function phi on the plane defining the metric e^phi * g_round.

    Providers may supply analytic gradient ((d/dx + i d/dy) phi) and Laplacian;
    otherwise central finite differences are used.
    """

    name = "custom"

    def __init__(
        self,
        phi: Callable[[np.ndarray], np.ndarray],
        gradient: Callable[[np.ndarray], np.ndarray] | None = None,
        laplacian: Callable[[np.ndarray], np.ndarray] | None = None,
        name: str | None = None,
    ):
        self._phi = phi
        self._gradient = gradient
        self._laplacian = laplacian
        if name is not None:
            self.name = name

    def __call__(self, x):
        x = _as_points(x)
        return np.asarray(self._phi(x), dtype=float)

    def gradient(self, x) -> np.ndarray:
        x = _as_points(x)
        if self._gradient is not None:
            return np.asarray(self._gradient(x), dtype=complex)
        h = GRADIENT_STEP * (1.0 + np.abs(x))
        dx = (self(x + h) - self(x - h)) / (2 * h)
        dy = (self(x + 1j * h) - self(x - 1j * h)) / (2 * h)
        return dx + 1j * dy

    def laplacian(self, x) -> np.ndarray:
        x = _as_points(x)
        if self._laplacian is not None:
            return np.asarray(self._laplacian(x), dtype=float)
        h = LAPLACIAN_STEP * (1.0 + np.abs(x))
        stencil = self(x + h) + self(x - h) + self(x + 1j * h) + self(x - 1j * h)
        return (stencil - 4.0 * self(x)) / h**2

    def on_grid(self, grid: SphereGrid) -> np.ndarray:
        values = self(grid.points)
        if not np.all(np.isfinite(values)):
            raise InputError(f"Conformal factor '{self.name}' is not finite on the grid")
        return values

    def describe(self) -> dict:
        return {"family": self.name}


class ConstantFactor(ConformalFactor):
    name = "constant"

    def __init__(self, constant: float):
        self.constant = float(constant)
        super().__init__(
            lambda x: np.full(np.shape(x), self.constant),
            gradient=lambda x: np.zeros(np.shape(x), dtype=complex),
            laplacian=lambda x: np.zeros(np.shape(x)),
        )

    def describe(self) -> dict:
        return {"family": self.name, "amplitude": self.constant}


class BumpFactor(ConformalFactor):
    """phi(x) = a / (1 + |x|^2)."""

    name = "bump"

    def __init__(self, amplitude: float):
        self.amplitude = float(amplitude)
        a = self.amplitude
        super().__init__(
            lambda x: a / (1.0 + np.abs(x) ** 2),
            gradient=lambda x: -2.0 * a * x / (1.0 + np.abs(x) ** 2) ** 2,
            laplacian=lambda x: 4.0 * a * (np.abs(x) ** 2 - 1.0) / (1.0 + np.abs(x) ** 2) ** 3,
        )

    def describe(self) -> dict:
        return {"family": self.name, "amplitude": self.amplitude}


class MobiusPullbackFactor(ConformalFactor):
    """phi = ln(g_psi / g) for the pullback of the round metric by psi; R_g is 2."""

    name = "mobius-pullback"

    def __init__(self, psi: "MobiusMap"):
        self.psi = psi
        super().__init__(
            lambda x: np.log(psi.pullback_factor(x))
            + log_round_metric(psi(x))
            - log_round_metric(x)
        )

    def describe(self) -> dict:
        return {"family": self.name, "psi": self.psi.to_string()}


def curvature(phi: ConformalFactor, x):
    """Scalar curvature of e^phi g_round: e^-phi (2 - Laplacian_g phi)."""
    x = _as_points(x)
    laplacian_round = phi.laplacian(x) / round_metric(x)
    return np.exp(-phi(x)) * (2.0 - laplacian_round)


def mean_value(values, phi: ConformalFactor | None, grid: SphereGrid) -> float:
    """m_g(f) by quadrature in the metric e^phi g_round."""
    weights = grid.cell_volume if phi is None else grid.cell_volume * np.exp(phi.on_grid(grid))
    return float(np.dot(np.asarray(values, dtype=float), weights) / weights.sum())


def liouville_functional(phi: ConformalFactor, grid: SphereGrid) -> float:
    """Integral of |d phi|^2_g + 2 R_g phi against v_g with R = 2 on the round sphere."""
    gradient = phi.gradient(grid.points)
    dirichlet = grid.integrate(np.abs(gradient) ** 2 / np.exp(grid.log_metric))
    return dirichlet + 4.0 * grid.integrate(phi.on_grid(grid))


# ---------------------------------------------------------------------------
# Conformal metrics on a grid
# ---------------------------------------------------------------------------


class ConformalMetric:
    """Quadrature data of the metric e^phi g_round on a fixed grid.

    Log-kernel means m_g(ln 1/|x - .|) use the disk average on the cell holding
    the singularity.  Round-metric means are computed with the same rule so that
    differences G_g - G_round are free of the common quadrature error.
    """

    def __init__(self, phi: ConformalFactor | None, grid: SphereGrid):
        self.phi = phi
        self.grid = grid
        if phi is None:
            self.phi_values = np.zeros(grid.resolution)
        else:
            self.phi_values = phi.on_grid(grid)
        volume = grid.cell_volume * np.exp(self.phi_values)
        self.volume = float(volume.sum())
        self.weights = volume / self.volume
        self.round_weights = grid.cell_volume / grid.cell_volume.sum()

        means = self._node_means(np.stack([self.weights, self.round_weights], axis=1))
        self.node_means, self.node_means_round = means[:, 0], means[:, 1]
        self.theta = float(self.weights @ self.node_means)
        self.theta_round = float(self.round_weights @ self.node_means_round)
        logger.debug(
            f"Conformal metric '{self.name}' on {grid.resolution} nodes: "
            f"theta_g = {self.theta:.6f}"
        )

    @property
    def name(self) -> str:
        return "round" if self.phi is None else self.phi.name

    @property
    def is_round(self) -> bool:
        return not np.any(self.phi_values)

    @property
    def is_constant(self) -> bool:
        return bool(np.ptp(self.phi_values) == 0.0)

    def _node_means(self, weights: np.ndarray) -> np.ndarray:
        grid = self.grid
        out = np.empty((grid.resolution, weights.shape[1]))
        for start in range(0, grid.resolution, _KERNEL_CHUNK):
            rows = slice(start, start + _KERNEL_CHUNK)
            distance = np.abs(grid.points[rows, None] - grid.points[None, :])
            kernel = disk_log_average(distance, grid.cell_radius[None, :])
            out[rows] = kernel @ weights
        return out

    def log_kernel_mean(self, z, round_weights: bool = False):
        """m_g(ln 1/|z - .|) for arbitrary finite points z."""
        z = np.atleast_1d(_as_points(z))
        distance = np.abs(z[:, None] - self.grid.points[None, :])
        kernel = disk_log_average(distance, self.grid.cell_radius[None, :])
        weights = self.round_weights if round_weights else self.weights
        return kernel @ weights

    def green(self, x, y):
        """G_g(x, y) = ln 1/|x-y| - m_g(ln 1/|x-.|) - m_g(ln 1/|y-.|) + theta_g."""
        x, y = np.atleast_1d(_as_points(x)), np.atleast_1d(_as_points(y))
        distance = np.abs(x - y)
        if np.any(distance == 0):
            raise InputError("green_general is singular on the diagonal (x == y)")
        return -np.log(distance) - self.log_kernel_mean(x) - self.log_kernel_mean(y) + self.theta

    def mean_shift(self, z) -> np.ndarray:
        """m_g - m_round of the log kernel at arbitrary points."""
        return self.log_kernel_mean(z) - self.log_kernel_mean(z, round_weights=True)

    @cached_property
    def node_mean_shift(self) -> np.ndarray:
        return self.node_means - self.node_means_round

    @property
    def theta_shift(self) -> float:
        return self.theta - self.theta_round

    def green_difference(self, x, y) -> np.ndarray:
        """Smooth kernel G_g(x, y) - G_round(x, y) (also defined for x == y)."""
        return -self.mean_shift(x) - self.mean_shift(y) + self.theta_shift

    def node_green_difference(self) -> np.ndarray:
        shift = self.node_mean_shift
        return -shift[:, None] - shift[None, :] + self.theta_shift

    def variance_offset(self, z) -> np.ndarray:
        """K_g(z): log-variance correction of Wick exponentials in metric g, zero for g_round."""
        z = np.atleast_1d(_as_points(z))
        phi = np.zeros(z.shape) if self.phi is None else self.phi(z)
        return 0.5 * phi + self.green_difference(z, z)

    def node_variance_offset(self) -> np.ndarray:
        return 0.5 * self.phi_values - 2.0 * self.node_mean_shift + self.theta_shift


def green_general(x, y, phi: ConformalFactor | None, grid: SphereGrid):
    metric = ConformalMetric(phi, grid)
    value = metric.green(x, y)
    return float(value[0]) if np.ndim(x) == 0 and np.ndim(y) == 0 else value


# ---------------------------------------------------------------------------
# Mobius maps
# ---------------------------------------------------------------------------


def _parse_complex(text: str) -> complex:
    cleaned = text.strip().replace(" ", "").replace("i", "j")
    try:
        return complex(cleaned)
    except ValueError as exc:
        raise InputError(f"Cannot parse complex number {text!r}") from exc


@dataclass(frozen=True)
class MobiusMap:
    """psi(z) = (a z + b) / (c z + d), stored with ad - bc = 1."""

    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        a, b, c, d = (complex(v) for v in (self.a, self.b, self.c, self.d))
        determinant = a * d - b * c
        if determinant == 0:
            raise InputError("Mobius map is degenerate (ad - bc = 0)")
        root = cmath.sqrt(determinant)
        for name, value in zip("abcd", (a, b, c, d)):
            object.__setattr__(self, name, value / root)

    @classmethod
    def identity(cls) -> "MobiusMap":
        return cls(1, 0, 0, 1)

    @classmethod
    def parse(cls, text: str) -> "MobiusMap":
        parts = text.split(",")
        if len(parts) != 4:
            raise InputError(f"Mobius map needs four complex numbers 'a,b,c,d', got {text!r}")
        return cls(*(_parse_complex(p) for p in parts))

    def to_string(self) -> str:
        return ",".join(repr(v) for v in (self.a, self.b, self.c, self.d))

    def _denominator(self, x) -> np.ndarray:
        x = _as_points(x)
        denominator = self.c * x + self.d
        scale = np.abs(self.c) * np.abs(x) + np.abs(self.d)
        if np.any(np.abs(denominator) <= 1e-14 * scale):
            raise InputError(f"Point at the pole of the Mobius map {self.to_string()}")
        return denominator

    def __call__(self, x):
        denominator = self._denominator(x)
        value = (self.a * np.asarray(x, dtype=complex) + self.b) / denominator
        return complex(value) if np.ndim(x) == 0 else value

    def derivative(self, x):
        value = 1.0 / self._denominator(x) ** 2
        return complex(value) if np.ndim(x) == 0 else value

    def pullback_factor(self, x):
        value = np.abs(self.derivative(x)) ** 2
        return float(value) if np.ndim(x) == 0 else value

    def compose(self, inner: "MobiusMap") -> "MobiusMap":
        """self o inner."""
        return MobiusMap(
            self.a * inner.a + self.b * inner.c,
            self.a * inner.b + self.b * inner.d,
            self.c * inner.a + self.d * inner.c,
            self.c * inner.b + self.d * inner.d,
        )

    def inverse(self) -> "MobiusMap":
        return MobiusMap(self.d, -self.b, -self.c, self.a)


def mobius_apply(psi: MobiusMap, x):
    return psi(x)


def pullback_factor(psi: MobiusMap, x):
    return psi.pullback_factor(x)


def green_mobius_check(psi: MobiusMap, x: complex, y: complex) -> float:
    """G(psi x, psi y) - G(x, y) + (phi(x) + phi(y))/4 with e^phi = g_psi / g."""
    px, py = psi(x), psi(y)

    def log_factor(z, pz):
        return math.log(psi.pullback_factor(z)) + log_round_metric(pz) - log_round_metric(z)

    return (
        green_round(px, py)
        - green_round(x, y)
        + 0.25 * (log_factor(x, px) + log_factor(y, py))
    )
