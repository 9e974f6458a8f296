import math

import numpy as np
import pytest
from scipy.special import logsumexp

from toda_cft.core import chaos
from toda_cft.core.errors import InputError, NumericalError, ProximityError
from toda_cft.core.field_sampler import (
    build_covariance,
    oriented_points,
    pair_with_girsanov_shift,
    pair_with_girsanov_shift_at_node,
    sample,
    sample_block,
)
from toda_cft.core.lie_structure import build_algebra, inner_product
from toda_cft.core.sphere_geometry import BumpFactor, ConformalMetric, SphereGrid, green_round, stereographic
from toda_cft.core.summarizer import Summarizer


def test_zero_gamma_gives_the_sphere_volume(sl3_model):
    totals = chaos.total_log_masses(sl3_model, 0.0, seed=0, replicas=5)
    assert totals.shape == (5, 2)
    np.testing.assert_allclose(totals, math.log(4.0 * math.pi), rtol=1e-12)


@pytest.mark.parametrize("gamma", [-0.1, 1.5, math.sqrt(2.0)])
def test_gamma_outside_range_is_rejected(sl2_model, gamma):
    with pytest.raises(InputError):
        chaos.total_log_masses(sl2_model, gamma, seed=0, replicas=2)


def test_measure_totals_match_masses(sl2_model):
    measure = chaos.gmc_from_sample(sample(sl2_model, 4, 2), sl2_model, 0.6)
    assert measure.replica_index == 2
    assert measure.epsilon == sl2_model.epsilon
    np.testing.assert_allclose(measure.total_masses(), measure.masses.sum(axis=-1), rtol=1e-12)


def test_wick_mean_is_the_sphere_volume():
    grid = SphereGrid.fibonacci(256)
    for label in ("A1", "A2"):
        model = build_covariance(grid, build_algebra(label))
        summary = Summarizer.summarize_by_direction(chaos.gmc_traces(model, 0.5, 0, 512))
        assert len(summary) == model.algebra.rank
        assert summary["z_score"].abs().max() <= 4.0


def test_overflow_names_direction_and_node(sl3_model):
    shift = np.zeros((2, 256))
    shift[1, 7] = 800.0
    with pytest.raises(NumericalError, match="direction 2, node 7"):
        chaos.total_log_mass_block(sl3_model, 0.5, 0, [0], log_shift=shift)


def test_insertion_shift_without_insertions(sl2_model):
    assert not np.any(chaos.insertion_log_shift([], sl2_model, 0.8))


def test_insertion_shift_of_zero_weight(sl2_model, sl2):
    assert not np.any(chaos.insertion_log_shift([(0.3j, sl2.zero())], sl2_model, 0.8))


def test_insertion_shift_is_linear_in_the_weights(sl2_model, sl2_insertions):
    total = chaos.insertion_log_shift(sl2_insertions, sl2_model, 0.8)
    parts = sum(chaos.insertion_log_shift([entry], sl2_model, 0.8) for entry in sl2_insertions)
    np.testing.assert_allclose(total, parts, atol=1e-12)


def test_insertion_shift_rejects_bad_points(sl2_model, sl2):
    e1 = sl2.simple_root(1)
    with pytest.raises(InputError):
        chaos.insertion_log_shift([(0.2j, e1), (0.2j, e1)], sl2_model, 0.8)
    with pytest.raises(ProximityError):
        chaos.insertion_log_shift([(sl2_model.grid.points[0], e1)], sl2_model, 0.8)


def test_shift_measure_records_insertions(sl2_model, sl2_insertions):
    measure = chaos.gmc_from_sample(sample(sl2_model, 1, 0), sl2_model, 0.8)
    shifted = chaos.shift_measure(measure, sl2_insertions, sl2_model, 0.8)
    assert len(shifted.insertions) == 3
    np.testing.assert_allclose(
        shifted.log_masses - measure.log_masses,
        chaos.insertion_log_shift(sl2_insertions, sl2_model, 0.8),
        atol=1e-12,
    )


def test_traces_layout(sl3_model):
    traces = chaos.gmc_traces(sl3_model, 0.5, 2, 6)
    assert list(traces.columns) == ["replica", "direction", "total_mass"]
    assert len(traces) == 12
    assert sorted(traces["direction"].unique()) == [1, 2]
    assert (traces["total_mass"] > 0).all()


def test_traces_do_not_depend_on_workers(sl3_model):
    serial = chaos.gmc_traces(sl3_model, 0.5, 2, 40, workers=1, chunk_size=8)
    threaded = chaos.gmc_traces(sl3_model, 0.5, 2, 40, workers=3, chunk_size=8)
    np.testing.assert_array_equal(serial["total_mass"].to_numpy(), threaded["total_mass"].to_numpy())


def _mean_and_stderr(values):
    return float(np.mean(values)), float(np.std(values, ddof=1) / math.sqrt(len(values)))


def test_cap_second_moment_matches_the_kernel_double_sum(sl2_model):
    gamma, replicas = 0.5, 16000
    cap = sl2_model.grid.unit_vectors[:, 2] > 0.0
    log_masses = chaos.wick_log_masses(sample_block(sl2_model, 3, range(replicas)), sl2_model, gamma)
    masses = np.exp(log_masses[:, 0, cap]).sum(axis=-1)
    weights = sl2_model.grid.cell_volume[cap]
    # <e_1, X> has covariance 2 S
    spatial = sl2_model.spatial_factor[np.ix_(cap, cap)]
    expected = float(weights @ np.exp(2.0 * gamma**2 * spatial) @ weights)
    assert float(np.mean(masses**2)) == pytest.approx(expected, rel=0.05)


def test_shifted_mass_expectation(sl2_model, sl2):
    gamma, replicas = 0.5, 4000
    grid = sl2_model.grid
    z = grid.points[40] + 0.6 * grid.cell_radius[40]
    alpha = sl2.simple_root(1) * "1/2"
    shift = chaos.insertion_log_shift([(z, alpha)], sl2_model, gamma)
    totals = np.exp(chaos.total_log_masses(sl2_model, gamma, 5, replicas, log_shift=shift)[:, 0])
    mean, stderr = _mean_and_stderr(totals)
    # every Wick exponential has mean one
    exact = float(grid.cell_volume @ np.exp(shift[0]))
    assert abs(mean - exact) <= 4.0 * stderr
    # <alpha, e_1> = 1
    quadrature = float(grid.cell_volume @ np.exp(gamma * green_round(grid.points, z)))
    assert exact == pytest.approx(quadrature, rel=0.05)


def test_negative_moments_of_the_sl3_directions_do_not_factorize_upwards(sl3_model):
    # pairs in the polar cap have positive kernel, so the two directions are negatively correlated
    replicas = 4000
    cap = sl3_model.grid.unit_vectors[:, 2] > 0.9
    log_masses = chaos.wick_log_masses(sample_block(sl3_model, 8, range(replicas)), sl3_model, 1.0)
    masses = np.exp(logsumexp(log_masses[:, :, cap], axis=-1))
    for s in (0.2, 0.5):
        powers = masses ** (-s)
        joint, joint_err = _mean_and_stderr(powers[:, 0] * powers[:, 1])
        first, first_err = _mean_and_stderr(powers[:, 0])
        second, second_err = _mean_and_stderr(powers[:, 1])
        sigma = math.sqrt(joint_err**2 + (first_err * second) ** 2 + (first * second_err) ** 2)
        assert joint <= first * second + 3.0 * sigma


def test_shift_measure_is_the_girsanov_shifted_field(sl3_model, sl3):
    insertions = [(0.3 + 0.2j, sl3.fundamental_weight(1)), (-1.1 + 0.5j, sl3.simple_root(2) * "1/2")]
    field = sample(sl3_model, 4, 0)
    shifted = chaos.shift_measure(chaos.gmc_from_sample(field, sl3_model, 0.6), insertions, sl3_model, 0.6)
    moved = field.values + sum(pair_with_girsanov_shift(sl3_model, alpha, z) for z, alpha in insertions)
    np.testing.assert_allclose(shifted.log_masses, chaos.wick_log_masses(moved, sl3_model, 0.6), atol=1e-10)


def test_node_shift_matches_exponential_reweighting(sl3_model, sl3):
    gamma, replicas, node = 0.5, 8000, 37
    alpha = sl3.simple_root(1) * "3/10"
    shift = gamma * pair_with_girsanov_shift_at_node(sl3_model, alpha, node)
    shifted = np.exp(chaos.total_log_masses(sl3_model, gamma, 1, replicas, log_shift=shift))

    values = sample_block(sl3_model, 2, range(replicas))
    # <alpha, X> = 0.3 <e_1, X>, whose variance is 2 S_nn
    variance = 0.09 * 2.0 * sl3_model.spatial_diagonal[node]
    weight = np.exp(0.3 * values[:, 0, node] - 0.5 * variance)
    totals = np.exp(logsumexp(chaos.wick_log_masses(values, sl3_model, gamma), axis=-1))
    for power in (1, 2):
        for direction in range(2):
            left, left_err = _mean_and_stderr(shifted[:, direction] ** power)
            right, right_err = _mean_and_stderr(weight * totals[:, direction] ** power)
            assert abs(left - right) <= 4.0 * math.hypot(left_err, right_err)


def test_girsanov_offset_of_one_insertion(sl2_model, sl2):
    alpha = sl2.simple_root(1) * "9/10"
    offset = chaos.girsanov_log_offset([(0.2j, alpha)], np.array([0.3]), sl2_model)
    assert float(offset) == pytest.approx(0.5 * 1.62 * (sl2_model.kernel_mean - 0.6))


def test_girsanov_offset_sums_over_pairs(sl3_model, sl3):
    insertions = [(0.2j, sl3.simple_root(1)), (1.0 + 0j, sl3.fundamental_weight(2)), (-0.5 + 0j, sl3.simple_root(2))]
    means = np.array([[0.1, -0.2, 0.05], [0.0, 0.3, -0.1]])
    kappa = sl3_model.kernel_mean
    expected = [
        0.5
        * sum(
            float(inner_product(a, b)) * (kappa - row[k] - row[j])
            for k, (_, a) in enumerate(insertions)
            for j, (_, b) in enumerate(insertions)
        )
        for row in means
    ]
    np.testing.assert_allclose(chaos.girsanov_log_offset(insertions, means, sl3_model), expected, rtol=1e-12, atol=1e-12)


def test_oriented_shift_moves_the_insertions(sl2_model, sl2):
    insertions = [(0.4 + 0.3j, sl2.simple_root(1)), (-1.2 - 0.1j, sl2.simple_root(1) * "1/2")]
    shift, offsets = chaos.oriented_insertion_shift(insertions, sl2_model, 0.8, seed=3, replica_indices=[0, 5])
    assert shift.shape == (2, 1, 256)
    assert offsets.shape == (2,)
    unit = oriented_points(3, [0, 5], [z for z, _ in insertions])
    for b in range(2):
        moved = [(complex(p), alpha) for p, (_, alpha) in zip(stereographic(unit[b]), insertions)]
        np.testing.assert_allclose(
            shift[b], chaos.insertion_log_shift(moved, sl2_model, 0.8, clearance=0.0), atol=1e-8
        )
        _, means = sl2_model.insertion_columns([p for p, _ in moved])
        assert offsets[b] == pytest.approx(float(chaos.girsanov_log_offset(moved, means, sl2_model)), abs=1e-8)


def test_unoriented_tilt_matches_the_fixed_shift(sl2_model, sl2_insertions):
    totals, offsets = chaos.tilted_log_masses(sl2_model, 0.8, 4, 20, sl2_insertions, oriented=False)
    shift = chaos.insertion_log_shift(sl2_insertions, sl2_model, 0.8)
    np.testing.assert_allclose(totals, chaos.total_log_masses(sl2_model, 0.8, 4, 20, log_shift=shift), rtol=1e-12)
    _, means = sl2_model.insertion_columns([z for z, _ in sl2_insertions])
    np.testing.assert_allclose(offsets, chaos.girsanov_log_offset(sl2_insertions, means, sl2_model), rtol=1e-12)


def test_round_models_tilt_on_oriented_grids(sl2_model, sl2_insertions):
    default = chaos.tilted_log_masses(sl2_model, 0.8, 4, 40, sl2_insertions, chunk_size=8)
    threaded = chaos.tilted_log_masses(sl2_model, 0.8, 4, 40, sl2_insertions, oriented=True, workers=3, chunk_size=8)
    _, fixed_offsets = chaos.tilted_log_masses(sl2_model, 0.8, 4, 40, sl2_insertions, oriented=False)
    np.testing.assert_array_equal(default[0], threaded[0])
    np.testing.assert_array_equal(default[1], threaded[1])
    assert not np.allclose(default[1], fixed_offsets)


def test_orientation_needs_an_isotropic_model(grid_256, sl2):
    model = build_covariance(grid_256, sl2, metric=ConformalMetric(BumpFactor(0.5), grid_256))
    assert not model.isotropic
    with pytest.raises(InputError):
        chaos.oriented_insertion_shift([(0.2j, sl2.simple_root(1))], model, 0.8, seed=0, replica_indices=[0])


@pytest.mark.parametrize(
    "alpha_norm_sq, medians, verdict",
    [
        (1.0, [1.0, 1.05, 1.0], "stable"),
        (1.0, [2.0, 1.5, 1.0], "unsettled"),
        (4.5, [3.0, 2.0, 1.0], "collapsing"),
        (4.5, [3.0, 3.5, 1.0], "unsettled"),
        (4.0, [3.0, 2.0, 1.0], "indeterminate"),
    ],
)
def test_probe_verdict(alpha_norm_sq, medians, verdict):
    assert chaos._probe_verdict(alpha_norm_sq, medians) == verdict


def test_threshold_probe_at_threshold_is_indeterminate(sl2_model):
    report = chaos.vertex_threshold_probe(math.sqrt(2.0), sl2_model, replicas=8)
    assert report.verdict == "indeterminate"
    assert [level["grid_n"] for level in report.levels] == [64, 128, 256]
    assert report.to_dict()["alpha_norm_sq"] == pytest.approx(4.0)


def test_threshold_probe_rejects_bad_scale(sl2_model):
    with pytest.raises(InputError):
        chaos.vertex_threshold_probe(0.0, sl2_model, replicas=8)


@pytest.mark.slow
def test_threshold_probe_below_threshold_is_stable(sl2):
    model = build_covariance(SphereGrid.fibonacci(1024), sl2)
    report = chaos.vertex_threshold_probe(0.5, model, replicas=400, seed=1)
    assert report.verdict == "stable"


@pytest.mark.slow
def test_threshold_probe_above_threshold_collapses(sl2):
    model = build_covariance(SphereGrid.fibonacci(1024), sl2)
    report = chaos.vertex_threshold_probe(1.5, model, replicas=400, seed=1)
    assert report.verdict == "collapsing"
