from fractions import Fraction
import math

import pytest
from hypothesis import given, seed
from hypothesis import strategies as st

from toda_cft.core.errors import InputError
from toda_cft.core.lie_structure import (
    Basis,
    CouplingParams,
    as_scalar,
    background_charge,
    build_algebra,
    central_charge,
    central_charge_table,
    conformal_weight,
    extended_seiberg_check,
    inner_product,
    parse_algebra,
    seiberg_check,
    seiberg_parameters,
)

rationals = st.fractions(min_value=-6, max_value=6, max_denominator=12)


def test_parse_algebra_labels():
    assert parse_algebra("A1+A1").label == "A1+A1"
    assert parse_algebra(" a2 ").label == "A2"
    assert parse_algebra("A2+E6").rank == 8


@pytest.mark.parametrize("text", ["", "B2", "D3", "E5", "E9", "A0", "A1++A2", "sl3"])
def test_parse_algebra_rejects(text):
    with pytest.raises(InputError):
        parse_algebra(text)


@pytest.mark.parametrize(
    "label, weyl_norm_sq, determinant",
    [
        ("A1", Fraction(1, 2), 2),
        ("A2", Fraction(2), 3),
        ("A7", Fraction(42), 8),
        ("D4", Fraction(14), 4),
        ("D5", Fraction(30), 4),
        ("E6", Fraction(78), 3),
        ("E7", Fraction(399, 2), 2),
        ("E8", Fraction(620), 1),
        ("A1+A1", Fraction(1), 4),
    ],
)
def test_algebra_invariants(label, weyl_norm_sq, determinant):
    data = build_algebra(label)
    assert data.weyl_norm_sq == weyl_norm_sq
    assert data.determinant == determinant
    r = data.rank
    for i in range(r):
        for j in range(r):
            product = sum(data.cartan[i][k] * data.cartan_inv[k][j] for k in range(r))
            assert product == (1 if i == j else 0)


def test_d_family_branch_node():
    cartan = build_algebra("D5").cartan
    assert cartan[2][4] == -1
    assert cartan[3][4] == 0


def test_central_charge_table_matches_weyl_vector():
    for label in ("A3", "D6", "E6", "E7", "E8"):
        data = build_algebra(label)
        constant, quadratic = central_charge_table(data.spec.summands[0])
        assert constant == data.rank
        assert quadratic == 6 * data.weyl_norm_sq
    assert central_charge_table(build_algebra("E8").spec.summands[0]) == (8, 3720)


def test_central_charge_is_exact(sl2):
    # gamma = 1: q = 3, c = 1 + 6 * 9 * 1/2
    assert central_charge(sl2, CouplingParams(gamma=1, mu=(1,))) == 28


def test_weyl_vector_pairs_to_one_with_simple_roots():
    data = build_algebra("E6")
    rho = data.weyl_vector()
    assert all(inner_product(rho, data.simple_root(i)) == 1 for i in range(1, 7))


@seed(7)
@given(st.lists(rationals, min_size=4, max_size=4), st.lists(rationals, min_size=4, max_size=4))
def test_inner_product_is_basis_independent(u_coords, v_coords):
    data = build_algebra("D4")
    u = data.vector(u_coords, Basis.ROOT)
    v = data.vector(v_coords, Basis.ROOT)
    value = inner_product(u, v)
    assert value == inner_product(u.to_basis(Basis.WEIGHT), v)
    assert value == inner_product(u, v.to_basis(Basis.WEIGHT))
    assert value == inner_product(u.to_basis(Basis.WEIGHT), v.to_basis(Basis.WEIGHT))


@seed(11)
@given(st.lists(rationals, min_size=2, max_size=2))
def test_conformal_weight_reflection(coords):
    data = build_algebra("A2")
    params = CouplingParams(gamma="4/5", mu=(1, 1))
    alpha = data.vector(coords)
    reflected = 2 * background_charge(data, params) - alpha
    assert conformal_weight(alpha, data, params) == conformal_weight(reflected, data, params)


def test_as_scalar_promotes_short_decimals():
    assert as_scalar(1.1) == Fraction(11, 10)
    assert as_scalar("3/7") == Fraction(3, 7)
    assert isinstance(as_scalar(math.pi), float)
    with pytest.raises(InputError):
        as_scalar(True)
    with pytest.raises(InputError):
        as_scalar(float("nan"))


@pytest.mark.parametrize("gamma", [0, -0.5, 1.5, math.sqrt(2)])
def test_coupling_rejects_gamma_outside_range(gamma):
    with pytest.raises(InputError):
        CouplingParams(gamma=gamma, mu=(1,))


def test_coupling_rejects_nonpositive_mu():
    with pytest.raises(InputError):
        CouplingParams(gamma=1, mu=(1, 0))


def test_vectors_from_different_algebras_do_not_mix(sl2):
    other = build_algebra("A1+A1")
    with pytest.raises(InputError):
        inner_product(sl2.simple_root(1), other.simple_root(1))
    with pytest.raises(InputError):
        sl2.vector([1, 2])


def test_seiberg_zero_s_fails_with_index(sl2):
    params = CouplingParams(gamma=1, mu=(1,))
    e1 = sl2.simple_root(1)
    insertions = [(0j, e1), (1 + 0j, e1), (1j, e1)]
    verdict = seiberg_check(insertions, sl2, params)
    assert verdict.s == (0,)
    assert not verdict.passed
    assert verdict.failures() == ["condition 1 fails at i=1 (s_1 = 0 <= 0)"]
    assert extended_seiberg_check(insertions, sl2, params).passed


def test_seiberg_valid_configuration(sl2, sl2_params, sl2_insertions):
    verdict = seiberg_check(sl2_insertions, sl2, sl2_params)
    assert verdict.passed
    assert verdict.s == (Fraction(1, 8),)
    assert verdict.to_dict()["s"] == ["1/8"]


def test_three_equal_weights_at_gamma_point_eight_are_rejected(sl2, sl2_params):
    e1 = sl2.simple_root(1) * "9/10"
    verdict = seiberg_check([(1 + 0j, e1), (-1 + 0j, e1), (0.5j, e1)], sl2, sl2_params)
    assert not verdict.passed
    assert verdict.s[0] < 0


def test_seiberg_second_condition(sl2, sl2_params):
    # weight coordinate 2 * 1.7 = 3.4 exceeds q = 3.3
    heavy = sl2.simple_root(1) * "17/10"
    verdict = seiberg_check([(0j, heavy), (1 + 0j, heavy)], sl2, sl2_params)
    assert verdict.s_positive == (True,)
    assert verdict.margins_positive == ((False,), (False,))
    assert "condition 2 fails at k=1, i=1" in verdict.failures()[0]


def test_seiberg_parameters_rank_two():
    data = build_algebra("A2")
    params = CouplingParams(gamma="4/5", mu=(1, 1))
    alpha = data.vector(["7/5", "7/5"])
    points = [1 + 0j, -1 + 0j, 0.5j, 2 + 1j, -0.7 - 1.3j]
    s = seiberg_parameters([(z, alpha) for z in points], data, params)
    assert s == (Fraction(1, 2), Fraction(1, 2))


def test_extended_seiberg_fails_for_zero_weight(sl2):
    params = CouplingParams(gamma=1, mu=(1,))
    assert not extended_seiberg_check([(0j, sl2.zero())], sl2, params).passed


@pytest.mark.parametrize(
    "points",
    [[0j, 0j], [complex(math.inf, 0)], []],
)
def test_seiberg_rejects_bad_points(sl2, sl2_params, points):
    e1 = sl2.simple_root(1)
    with pytest.raises(InputError):
        seiberg_check([(z, e1) for z in points], sl2, sl2_params)
