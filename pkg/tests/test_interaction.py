import numpy as np
import pytest

from horncore.interaction import (CLAIMED_ORDER, InteractionReport, build_reference_op, classify_all,
                                  gnconv_op, interaction_effect, line_probe, polynomial_degree)


@pytest.fixture
def x4(rng):
    return rng.standard_normal((1, 4, 6, 6))


def _degree(op, x, seed=0):
    d = np.random.default_rng(seed + 99).standard_normal(x.shape)
    return polynomial_degree(op, x, d, seed=seed)


def test_polynomial_degree_of_known_polynomials(rng):
    x = rng.standard_normal((1, 2, 3, 3))
    for m in range(5):
        assert _degree(lambda z, m=m: z**m, x) == m
    assert _degree(lambda z: 3.0 + 0 * z, x) == 0


def test_non_polynomial_is_inconclusive(rng):
    x = rng.standard_normal((1, 2, 3, 3))
    assert _degree(np.exp, x) is None


@pytest.mark.parametrize("kind,degree", [("plain_dwconv", 1), ("se_block", 2), ("gated_conv", 2),
                                         ("self_attention_toy", 3)])
def test_reference_op_degrees(kind, degree, x4):
    op = build_reference_op(kind, 4, seed=1, linearized=True)
    assert _degree(op, x4, seed=1) == degree
    assert degree - 1 == CLAIMED_ORDER[kind]


@pytest.mark.parametrize("n", [1, 2, 3])
def test_gnconv_degree(n, x4):
    assert _degree(gnconv_op(n, 4, seed=n), x4, seed=n) == n + 1


def test_gnconv_with_biases_still_has_top_degree(x4):
    op = gnconv_op(2, 4, seed=0, biases=True)
    assert _degree(op, x4) == 3


def test_interaction_effect_thresholds(x4):
    plain = build_reference_op("plain_dwconv", 4, seed=0)
    gated = build_reference_op("gated_conv", 4, seed=0)
    pairs = [((3, 3), (3, 4)), ((2, 2), (3, 3)), ((1, 1), (0, 1))]
    assert max(abs(interaction_effect(plain, x4, i, j, 0)) for i, j in pairs) < 1e-8
    assert max(abs(interaction_effect(gated, x4, i, j, c)) for i, j in pairs for c in range(2)) > 1e-4


def test_interaction_effect_matches_analytic_for_gated_conv(rng):
    """For F_i = (sum_j w_j x_j) x_i the mixed partial is w_{j-i} u_c v_c."""
    op = build_reference_op("gated_conv", 1, seed=4)
    kernel = np.random.default_rng(4).uniform(-1, 1, size=(1, 3, 3))
    x = rng.standard_normal((1, 1, 5, 5))
    i, j = (2, 2), (2, 3)
    ie = interaction_effect(op, x, i, j, 0, directions=(1.0, 1.0))
    assert ie == pytest.approx(kernel[0, 1, 2], abs=1e-7)


def test_interaction_outside_receptive_field_is_zero(x4):
    op = build_reference_op("gated_conv", 4, seed=0)
    assert interaction_effect(op, x4, (0, 0), (5, 5), 0) == 0.0
    with pytest.raises(ValueError):
        interaction_effect(op, x4, (1, 1), (1, 1), 0)


def test_transposed_probe_agrees(x4):
    op = build_reference_op("self_attention_toy", 4, seed=2)
    a = interaction_effect(op, x4, (1, 2), (4, 4), 1, seed=5)
    b = interaction_effect(op, x4, (1, 2), (4, 4), 1, seed=5, transposed=True)
    assert a == pytest.approx(b, rel=1e-4, abs=1e-9)


def test_line_probe_is_deterministic(x4):
    op = build_reference_op("plain_dwconv", 4, seed=0)
    d = np.ones_like(x4)
    assert line_probe(op, x4, d, seed=3)(0.7) == line_probe(op, x4, d, seed=3)(0.7)


def test_unknown_reference_op():
    with pytest.raises(ValueError):
        build_reference_op("window_attention")


def test_classify_all_table():
    reports = classify_all(seed=0)
    names = [r.op_name for r in reports]
    assert names == ["plain_dwconv", "se_block", "gated_conv", "self_attention_toy",
                     "gnconv(n=1)", "gnconv(n=2)", "gnconv(n=3)"]
    assert all(r.consistent for r in reports)
    assert reports[0].ie_magnitude < 1e-8
    assert all(r.ie_magnitude > 1e-6 for r in reports[1:])


def test_report_consistency_flag():
    assert InteractionReport("x", 0.1, 3, 2).consistent
    assert not InteractionReport("x", 0.1, None, 2).consistent
    assert not InteractionReport("x", 0.1, 2, 2).consistent
