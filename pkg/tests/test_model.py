from __future__ import annotations

import math

import numpy as np
import pytest

from zrpfluct.model import (Configuration, JumpKernel, ModelError, alpha_regime, build_rate_model,
                            check_compatibility, check_potential_growth, constant_rate, custom_rates,
                            frame_constant, kernel_mass, kernel_mean, linear_rates, min_rate_increment,
                            potential_coupled, rate_from_potential, theta_alpha)


def test_rate_from_log_factorial_potential():
    model = linear_rates(2)
    assert rate_from_potential(model, [3, 2], 0) == pytest.approx(3.0, rel=1e-12)
    assert model.rate([3, 2], 1) == pytest.approx(2.0, rel=1e-12)


def test_rate_zero_when_species_absent():
    for model in (linear_rates(2), constant_rate(2), potential_coupled(2, 0.3)):
        assert model.rate([0, 4], 0) == 0.0
        assert model.rate([4, 0], 1) == 0.0


def test_constant_potential_gives_unit_rate():
    assert constant_rate(1).rate([5], 0) == pytest.approx(1.0)


def test_rate_table_matches_pointwise_rates():
    model = potential_coupled(2, 0.2)
    cap = 6
    table = model.rate_table(cap)
    for s, k in enumerate(model.states(cap)):
        for i in range(2):
            assert table[i, s] == pytest.approx(model.rate(k, i), rel=1e-12, abs=0)


def test_coupled_rates_closed_form():
    gamma = 0.25
    model = potential_coupled(2, gamma)
    k = np.array([3, 2])
    assert model.rate(k, 0) == pytest.approx(3 * math.exp(gamma * 2), rel=1e-12)
    assert model.rate(k, 1) == pytest.approx(2 * math.exp(gamma * 3), rel=1e-12)


def test_compatibility_linear_passes():
    box = [(a, b) for a in range(5) for b in range(5)]
    assert check_compatibility(lambda k, i: float(k[i]), box).passed


def test_compatibility_counterexample():
    def g(k, i):
        return float(k[0] * (1 + k[1])) if i == 0 else float(k[1])

    rep = check_compatibility(g, [(1, 1)])
    assert not rep.passed
    i, j, k, lhs, rhs = rep.counterexample
    assert k == (1, 1)
    assert {lhs, rhs} == {2.0, 1.0}


def test_compatibility_coupled_family():
    box = [(a, b) for a in range(6) for b in range(6)]
    assert check_compatibility(potential_coupled(2, 0.1), box).passed


def test_custom_rates_reconstruct_potential():
    model = custom_rates(1, lambda k, i: 1.0 + 0.5 * k[i])
    assert model.rate([3], 0) == pytest.approx(2.5, rel=1e-12)
    assert model.rate([0], 0) == 0.0


def test_growth_and_increment_scans():
    assert np.isfinite(check_potential_growth(linear_rates(1), 10))
    assert min_rate_increment(linear_rates(2), 10) == pytest.approx([1.0, 1.0])
    assert min_rate_increment(constant_rate(1), 10)[0] == pytest.approx(0.0)


def test_unknown_family():
    with pytest.raises(ModelError):
        build_rate_model("nope", 1)
    assert build_rate_model("potential-coupled", 2, gamma=0.1).family


def test_kernel_pointwise_values():
    k = JumpKernel(0.75, 0.75, 0.25, 64)
    assert k.p(0) == 0.0
    assert k.p(3) == pytest.approx(0.75 * 3 ** -1.75)
    assert k.p(-3) == pytest.approx(0.25 * 3 ** -1.75)
    z = np.array([1, 2, 5, -7])
    assert np.allclose(k.s(z), 1.0 / (2 * np.abs(z) ** 1.75))


def test_kernel_support_is_truncated_torus():
    k = JumpKernel(1.0, 1.0, 1.0, 10)
    d = k.displacements()
    assert d.min() == -5 and d.max() == 5 and 0 not in d
    assert kernel_mass(k) > 0


def test_kernel_mass_zeta_values():
    assert kernel_mass(JumpKernel(1.0, 0.5, 0.5, 8), untruncated=True) == pytest.approx(1.6449341, abs=1e-7)
    assert kernel_mass(JumpKernel(1.5, 1.0, 0.0, 8), untruncated=True) == pytest.approx(1.3414873, abs=1e-7)


def test_one_sided_kernel_has_no_negative_mass():
    k = JumpKernel(0.8, 1.0, 0.0, 32)
    assert np.all(k.weights()[k.displacements() < 0] == 0)


def test_kernel_mean_values():
    assert kernel_mean(JumpKernel(1.5, 0.5, 0.5, 64)) == pytest.approx(0.0, abs=1e-15)
    assert kernel_mean(JumpKernel(1.5, 1.0, 0.0, 8), untruncated=True) == pytest.approx(2.6123753, abs=1e-7)
    assert kernel_mean(JumpKernel(1.5, 0.0, 1.0, 8), untruncated=True) == pytest.approx(-2.6123753, abs=1e-7)


def test_frame_constant_regimes():
    assert frame_constant(JumpKernel(0.5, 1.0, 0.0, 16), 16) == 0.0
    assert frame_constant(JumpKernel(1.0, 1.0, 0.0, 4), 4) == pytest.approx(25 / 3, rel=1e-12)
    assert frame_constant(JumpKernel(1.0, 0.5, 0.5, 64), 64) == 0.0


def test_theta_alpha_cases():
    assert theta_alpha(2.0, 0.5) == 0.0
    assert theta_alpha(0.5, 1.0) == 0.5
    assert theta_alpha(2.0, 1.0) == 0.0
    assert theta_alpha(-2.0, 1.5) == -2.0
    assert alpha_regime(0.5) < 0 < alpha_regime(1.5)


def test_bad_kernel_parameters():
    with pytest.raises(ModelError):
        JumpKernel(2.5, 1.0, 1.0, 16)
    with pytest.raises(ModelError):
        JumpKernel(1.0, 0.0, 0.0, 16)


def test_configuration_moves_and_cap():
    c = Configuration(np.array([[2, 0], [1, 1], [0, 0]]), cap=2)
    assert c.move(0, 0, 1)
    assert not c.move(0, 0, 1)  # site 1 would exceed the cap
    assert not c.move(1, 2, 0)  # nothing to move
    assert np.array_equal(c.totals, c.counts.sum(axis=0))
    with pytest.raises(Exception):
        Configuration(np.array([[3]]), cap=2)
