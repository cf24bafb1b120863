from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from zrpfluct.gibbs import invert_density, find_frame_density
from zrpfluct.model import JumpKernel, constant_rate, linear_rates, potential_coupled
from zrpfluct.operators import TestFunction, symbol_table
from zrpfluct.ou import (BlowUpError, burgers_spec, burgers_step, evaluate, nonlinearity, ou_autocorrelation,
                        ou_exact_step, ou_spec, simulate_ou, stationary_draw)

H = TestFunction.cos_mode(1)


@pytest.fixture(scope="module")
def single():
    return invert_density(linear_rates(1), [0.7])


def test_one_step_mean(single):
    spec = ou_spec(single, JumpKernel(0.75, 0.5, 0.5, 64), K=4, dt=0.01)
    rng = np.random.default_rng(0)
    y0 = np.full((20_000, 4, 1), 0.3 + 0.1j)
    y1 = ou_exact_step(y0, spec, rng)
    expected = np.einsum("kij,kj->ki", spec.F, y0[0])
    se = np.abs(y1 - y0).std(axis=0) / math.sqrt(len(y0))
    assert np.all(np.abs(y1.mean(axis=0) - expected) < 5 * se + 1e-12)


def test_stationary_variance(single):
    spec = ou_spec(single, JumpKernel(0.75, 0.5, 0.5, 64), K=4, dt=0.05)
    _, Y = simulate_ou(spec, [H], 2.0, np.random.default_rng(1), replicas=4000, record_every=20)
    v = Y[0, :, -1, 0] ** 2
    exact = single.gamma[0, 0] * H.l2_norm_sq()
    assert abs(v.mean() - exact) < 4 * v.std(ddof=1) / math.sqrt(len(v))


def test_autocorrelation_decay_rate(single):
    kernel = JumpKernel(1.25, 0.5, 0.5, 64)
    spec = ou_spec(single, kernel, K=4, discrete=False)
    s1 = symbol_table(1.25, 0.5, 0.5, 1).s[1]
    c0 = ou_autocorrelation(spec, H, H, 0.0)[0, 0]
    c1 = ou_autocorrelation(spec, H, H, 0.1)[0, 0]
    assert c0 == pytest.approx(single.gamma[0, 0] * H.l2_norm_sq(), rel=1e-10)
    assert c1 / c0 == pytest.approx(math.exp(-single.lambda_matrix[0, 0] * s1 * 0.1), rel=1e-9)


def test_autocorrelation_structure():
    pt = invert_density(linear_rates(2), [0.4, 0.9])
    spec = ou_spec(pt, JumpKernel(0.75, 0.75, 0.25, 64), K=4)
    G = TestFunction.from_modes({1: 0.3, 2: 0.1j})
    c = ou_autocorrelation(spec, G, G, 0.0)
    assert np.allclose(np.diag(c), np.diag(pt.gamma) * G.l2_norm_sq())
    assert abs(c[0, 1]) < 1e-14
    assert np.abs(ou_autocorrelation(spec, G, G, 200.0)).max() < 1e-10


def test_coupled_lag_zero_is_gamma():
    pt = invert_density(potential_coupled(2, 0.1), [0.6, 0.4])
    spec = ou_spec(pt, JumpKernel(0.75, 0.75, 0.25, 128), K=3)
    assert np.allclose(ou_autocorrelation(spec, H, H, 0.0), pt.gamma * H.l2_norm_sq(), atol=1e-12)


def test_literal_noise_doubles_stationary_variance(single):
    spec = ou_spec(single, JumpKernel(1.25, 0.5, 0.5, 64), K=3, noise="literal")
    for S in spec.stationary:
        assert S[0, 0].real == pytest.approx(2 * single.gamma[0, 0], rel=1e-9)


def test_stationary_draw_covariance(single):
    spec = ou_spec(single, JumpKernel(0.75, 0.5, 0.5, 64), K=2)
    z = stationary_draw(spec, np.random.default_rng(3), (50_000,))
    assert np.mean(np.abs(z[:, 0, 0]) ** 2) == pytest.approx(single.gamma[0, 0], rel=0.03)


def _frame_point():
    return find_frame_density(constant_rate(2), ((0.4, 0.6),))


def test_burgers_without_quadratic_term_is_ou():
    pt = _frame_point()
    spec = burgers_spec(pt, JumpKernel(1.5, 0.75, 0.25, 64), K=8, dt=1e-3, quadratic=False)
    y = stationary_draw(spec.ou, np.random.default_rng(0), (5,))
    a = burgers_step(y, spec, np.random.default_rng(9))
    b = ou_exact_step(y, spec.ou, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_symmetric_kernel_has_no_nonlinearity():
    spec = burgers_spec(_frame_point(), JumpKernel(1.5, 0.5, 0.5, 64), K=8)
    assert not np.any(spec.quad)


def test_nonlinearity_single_mode():
    spec = burgers_spec(invert_density(constant_rate(1), [1.0]), JumpKernel(1.5, 0.75, 0.25, 64), K=4, lam=0.25)
    q = spec.quad[0, 0, 0]
    state = np.zeros((4, 1), dtype=complex)
    a = 0.3 - 0.2j
    state[0, 0] = a
    out = nonlinearity(state, spec)[:, 0]
    assert out[1] == pytest.approx(q * 4j * math.pi * a**2, abs=1e-12)
    assert np.abs(out[[0, 2, 3]]).max() < 1e-12


def test_evaluate_real_and_conjugate_symmetric():
    state = np.array([[0.2 + 0.1j], [0.0 - 0.3j]])
    G = TestFunction.from_modes({1: 0.5, 2: 0.25j})
    u = np.arange(64) / 64
    y = 2 * (state[0, 0] * np.exp(2j * math.pi * u) + state[1, 0] * np.exp(4j * math.pi * u)).real
    assert evaluate(state, G)[0] == pytest.approx(np.mean(y * G(u)), abs=1e-12)


def test_single_species_burgers_preserves_stationary_law():
    pt = invert_density(constant_rate(1), [1.0])
    spec = burgers_spec(pt, JumpKernel(1.5, 0.75, 0.25, 64), K=8, dt=2e-3, lam=0.25)
    _, Y = simulate_ou(spec, [H], 0.5, np.random.default_rng(5), replicas=3000, record_every=250, burgers=True)
    final = Y[0, :, -1, 0]
    sd = math.sqrt(pt.gamma[0, 0] * H.l2_norm_sq())
    assert final.var() == pytest.approx(sd**2, rel=0.1)
    assert stats.kstest(final / sd, "norm").pvalue > 0.001


def test_blow_up_detected():
    spec = burgers_spec(invert_density(constant_rate(1), [1.0]), JumpKernel(1.5, 0.75, 0.25, 64), K=4, lam=0.25)
    big = np.full((4, 1), 1e6 + 0j)
    with pytest.raises(BlowUpError):
        burgers_step(big, spec, np.random.default_rng(0))
