from __future__ import annotations

import math

import numpy as np
import pytest

from zrpfluct.experiments import EnsembleSpec, run_ensemble
from zrpfluct.fields import (Accumulator, FieldFrame, bg_bound_shape, bg_first_components, bg_first_integrand,
                             bg_second_integrand, block_average, build_components, decompose_trajectory,
                             dirichlet_factor, energy_estimator, equivalence_of_ensembles_check,
                             fluctuation_field, optimal_block, quadratic_variation, reversibility_defect,
                             canonical_generator, spectral_gap, v_table)
from zrpfluct.gibbs import (density_derivatives, find_frame_density, invert_density, rate_function,
                            sample_configuration, site_function)
from zrpfluct.kmc import JUMP_DTYPE, simulate
from zrpfluct.model import Configuration, JumpKernel, constant_rate, linear_rates, potential_coupled
from zrpfluct.operators import TestFunction, apply_L_discrete

H = TestFunction.from_modes({1: 0.5, 2: 0.1j})


@pytest.fixture(scope="module")
def coupled():
    return invert_density(potential_coupled(2, 0.1), [0.6, 0.4])


def test_accumulator_merge_and_stderr():
    rng = np.random.default_rng(0)
    x = rng.normal(size=1000)
    a = Accumulator.of(x[:400]).merge(Accumulator.of(x[400:]))
    assert a.mean == pytest.approx(x.mean())
    assert a.stderr == pytest.approx(x.std(ddof=1) / math.sqrt(1000))


def test_frame_shift_vanishes_below_one(coupled):
    frame = FieldFrame.for_point(coupled, JumpKernel(0.75, 0.75, 0.25, 64))
    assert frame.shift(0.37) == 0.0
    f2 = FieldFrame(0.5, 3.0, 64)
    u = np.linspace(0, 1, 9)
    assert np.allclose(f2.moved(H, 0.2)(u), H(u - f2.velocity * 0.2))


def test_field_of_flat_configuration_is_zero():
    pt = invert_density(linear_rates(2), [1.0, 2.0])
    c = Configuration(np.tile([1, 2], (32, 1)))
    frame = FieldFrame(0.0, 0.0, 32)
    assert fluctuation_field(c, pt, H, frame, 0.0, 0) == pytest.approx(0.0, abs=1e-12)
    assert fluctuation_field(c, pt, H, frame, 0.0, 1) == pytest.approx(0.0, abs=1e-12)


def test_field_linearity(coupled):
    c = sample_configuration(coupled, 64, 1)
    frame = FieldFrame(0.0, 0.0, 64)
    G = TestFunction.cos_mode(3)
    lhs = fluctuation_field(c, coupled, H.scale(2.0) + G.scale(-0.5), frame, 0.0, 0)
    rhs = 2.0 * fluctuation_field(c, coupled, H, frame, 0.0, 0) - 0.5 * fluctuation_field(c, coupled, G, frame, 0.0, 0)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_field_variance_under_product_measure(coupled):
    N, R = 64, 4000
    frame = FieldFrame(0.0, 0.0, N)
    y = np.array([fluctuation_field(sample_configuration(coupled, N, r), coupled, H, frame, 0.0, 1) ** 2
                  for r in range(R)])
    h = H.lattice(N)
    exact = coupled.gamma[1, 1] * np.mean(h * h)
    assert abs(y.mean() - exact) < 4 * y.std(ddof=1) / math.sqrt(R)


def test_block_average_examples(coupled):
    c = sample_configuration(coupled, 50, 2)
    assert np.array_equal(block_average(c, None, 0, 1), c.counts[:, 1])
    flat = Configuration(np.full((20, 1), 3))
    assert np.allclose(block_average(flat, None, 4), 3.0)
    vals = []
    for r in range(400):
        cfg = sample_configuration(coupled, 200, 100 + r)
        vals.append(block_average(cfg, None, 5, 0, centered=True, rho=coupled.rho[0])[::11])
    v = np.concatenate(vals)
    sq = v**2
    assert abs(sq.mean() - coupled.gamma[0, 0] / 11) < 4 * sq.std(ddof=1) / math.sqrt(len(sq))


def test_linear_rates_have_no_drift_term():
    pt = invert_density(linear_rates(2), [0.5, 0.8])
    assert np.abs(v_table(pt, 0)).max() < 1e-9
    kernel = JumpKernel(0.75, 0.75, 0.25, 64)
    frame = FieldFrame.for_point(pt, kernel)
    comps = build_components(pt, kernel, H, frame, decomposition=True)
    tr = simulate(pt, kernel, 0.2, 3, grid=np.linspace(0, 0.2, 5), components=comps)
    s = decompose_trajectory(tr)
    for i in range(2):
        assert np.abs(s.A[i]).max() < 1e-9
        assert s.closure_residual(i) < 1e-9


def test_frame_drift_term_equals_field_of_discrete_operator():
    pt = find_frame_density(constant_rate(2), ((0.4, 0.6),))
    kernel = JumpKernel(1.25, 0.75, 0.25, 64)
    frame = FieldFrame.for_point(pt, kernel)
    comps = build_components(pt, kernel, H, frame, decomposition=True)
    tr = simulate(pt, kernel, 1e-6, 0, grid=[0.0], components=comps)
    b = tr.component_values()[0, comps.members(comps.index("B0"))].sum()
    LH = apply_L_discrete(H, kernel)
    expected = frame.lam * np.dot(tr.initial.counts[:, 0] - pt.rho[0], LH) / math.sqrt(64)
    assert b == pytest.approx(expected, abs=1e-10)


def test_generator_check_identity(coupled):
    kernel = JumpKernel(0.75, 0.75, 0.25, 64)
    frame = FieldFrame.for_point(coupled, kernel)
    comps = build_components(coupled, kernel, H, frame, decomposition=True, generator_check=True)
    tr = simulate(coupled, kernel, 0.3, 2, grid=np.linspace(0, 0.3, 4), components=comps)
    for i in range(2):
        g = tr.group_integrals(f"G{i}")
        assert np.allclose(g, tr.group_integrals(f"A{i}") + tr.group_integrals(f"B{i}"), atol=1e-10)


def test_martingale_increments_uncorrelated(coupled):
    kernel = JumpKernel(0.75, 0.75, 0.25, 64)
    er = run_ensemble(EnsembleSpec(coupled, kernel, T=0.5, steps=2, replicas=1000, seed=17, decompose=(0,)))
    M = er.M[:, 0, :]
    d1, d2 = M[:, 1] - M[:, 0], M[:, 2] - M[:, 1]
    r = np.corrcoef(d1, d2)[0, 1]
    assert abs(r) < 4 / math.sqrt(len(d1))


def test_quadratic_variation_without_jumps():
    frame = FieldFrame(0.0, 0.0, 16)
    empty = np.zeros(0, dtype=JUMP_DTYPE)
    assert np.all(quadratic_variation(empty, H, frame, 0, [0.0, 1.0]) == 0)


def test_bg_first_linear_statistic_cancels(coupled):
    f = site_function(lambda k: 0.3 * k[..., 0] + 1.2 * k[..., 1])
    grad = np.array([0.3, 1.2])
    f0 = float(grad @ coupled.rho)
    frame = FieldFrame(0.0, 0.0, 32)
    for _, phi, _ in [(0, *c[:2]) for c in bg_first_components(coupled, H, frame, f, 0, f0, grad)]:
        assert np.abs(phi).max() < 1e-12
    counts = sample_configuration(coupled, 32, 4).counts
    assert bg_first_integrand(counts, coupled, f, f0, grad, 0, H.lattice(32)) == pytest.approx(0.0, abs=1e-10)


def test_bg_second_quadratic_statistic_cancels():
    pt = invert_density(linear_rates(2), [0.7, 0.3])
    f = site_function(lambda k: (k[..., 0] - 0.7) * (k[..., 1] - 0.3))
    f0, _, hess = density_derivatives(pt.model, pt.rho, f, pt.cap, second=True)
    counts = sample_configuration(pt, 32, 8).counts
    val = bg_second_integrand(counts, pt, f, f0, hess, 0, H.lattice(32))
    assert val == pytest.approx(0.0, abs=1e-5)


def test_dirichlet_factor_limits():
    assert dirichlet_factor(3, 0, 64) == 1.0
    assert dirichlet_factor(0, 7, 64) == pytest.approx(1.0)
    assert abs(dirichlet_factor(1, 31, 64)) < 0.05


def test_bg_residual_within_fitted_bound():
    pt = invert_density(constant_rate(1), [1.0])
    alpha, T = 0.75, 0.5
    vals = {}
    for N in (64, 256):
        kernel = JumpKernel(alpha, 0.75, 0.25, N)
        ell = optimal_block(N, alpha)
        er = run_ensemble(EnsembleSpec(pt, kernel, T=T, steps=20, replicas=200, seed=3, bg_ell=ell))
        vals[N] = (np.mean(np.max(er.bg**2, axis=1)), sum(bg_bound_shape(N, ell, alpha, T, H)))
    C = vals[64][0] / vals[64][1]
    assert vals[256][0] <= C * vals[256][1]


def test_energy_estimator_trivial_cases():
    pt = invert_density(linear_rates(2), [0.5, 0.5])
    kernel = JumpKernel(1.5, 0.5, 0.5, 64)
    tr = simulate(pt, kernel, 0.1, 1, grid=np.linspace(0, 0.1, 5), snapshots=True)
    frame = FieldFrame.for_point(pt, kernel)
    assert np.abs(energy_estimator(tr, pt, H, frame, 1 / 8)).max() < 1e-12
    cpt = find_frame_density(constant_rate(2), ((0.4, 0.6),))
    tr = simulate(cpt, kernel, 0.1, 1, grid=np.linspace(0, 0.1, 5), snapshots=True)
    const = TestFunction.from_modes({0: 1.0})
    assert np.abs(energy_estimator(tr, cpt, const, FieldFrame.for_point(cpt, kernel), 1 / 8)).max() < 1e-12


def test_equivalence_of_ensembles_examples():
    pt = invert_density(linear_rates(2), [0.6, 0.4])
    lin = site_function(lambda k: 2.0 * (k[..., 0] - 0.6) - (k[..., 1] - 0.4))
    rep = equivalence_of_ensembles_check(lin, pt, 2, derivatives=(0.0, np.array([2.0, -1.0]), np.zeros((2, 2))))
    assert rep.first < 1e-12
    prod = site_function(lambda k: (k[..., 0] - 0.6) * (k[..., 1] - 0.4))
    rep = equivalence_of_ensembles_check(prod, pt, 2, derivatives=(0.0, np.zeros(2), np.array([[0, 1.0], [1.0, 0]])))
    assert rep.second < 1e-12
    single = invert_density(potential_coupled(1, 0.0), [0.8])
    g = rate_function(single.model, 0, single.cap)
    sq = site_function(lambda k: k[..., 0] ** 2)
    e2 = equivalence_of_ensembles_check(sq, single, 2).first
    e3 = equivalence_of_ensembles_check(sq, single, 3).first
    assert e3 < e2
    assert g.radius == 0


def test_spectral_gap_three_sites():
    # symmetric part s(z) = (c+ + c-)/2 |z|^{-1-alpha}
    a, b = 0.5, 0.5 * 2.0**-1.75
    W = spectral_gap(linear_rates(1), 0.75, 0.5, 0.5, 1, [1])
    assert W == pytest.approx(1.0 / min(a + 2 * b, 3 * a), rel=1e-12)


def test_spectral_gap_independent_of_particle_number():
    w1 = spectral_gap(linear_rates(1), 1.5, 0.75, 0.25, 2, [1])
    w3 = spectral_gap(linear_rates(1), 1.5, 0.75, 0.25, 2, [3])
    assert w1 == pytest.approx(w3, abs=1e-9)


def test_canonical_chain_reversible():
    Q, nu, _ = canonical_generator(potential_coupled(2, 0.1), 0.75, 0.75, 0.25, 1, [2, 1])
    assert reversibility_defect(Q, nu) < 1e-12
