from __future__ import annotations

import math

import numpy as np
import pytest

from zrpfluct.model import JumpKernel
from zrpfluct.operators import (TestFunction, apply_L_continuum, apply_L_discrete, apply_L_spectral,
                                apply_U_discrete, beta_alpha, continuum_symbol, dirichlet_form,
                                dirichlet_form_spectral, discrete_dirichlet_form, discrete_symbol, gamma_alpha,
                                operator_distance, qv_rate_sum, symbol_scale, symbol_table)

H2 = TestFunction.from_modes({1: 0.5, 3: 0.2 - 0.1j})


def test_test_function_real_and_derivative():
    rng = np.random.default_rng(0)
    u = rng.random(20)
    vals = H2(u)
    assert vals.dtype == float
    h = 1e-5
    fd = (H2(u + h) - H2(u - h)) / (2 * h)
    assert np.allclose(H2(u, 1), fd, atol=1e-6)


def test_test_function_shift_and_norm():
    H = TestFunction.cos_mode(2, 1.5, 0.3)
    u = np.linspace(0, 1, 11)
    assert np.allclose(H.shift(0.13)(u), H(u - 0.13), atol=1e-14)
    assert H.l2_norm_sq() == pytest.approx(1.5**2 / 2)


def test_symbol_properties():
    sym = symbol_table(0.75, 0.75, 0.25, 8)
    assert sym.psi[0] == 0 and sym.s[0] == 0
    assert np.all(sym.s[1:] > 0)
    assert sym.at(-3) == pytest.approx(np.conj(sym.at(3)))
    ratio = sym.s[1:] / sym.s[1]
    assert np.allclose(ratio, np.arange(1, 9) ** 0.75, rtol=1e-6)


def test_symmetric_symbol_is_real():
    sym = symbol_table(1.25, 0.5, 0.5, 6)
    assert np.abs(sym.psi.imag).max() < 1e-8
    assert np.allclose(sym.psi.real, -sym.s, atol=1e-10)


def test_symbol_matches_closed_form_scale():
    for alpha in (0.5, 1.0, 1.5):
        s1 = -continuum_symbol(1, alpha, 0.6, 0.4).real
        assert s1 == pytest.approx((2 * math.pi) ** alpha * symbol_scale(alpha), rel=1e-9)


def test_alpha_one_closed_form():
    sym = symbol_table(1.0, 0.5, 0.5, 4)
    assert np.allclose(sym.s[1:], math.pi**2 * np.arange(1, 5), rtol=1e-9)


def test_continuum_operator_examples():
    const = TestFunction.from_modes({0: 2.0})
    assert apply_L_continuum(const, 0.3, 0.75, 0.75, 0.25) == pytest.approx(0.0, abs=1e-10)
    H = TestFunction.cos_mode(2)
    sym = symbol_table(0.75, 0.5, 0.5, 2)
    for u in (0.0, 0.17, 0.6):
        assert apply_L_continuum(H, u, 0.75, 0.5, 0.5) == pytest.approx(-sym.s[2] * H(u), abs=1e-8)


@pytest.mark.parametrize("alpha", [0.75, 1.0, 1.25])
def test_continuum_operator_matches_spectral(alpha):
    sym = symbol_table(alpha, 0.75, 0.25, 3)
    for u in (0.05, 0.4):
        got = apply_L_continuum(H2, u, alpha, 0.75, 0.25)
        assert got == pytest.approx(float(apply_L_spectral(H2, u, sym)), abs=1e-8)


def test_discrete_operator_constant_and_symmetric_case():
    const = TestFunction.from_modes({0: 1.0})
    k = JumpKernel(0.75, 0.75, 0.25, 64)
    assert np.abs(apply_L_discrete(const, k)).max() < 1e-12
    sym_k = JumpKernel(1.5, 0.5, 0.5, 64)
    assert np.allclose(apply_L_discrete(H2, sym_k), apply_U_discrete(H2, sym_k), atol=1e-12)


def test_discrete_symbol_matches_operator():
    k = JumpKernel(1.25, 0.75, 0.25, 128)
    x = np.arange(128)
    H = TestFunction.from_modes({2: 1.0 + 0.0j})
    psi = discrete_symbol(2, k)[0]
    expected = 2 * (psi * np.exp(2j * math.pi * 2 * x / 128)).real
    assert np.allclose(apply_L_discrete(H, k), expected, atol=1e-9)


def test_discrete_convergence_symmetric_single_mode():
    H = TestFunction.cos_mode(1)
    sym = symbol_table(0.75, 0.5, 0.5, 1)
    d256 = operator_distance(H, JumpKernel(0.75, 0.5, 0.5, 256), sym)[0]
    d512 = operator_distance(H, JumpKernel(0.75, 0.5, 0.5, 512), sym)[0]
    assert d256 / d512 >= 1.5


@pytest.mark.parametrize("alpha,rate", [(0.75, 0.25), (1.25, 0.75)])
def test_asymmetric_discretisation_rate(alpha, rate):
    # the odd part of the kernel converges like N^{alpha-1} (alpha<1) or N^{alpha-2} (alpha>1)
    sym = symbol_table(alpha, 0.75, 0.25, 3)
    d = [operator_distance(H2, JumpKernel(alpha, 0.75, 0.25, N), sym)[0] for N in (256, 512)]
    assert d[0] / d[1] == pytest.approx(2**rate, rel=0.02)


def test_dirichlet_form_examples():
    assert dirichlet_form(TestFunction.from_modes({0: 0.0}), 0.75, 0.75, 0.25) == 0.0
    sym = symbol_table(1.0, 0.5, 0.5, 1)
    H = TestFunction.cos_mode(1)
    assert dirichlet_form(H, 1.0, 0.5, 0.5) == pytest.approx(sym.s[1] / 2, rel=1e-7)
    a = dirichlet_form(H2, 0.75, 0.75, 0.25)
    b = dirichlet_form(H2.shift(0.31), 0.75, 0.75, 0.25)
    assert a == pytest.approx(b, abs=1e-10)
    assert a == pytest.approx(dirichlet_form_spectral(H2, symbol_table(0.75, 0.75, 0.25, 3)), rel=1e-7)


def test_discrete_dirichlet_form_matches_discrete_symbol():
    k = JumpKernel(1.25, 0.75, 0.25, 256)
    dd = discrete_dirichlet_form(H2, k)
    assert qv_rate_sum(H2, k) == pytest.approx(2 * dd)
    s_N = -discrete_symbol([1, 3], k, include_frame=False).real
    assert dd == pytest.approx(2 * (s_N[0] * abs(H2.coefficient(1)) ** 2 + s_N[1] * abs(H2.coefficient(3)) ** 2),
                               rel=1e-10)


def test_scale_functions():
    assert gamma_alpha(100, 0.5) == 1.0 and beta_alpha(7, 0.5) == 1.0
    assert gamma_alpha(math.e**2, 1.0) == pytest.approx(2.0)
    assert beta_alpha(16, 1.5) == pytest.approx(4.0)
