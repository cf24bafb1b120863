"""Continuum and discrete long-jump operators on the unit torus.

Test functions are real trigonometric polynomials ``H(u) = sum_k a_k e_k(u)``
with ``e_k(u) = exp(2 pi i k u)`` and ``a_{-k} = conj(a_k)``.  The continuum
operator acts on ``e_k`` by the symbol ``psi(k)``; the discrete operator by a
finite sum over lattice displacements.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn
from scipy.special import zeta

from .model import JumpKernel, alpha_regime, frame_constant

QUAD_TOL = 1e-11


class QuadratureError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Test functions


@dataclass(frozen=True)
class TestFunction:
    """Real trigonometric polynomial given by its non-negative modes.

    ``coeffs[k]`` is ``a_k`` for ``k >= 0``; ``a_0`` must be real.
    """

    __test__ = False  # not a pytest class

    coeffs: tuple

    @classmethod
    def from_modes(cls, modes: dict) -> "TestFunction":
        K = max(modes) if modes else 0
        a = [0j] * (K + 1)
        for k, c in modes.items():
            if k < 0:
                raise ValueError("give non-negative modes only")
            a[k] = complex(c)
        if abs(a[0].imag) > 0:
            raise ValueError("the mean must be real")
        return cls(tuple(a))

    @classmethod
    def cos_mode(cls, k: int, amp: float = 1.0, phase: float = 0.0) -> "TestFunction":
        """``amp * cos(2 pi k u + phase)``."""
        if k == 0:
            return cls.from_modes({0: amp * math.cos(phase)})
        return cls.from_modes({k: 0.5 * amp * np.exp(1j * phase)})

    @classmethod
    def sin_mode(cls, k: int, amp: float = 1.0) -> "TestFunction":
        return cls.cos_mode(k, amp, -0.5 * math.pi)

    @property
    def K(self) -> int:
        return len(self.coeffs) - 1

    def modes(self):
        """Pairs ``(k, a_k)`` for ``k >= 1`` with ``a_k != 0``."""
        return [(k, c) for k, c in enumerate(self.coeffs) if k > 0 and c != 0]

    def coefficient(self, k: int) -> complex:
        if abs(k) > self.K:
            return 0j
        c = self.coeffs[abs(k)]
        return c if k >= 0 else c.conjugate()

    def __call__(self, u, derivative: int = 0):
        u = np.asarray(u, dtype=float)
        out = np.full(u.shape, self.coeffs[0].real if derivative == 0 else 0.0)
        for k, c in self.modes():
            w = 2j * math.pi * k
            out = out + 2.0 * (c * w**derivative * np.exp(w * u)).real
        return out

    def derivative(self, u, order: int = 1):
        return self(u, order)

    def shift(self, a: float) -> "TestFunction":
        """``u -> H(u - a)``."""
        return TestFunction(tuple(c * np.exp(-2j * math.pi * k * a) for k, c in enumerate(self.coeffs)))

    def __add__(self, other: "TestFunction") -> "TestFunction":
        K = max(self.K, other.K)
        return TestFunction(tuple(self.coefficient(k) + other.coefficient(k) for k in range(K + 1)))

    def scale(self, s: float) -> "TestFunction":
        return TestFunction(tuple(s * c for c in self.coeffs))

    def l2_norm_sq(self) -> float:
        return float(abs(self.coeffs[0]) ** 2 + 2 * sum(abs(c) ** 2 for c in self.coeffs[1:]))

    def lattice(self, N: int, derivative: int = 0) -> np.ndarray:
        return self(np.arange(N) / N, derivative)


# ---------------------------------------------------------------------------
# Quadrature helpers


def _quad(f, a, b, **kw):
    val, err = quad(f, a, b, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=1000, **kw)
    if not np.isfinite(val) or err > 1e-7:
        raise QuadratureError(f"quadrature error estimate {err:.2e}")
    return val


def _tail_weight(alpha: float, w):
    """``sum_{j >= 1} (j + w)^{-1-alpha}``: the far field folded onto ``[0, 1)``."""
    return zeta(1.0 + alpha, 1.0 + np.asarray(w, dtype=float))


def _theta_tail(alpha: float) -> float:
    """``int_1^inf theta(v) v^{-1-alpha} dv``."""
    return 1.0 / (alpha - 1.0) if alpha > 1 else 0.0


def _oscillatory_J(k: float, alpha: float) -> complex:
    """``int_0^inf (exp(2 pi i k v) - 1 - theta(v) 2 pi i k) v^{-1-alpha} dv``."""
    w = 2 * math.pi * k
    if w == 0:
        return 0j

    def cos_near(v):
        x = w * v
        if abs(x) < 1e-3:
            return -0.5 * w * w * (1 - x * x / 12.0)
        return (math.cos(x) - 1.0) / (v * v)

    re = _quad(cos_near, 0.0, 1.0, weight="alg", wvar=(1.0 - alpha, 0.0))
    re += quad(lambda v: v ** (-1.0 - alpha), 1.0, np.inf, weight="cos", wvar=w, limlst=200)[0] - 1.0 / alpha

    if alpha < 1:
        def sin_near(v):
            x = w * v
            if abs(x) < 1e-3:
                return w * (1 - x * x / 6.0)
            return math.sin(x) / v
        im = _quad(sin_near, 0.0, 1.0, weight="alg", wvar=(-alpha, 0.0))
    else:
        def sin_near(v):
            x = w * v
            if abs(x) < 1e-3:
                return -w**3 / 6.0 * (1 - x * x / 20.0)
            return (math.sin(x) - x) / v**3
        im = _quad(sin_near, 0.0, 1.0, weight="alg", wvar=(2.0 - alpha, 0.0))
    im += quad(lambda v: v ** (-1.0 - alpha), 1.0, np.inf, weight="sin", wvar=w, limlst=200)[0]
    im -= w * _theta_tail(alpha)
    return complex(re, im)


# ---------------------------------------------------------------------------
# Symbols


@dataclass(frozen=True)
class OperatorSymbol:
    """Per-mode symbols: ``L e_k = psi(k) e_k``, ``L* e_k = psi_star(k) e_k``, ``-S e_k = s_k e_k``."""

    ks: np.ndarray
    psi: np.ndarray
    psi_star: np.ndarray
    s: np.ndarray

    def at(self, k: int) -> complex:
        if k < 0:
            return complex(np.conj(self.at(-k)))
        return complex(self.psi[list(self.ks).index(k)])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "re_psi", "im_psi", "s_k"])
            for k, p, s in zip(self.ks, self.psi, self.s):
                w.writerow([int(k), repr(float(p.real)), repr(float(p.imag)), repr(float(s))])


def continuum_symbol(k: int, alpha: float, c_plus: float, c_minus: float) -> complex:
    """``psi(k)`` by split quadrature."""
    J = _oscillatory_J(float(k), alpha)
    return c_plus * J + c_minus * J.conjugate()


def symbol_scale(alpha: float) -> float:
    """``int_0^inf (1 - cos w) w^{-1-alpha} dw`` in closed form (for cross-checks)."""
    return math.pi / (2.0 * gamma_fn(1.0 + alpha) * math.sin(math.pi * alpha / 2.0))


def symbol_table(alpha: float, c_plus: float, c_minus: float, K: int = 16) -> OperatorSymbol:
    if K < 1:
        raise ValueError("K must be at least 1")
    ks = np.arange(0, K + 1)
    psi = np.array([continuum_symbol(k, alpha, c_plus, c_minus) for k in ks])
    psi_star = np.array([continuum_symbol(k, alpha, c_minus, c_plus) for k in ks])
    s = -psi.real
    if np.abs(psi.real - psi_star.real).max() > 1e-8:
        raise QuadratureError("real parts of psi and psi* disagree")
    return OperatorSymbol(ks, psi, psi_star, s)


def discrete_symbol(k, kernel: JumpKernel, include_frame: bool = True) -> np.ndarray:
    """Exact finite-N symbol of ``U_N`` (or ``L_N``) on ``e_k`` for the truncated kernel."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    N = kernel.lattice_size
    z = kernel.displacements()
    p = kernel.weights()
    psi = N**kernel.alpha * (np.exp(2j * math.pi * np.outer(k, z) / N) - 1.0) @ p
    if include_frame:
        psi = psi - frame_constant(kernel, N) / N * 2j * math.pi * k
    return psi


# ---------------------------------------------------------------------------
# Continuum operator


def apply_L_continuum(H: TestFunction, u, alpha: float, c_plus: float, c_minus: float) -> float:
    """``L H(u)`` by direct quadrature in the jump variable.

    Near-field ``|v| < 1`` uses a Taylor-regularised integrand against the
    algebraic weight ``v^{-alpha}``; the far field is folded onto one period
    with Hurwitz zeta weights.
    """
    u = float(u)
    h0, h1, h2, h3 = (float(H(u, d)) for d in range(4))
    cp, cm = c_plus, c_minus
    big = alpha >= 1

    def near(v):
        # c+ (H(u+v)-H(u)) + c- (H(u-v)-H(u)) minus compensator, over v (or v^2 when compensated)
        if v < 1e-3:
            if big:
                return (cp + cm) * h2 / 2 + (cp - cm) * h3 * v / 6
            return (cp - cm) * h1 + (cp + cm) * h2 * v / 2 + (cp - cm) * h3 * v * v / 6
        up = float(H(u + v)) - h0
        dn = float(H(u - v)) - h0
        if big:
            return (cp * up + cm * dn - (cp - cm) * v * h1) / (v * v)
        return (cp * up + cm * dn) / v

    val = _quad(near, 0.0, 1.0, weight="alg", wvar=((1.0 if big else 0.0) - alpha, 0.0))

    def far(w):
        return (cp * float(H(u + w)) + cm * float(H(u - w))) * float(_tail_weight(alpha, w))

    val += _quad(far, 0.0, 1.0) - (cp + cm) * h0 / alpha
    val -= (cp - cm) * h1 * _theta_tail(alpha)
    return val


# ---------------------------------------------------------------------------
# Discrete operators


def _periodized_weights(kernel: JumpKernel, full: bool):
    """Weights on residues ``r = 1..N-1`` for positive and negative jumps."""
    N = kernel.lattice_size
    a = kernel.alpha
    r = np.arange(1, N)
    if full:
        base = N ** (-1.0 - a) * zeta(1.0 + a, r / N)
        return kernel.c_plus * base, kernel.c_minus * base
    wp = np.where(r <= kernel.radius, kernel.c_plus * r ** (-1.0 - a), 0.0)
    wm = np.where(r <= kernel.radius, kernel.c_minus * r ** (-1.0 - a), 0.0)
    return wp, wm


def apply_U_discrete(H: TestFunction, kernel: JumpKernel, x=None, full: bool = False) -> np.ndarray:
    """``U_N H(x/N)`` at lattice sites ``x`` (default: all sites).

    ``full=False`` uses the truncated kernel ``1 <= |y| <= N/2``; ``full=True``
    sums the kernel over all of ``Z`` with torus wrap.
    """
    N = kernel.lattice_size
    xs = np.arange(N) if x is None else np.atleast_1d(np.asarray(x))
    vals = H.lattice(N)
    wp, wm = _periodized_weights(kernel, full)
    r = np.arange(1, N)
    up = vals[(xs[:, None] + r[None, :]) % N]
    dn = vals[(xs[:, None] - r[None, :]) % N]
    base = vals[xs][:, None]
    out = N**kernel.alpha * ((up - base) @ wp + (dn - base) @ wm)
    return out


def apply_L_discrete(H: TestFunction, kernel: JumpKernel, x=None, full: bool = False) -> np.ndarray:
    """``L_N H(x/N) = U_N H(x/N) - (m^alpha_N / N) H'(x/N)``."""
    N = kernel.lattice_size
    xs = np.arange(N) if x is None else np.atleast_1d(np.asarray(x))
    U = apply_U_discrete(H, kernel, xs, full)
    m = frame_constant(kernel, N)
    return U - m / N * H(xs / N, 1)


def apply_L_spectral(H: TestFunction, u, sym: OperatorSymbol) -> np.ndarray:
    """``L H(u)`` from a symbol table."""
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape)
    for k, c in H.modes():
        out = out + 2 * (c * sym.psi[k] * np.exp(2j * math.pi * k * u)).real
    return out


def operator_distance(H: TestFunction, kernel: JumpKernel, sym: OperatorSymbol, full: bool = True):
    """Sup-norm and lattice-L1 distances between ``L_N H`` and ``L H``."""
    N = kernel.lattice_size
    d = apply_L_discrete(H, kernel, full=full) - apply_L_spectral(H, np.arange(N) / N, sym)
    return float(np.abs(d).max()), float(np.abs(d).mean())


# ---------------------------------------------------------------------------
# Dirichlet forms


def dirichlet_form_spectral(H: TestFunction, sym: OperatorSymbol) -> float:
    """``<H, (-S) H> = sum_k s_k |a_k|^2``."""
    return float(2 * sum(sym.s[k] * abs(c) ** 2 for k, c in H.modes()))


def dirichlet_form(H: TestFunction, alpha: float, c_plus: float, c_minus: float,
                   n_u: int | None = None, sym: OperatorSymbol | None = None) -> float:
    """Double-integral Dirichlet form, checked against the spectral sum."""
    n_u = n_u or 8 * (H.K + 1)
    us = np.arange(n_u) / n_u
    h0 = H(us)

    def D(v):  # int_0^1 (H(u+v) - H(u))^2 du, exact for trig polynomials
        return float(np.mean((H(us + v) - h0) ** 2))

    def near(v):
        if v < 1e-4:
            return float(np.mean(H(us, 1) ** 2))
        return D(v) / v**2

    c = c_plus + c_minus
    # the integrand is even in v, so (c/4) * 2 * int_0^inf
    val = _quad(near, 0.0, 1.0, weight="alg", wvar=(1.0 - alpha, 0.0))
    val += _quad(lambda w: D(w) * float(_tail_weight(alpha, w)), 0.0, 1.0)
    val *= c / 2.0
    ref = dirichlet_form_spectral(H, sym or symbol_table(alpha, c_plus, c_minus, max(H.K, 1)))
    if abs(val - ref) > 1e-6 * max(abs(ref), 1e-12):
        raise QuadratureError(f"Dirichlet form quadrature {val} disagrees with spectral value {ref}")
    return val


def discrete_dirichlet_form(H: TestFunction, kernel: JumpKernel) -> float:
    """``<H, -S_N H>_N = (N^alpha / 2N) sum_x sum_z p(z) (H((x+z)/N) - H(x/N))^2``."""
    N = kernel.lattice_size
    vals = H.lattice(N)
    tot = 0.0
    for z, pz in zip(kernel.displacements(), kernel.weights()):
        tot += pz * np.sum((np.roll(vals, -z) - vals) ** 2)
    return float(N**kernel.alpha * tot / (2 * N))


def qv_rate_sum(H: TestFunction, kernel: JumpKernel) -> float:
    """``N^{alpha-1} sum_x sum_z p(z) (H((x+z)/N) - H(x/N))^2``; equals ``2 <H,-S_N H>_N``."""
    return 2.0 * discrete_dirichlet_form(H, kernel)


# ---------------------------------------------------------------------------
# Scale functions


def gamma_alpha(N: float, alpha: float) -> float:
    r = alpha_regime(alpha)
    return 1.0 if r < 0 else (math.log(N) if r == 0 else N ** (alpha - 1.0))


def beta_alpha(ell: float, alpha: float) -> float:
    r = alpha_regime(alpha)
    return ell ** (alpha - 1.0) if r > 0 else (math.log(ell) ** 2 if r == 0 else 1.0)


def drift_speed(kernel: JumpKernel, lam: float) -> float:
    """Frame velocity ``lambda m^alpha_N / N`` on the unit torus."""
    return lam * frame_constant(kernel, kernel.lattice_size) / kernel.lattice_size


__all__ = [
    "TestFunction", "OperatorSymbol", "QuadratureError", "continuum_symbol", "symbol_table",
    "symbol_scale", "discrete_symbol", "apply_L_continuum", "apply_U_discrete", "apply_L_discrete",
    "apply_L_spectral", "operator_distance", "dirichlet_form", "dirichlet_form_spectral",
    "discrete_dirichlet_form", "qv_rate_sum", "gamma_alpha", "beta_alpha", "drift_speed",
]
