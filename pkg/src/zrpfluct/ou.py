"""Spectral reference solvers for the limiting stochastic equations.

State convention: ``Y[..., k-1, i]`` holds the Fourier coefficient
``Y^i(e_{-k})`` for ``k = 1..K``; negative modes are the complex conjugates and
mode 0 is pinned at zero.  Mode ``k`` of the drift is ``C psi*(k)`` with
``psi*`` the symbol of the adjoint operator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov

from .gibbs import DensityPoint, frame_speed
from .model import JumpKernel, alpha_regime, kernel_mean
from .operators import TestFunction, discrete_symbol, symbol_table


class OUError(RuntimeError):
    pass


class BlowUpError(OUError):
    pass


@dataclass
class OUSpec:
    n: int
    coupling: np.ndarray  # (n, n)
    gamma: np.ndarray  # (n, n) stationary covariance
    g_tilde: np.ndarray
    psi: np.ndarray  # (K,) symbol of the operator on e_k, k = 1..K
    dt: float
    noise: str = "calibrated"

    def __post_init__(self):
        self.K = len(self.psi)
        self.drift = np.array([self.coupling * np.conj(p) for p in self.psi])  # C psi*(k)
        for D in self.drift:
            if np.linalg.eigvals(D).real.max() >= 0:
                raise OUError("drift spectrum is not stable")
        s = -self.psi.real
        if self.noise == "calibrated":
            rate = [-(D @ self.gamma + self.gamma @ D.conj().T) for D in self.drift]
        elif self.noise == "literal":
            rate = [4.0 * sk * np.diag(self.g_tilde) for sk in s]
        else:
            raise ValueError("noise must be 'calibrated' or 'literal'")
        self.noise_rate = np.array(rate)
        self.stationary = np.array([solve_continuous_lyapunov(D, -R) for D, R in zip(self.drift, self.noise_rate)])
        self._prepare(self.dt)

    def _prepare(self, dt):
        self.F = np.array([expm(dt * D) for D in self.drift])
        self.F_half = np.array([expm(0.5 * dt * D) for D in self.drift])
        cov = np.array([S - F @ S @ F.conj().T for S, F in zip(self.stationary, self.F)])
        self.noise_chol = np.array([_psd_sqrt(c) for c in cov])

    @property
    def ks(self) -> np.ndarray:
        return np.arange(1, self.K + 1)

    def stationary_scale(self) -> float:
        return float(np.sqrt(sum(np.trace(S).real for S in self.stationary)))


def _psd_sqrt(c: np.ndarray) -> np.ndarray:
    c = 0.5 * (c + c.conj().T)
    w, v = np.linalg.eigh(c)
    return v * np.sqrt(np.clip(w, 0.0, None))


def ou_spec(point: DensityPoint, kernel: JumpKernel, K: int = 16, dt: float = 1e-3, discrete: bool = True,
            noise: str = "calibrated", lam: float | None = None) -> OUSpec:
    """Limit equation at ``point``: coupling ``Q`` for alpha < 1, ``lambda I`` otherwise.

    ``discrete`` selects the exact finite-N symbol of ``L_N`` (statistical
    targets) instead of the continuum symbol.
    """
    n = point.n
    if alpha_regime(kernel.alpha) < 0:
        C = point.lambda_matrix.copy()
    else:
        lam = frame_speed(point) if lam is None else lam
        C = lam * np.eye(n)
    if discrete:
        psi = discrete_symbol(np.arange(1, K + 1), kernel, include_frame=True)
    else:
        psi = symbol_table(kernel.alpha, kernel.c_plus, kernel.c_minus, K).psi[1:]
    return OUSpec(n, C, point.gamma.copy(), point.g_tilde.copy(), np.asarray(psi, dtype=complex), dt, noise)


def stationary_draw(spec: OUSpec, rng, batch=()) -> np.ndarray:
    z = (rng.standard_normal((*batch, spec.K, spec.n)) + 1j * rng.standard_normal((*batch, spec.K, spec.n))) / math.sqrt(2)
    L = np.array([_psd_sqrt(S) for S in spec.stationary])
    return np.einsum("kij,...kj->...ki", L, z)


def ou_exact_step(state: np.ndarray, spec: OUSpec, rng) -> np.ndarray:
    """Exact transition over ``spec.dt`` for every mode."""
    z = (rng.standard_normal(state.shape) + 1j * rng.standard_normal(state.shape)) / math.sqrt(2)
    return np.einsum("kij,...kj->...ki", spec.F, state) + np.einsum("kij,...kj->...ki", spec.noise_chol, z)


def evaluate(state: np.ndarray, H: TestFunction) -> np.ndarray:
    """``Y^i(H)`` for every species, shape ``(..., n)``."""
    out = 0.0
    for k, c in H.modes():
        if k <= state.shape[-2]:
            out = out + 2 * (np.conj(c) * state[..., k - 1, :]).real
    return np.asarray(out)


def ou_autocorrelation(spec: OUSpec, H: TestFunction, G: TestFunction, t: float) -> np.ndarray:
    """``E[Y^i_t(H) Y^j_0(G)]`` as an ``n x n`` matrix."""
    out = np.zeros((spec.n, spec.n))
    for k, h in H.modes():
        if k > spec.K:
            continue
        g = G.coefficient(k)
        E = expm(t * spec.coupling * spec.psi[k - 1])
        out += 2 * (h * np.conj(g) * (E @ spec.stationary[k - 1].conj())).real
    return out


# ---------------------------------------------------------------------------
# Burgers


@dataclass
class BurgersSpec:
    ou: OUSpec
    quad: np.ndarray  # (n, n, n): (m/2) d2 g~_i / d rho_j d rho_k
    grid: int

    def __post_init__(self):
        if self.grid < 3 * self.ou.K + 1:
            raise ValueError("physical grid too small for alias-free products")


def burgers_spec(point: DensityPoint, kernel: JumpKernel, K: int = 32, dt: float = 1e-4,
                 quadratic: bool = True, lam: float | None = None) -> BurgersSpec:
    """Galerkin spectral model at alpha = 3/2 with the coefficient ``(m/2) d2 g~``."""
    ou = ou_spec(point, kernel, K, dt, discrete=False, lam=lam)
    m = kernel_mean(kernel, untruncated=True) if kernel.alpha > 1 else 0.0
    q = 0.5 * m * point.g_tilde_hessian() if quadratic else np.zeros((point.n,) * 3)
    M = 1
    while M < 3 * K + 1:
        M *= 2
    return BurgersSpec(ou, q, M)


def nonlinearity(state: np.ndarray, spec: BurgersSpec) -> np.ndarray:
    """Fourier modes ``1..K`` of ``sum_jk q_ijk d_u (y^j y^k)``, dealiased by padding."""
    K = spec.ou.K
    M = spec.grid
    full = np.zeros(state.shape[:-2] + (M // 2 + 1, state.shape[-1]), dtype=complex)
    full[..., 1:K + 1, :] = state
    y = np.fft.irfft(full, n=M, axis=-2) * M
    prod = np.einsum("ijk,...xj,...xk->...xi", spec.quad, y, y)
    coef = np.fft.rfft(prod, axis=-2)[..., 1:K + 1, :] / M
    return (2j * math.pi * np.arange(1, K + 1))[:, None] * coef


def burgers_step(state: np.ndarray, spec: BurgersSpec, rng, check: bool = True) -> np.ndarray:
    """Exact OU transition plus a nonlinear kick evaluated between two half steps."""
    ou = spec.ou
    if np.any(spec.quad):
        mid = np.einsum("kij,...kj->...ki", ou.F_half, state)
        kick = np.einsum("kij,...kj->...ki", ou.F_half, ou.dt * nonlinearity(mid, spec))
    else:
        kick = 0.0
    new = ou_exact_step(state, ou, rng) + kick
    if check:
        norm = np.sqrt(np.sum(np.abs(new) ** 2, axis=(-2, -1)))
        if np.any(~np.isfinite(norm)) or np.any(norm > 10 * ou.stationary_scale()):
            raise BlowUpError("norm exceeded ten times the stationary scale")
    return new


def simulate_ou(spec, H_list, T: float, rng, replicas: int = 1, record_every: int = 1, burgers: bool = False):
    """Run ``replicas`` stationary chains; return times and ``Y(H)`` arrays ``(len(H), R, steps, n)``."""
    ou = spec.ou if burgers else spec
    steps = int(round(T / ou.dt))
    state = stationary_draw(ou, rng, (replicas,))
    times = [0.0]
    rec = [[evaluate(state, H)] for H in H_list]
    for s in range(1, steps + 1):
        state = burgers_step(state, spec, rng) if burgers else ou_exact_step(state, ou, rng)
        if s % record_every == 0:
            times.append(s * ou.dt)
            for r, H in zip(rec, H_list):
                r.append(evaluate(state, H))
    return np.array(times), np.array([np.stack(r, axis=1) for r in rec])
