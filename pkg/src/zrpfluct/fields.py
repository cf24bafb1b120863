"""Fluctuation fields, martingale decomposition and the estimators built on them.

Every field-type observable is linear in the per-site occupations, so it is
tracked inside the simulator as a set of components (see :mod:`kmc`).  Time
integrals of such observables are exact along the trajectory.  Observables
that are quadratic in block averages are integrated from snapshots with the
trapezoid rule on the observer grid.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve

from .gibbs import DensityPoint, LocalFunction, _pruned_support, density_derivatives, frame_speed
from .kmc import ComponentSet, Trajectory, enumerate_states, MAX_EXACT_STATES
from .model import Configuration, JumpKernel, RateModel, alpha_regime, frame_constant
from .operators import TestFunction, discrete_symbol


class EstimatorError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Monte Carlo accumulators


@dataclass
class Accumulator:
    """Streaming mean/variance (Welford); merging is associative."""

    count: int = 0
    mean: np.ndarray | float = 0.0
    m2: np.ndarray | float = 0.0

    def add(self, x):
        x = np.asarray(x, dtype=float)
        self.count += 1
        d = x - self.mean
        self.mean = self.mean + d / self.count
        self.m2 = self.m2 + d * (x - self.mean)

    def merge(self, other: "Accumulator") -> "Accumulator":
        if other.count == 0:
            return Accumulator(self.count, self.mean, self.m2)
        if self.count == 0:
            return Accumulator(other.count, other.mean, other.m2)
        n = self.count + other.count
        d = np.asarray(other.mean) - self.mean
        mean = self.mean + d * other.count / n
        m2 = self.m2 + other.m2 + d * d * self.count * other.count / n
        return Accumulator(n, mean, m2)

    @property
    def variance(self):
        return self.m2 / (self.count - 1) if self.count > 1 else np.nan * np.asarray(self.m2)

    @property
    def stderr(self):
        return np.sqrt(self.variance / self.count)

    @classmethod
    def of(cls, samples) -> "Accumulator":
        acc = cls()
        for s in samples:
            acc.add(s)
        return acc


# ---------------------------------------------------------------------------
# Frames and fields


@dataclass(frozen=True)
class FieldFrame:
    """Moving reference frame ``H_{lambda,t}(u) = H(u - lambda t m^alpha_N / N)``."""

    lam: float
    m_alpha_N: float
    N: int

    @classmethod
    def for_point(cls, point: DensityPoint, kernel: JumpKernel, lam: float | None = None) -> "FieldFrame":
        N = kernel.lattice_size
        m = frame_constant(kernel, N)
        if lam is None:
            lam = 0.0 if alpha_regime(kernel.alpha) < 0 else frame_speed(point)
        return cls(float(lam), float(m), N)

    @property
    def velocity(self) -> float:
        return self.lam * self.m_alpha_N / self.N

    def shift(self, t: float) -> float:
        return (self.velocity * t) % 1.0

    def moved(self, H: TestFunction, t: float) -> TestFunction:
        return H.shift(self.velocity * t)

    def omega(self, k: int) -> float:
        """Phase speed of mode ``k`` in the moving frame."""
        return 2 * math.pi * k * self.velocity


def fluctuation_field(config: Configuration, point: DensityPoint, H: TestFunction, frame: FieldFrame,
                      t: float = 0.0, species: int = 0) -> float:
    """``N^{-1/2} sum_x (eta^i(x) - rho^i) H_{lambda,t}(x/N)``."""
    N = config.lattice_size
    h = frame.moved(H, t).lattice(N)
    return float(np.dot(config.counts[:, species] - point.rho[species], h) / math.sqrt(N))


def block_sums(values: np.ndarray, ell: int) -> np.ndarray:
    """Sums over ``x-ell..x+ell`` with torus wrap, along axis 0 (any trailing shape)."""
    N = values.shape[0]
    if 2 * ell + 1 > N:
        raise EstimatorError("block larger than the lattice")
    ext = np.concatenate([values[N - ell:], values, values[:ell]], axis=0) if ell else values
    c = np.cumsum(ext, axis=0, dtype=float)
    c = np.concatenate([np.zeros((1,) + values.shape[1:]), c], axis=0)
    return c[2 * ell + 1:] - c[:N]


def block_average(config: Configuration, x, ell: int, species: int = 0, centered: bool = False,
                  rho: float = 0.0):
    """``eta^{i,(ell)}(x)``; with ``centered`` subtract ``rho``."""
    avg = block_sums(config.counts[:, species].astype(float), ell) / (2 * ell + 1)
    if centered:
        avg = avg - rho
    return avg if x is None else avg[np.asarray(x) % config.lattice_size]


def dirichlet_factor(k, ell: int, N: int):
    """``(2 ell + 1)^{-1} sum_{|d| <= ell} exp(2 pi i k d / N)`` (real)."""
    d = np.arange(-ell, ell + 1)
    return float(np.mean(np.cos(2 * math.pi * k * d / N)))


# ---------------------------------------------------------------------------
# Component construction


def _mode_terms(H: TestFunction, N: int):
    """``H(x/N) = sum_j Re(w_j(x))`` with one complex lattice vector per non-negative mode."""
    x = np.arange(N) / N
    out = []
    if H.coeffs[0] != 0:
        out.append((0, np.full(N, H.coeffs[0].real + 0j)))
    for k, c in H.modes():
        out.append((k, 2 * c * np.exp(2j * math.pi * k * x)))
    return out


def field_components(point: DensityPoint, H: TestFunction, frame: FieldFrame, species: int,
                     coefficient=None, table=None, scale: float | None = None):
    """Components of ``sum_x phi(eta(x)) (T H_{lambda,s})(x/N)`` for a mode multiplier ``T``.

    ``coefficient(k)`` is the multiplier of mode ``k`` (identity by default);
    ``table`` is the site table (default: centered occupation of ``species``).
    """
    N = frame.N
    states = point.model.states(point.cap)
    phi = states[:, species] - point.rho[species] if table is None else table
    scale = 1 / math.sqrt(N) if scale is None else scale
    comps = []
    for k, w in _mode_terms(H, N):
        c = 1.0 if coefficient is None else coefficient(k)
        if c == 0:
            continue
        comps.append((phi, scale * c * w, frame.omega(k)))
    return comps


def v_table(point: DensityPoint, i: int) -> np.ndarray:
    """``V^i = g_i - g~_i - sum_j d_j g~_i (eta^j - rho^j)`` on the single-site states."""
    states = point.model.states(point.cap)
    g = point.model.rate_table(point.cap)[i]
    return g - point.g_tilde[i] - (states - point.rho) @ point.lambda_matrix[i]


def build_components(point: DensityPoint, kernel: JumpKernel, H: TestFunction, frame: FieldFrame,
                     species=None, decomposition: bool = False, generator_check: bool = False,
                     extra=()) -> ComponentSet:
    """Field groups ``Y{i}`` (plus ``A{i}``, ``B{i}``, ``G{i}`` on request).

    Cross-variation is accumulated for every pair of field groups.
    ``extra`` is an iterable of ``(name, comps)`` appended as further groups.
    """
    N = kernel.lattice_size
    model = point.model
    n = model.species_count
    species = range(n) if species is None else species
    states = model.states(point.cap)
    cs = ComponentSet(len(states), N)
    psiU = {k: complex(discrete_symbol(k, kernel, include_frame=False)[0]) for k in range(H.K + 1)}
    vel_term = {k: frame.lam * frame.m_alpha_N / N * 2j * math.pi * k for k in range(H.K + 1)}
    ys = []
    for i in species:
        ys.append(cs.add_group(f"Y{i}", field_components(point, H, frame, i)))
    for a, b in itertools.combinations(ys, 2):
        cs.add_pair(a, b)
    for i in species:
        if decomposition:
            cs.add_group(f"A{i}", field_components(point, H, frame, i, lambda k: psiU[k], v_table(point, i)))
            comps = []
            for j in range(n):
                q = point.lambda_matrix[i, j]
                coef = (lambda k, q=q, j=j: q * psiU[k] - (vel_term[k] if j == i else 0.0))
                comps += field_components(point, H, frame, j, coef)
            cs.add_group(f"B{i}", comps)
        if generator_check:
            g = model.rate_table(point.cap)[i]
            comps = field_components(point, H, frame, i, lambda k: psiU[k], g)
            comps += field_components(point, H, frame, i, lambda k: -vel_term[k])
            cs.add_group(f"G{i}", comps)
    for name, comps in extra:
        cs.add_group(name, comps)
    return cs


# ---------------------------------------------------------------------------
# Field samples and the martingale decomposition


@dataclass
class FieldSample:
    times: np.ndarray
    values: dict
    A: dict = field(default_factory=dict)
    B: dict = field(default_factory=dict)
    M: dict = field(default_factory=dict)
    generator: dict = field(default_factory=dict)
    qv: dict = field(default_factory=dict)
    cross: np.ndarray | None = None
    replica: int = 0
    seed: int = 0

    def closure_residual(self, i: int) -> float:
        """Largest ``|Y_t - Y_0 - A - B - M|`` along the grid."""
        y = self.values[i]
        return float(np.abs(y - y[0] - self.A[i] - self.B[i] - self.M[i]).max())

    def rows(self):
        """Long-format rows ``(replica, time, species, quantity, value)``."""
        for name, d in (("Y", self.values), ("A", self.A), ("B", self.B), ("M", self.M), ("QV", self.qv)):
            for i, arr in d.items():
                for t, v in zip(self.times, arr):
                    yield self.replica, float(t), i, name, float(v)


def field_sample(traj: Trajectory, decomposition: bool = True) -> FieldSample:
    """Collect field values (and the decomposition if tracked) from a trajectory."""
    cs = traj.components
    names = cs.group_names
    ys = sorted(int(nm[1:]) for nm in names if nm.startswith("Y"))
    s = FieldSample(traj.grid, {i: traj.group_values(f"Y{i}") for i in ys}, replica=traj.replica, seed=traj.seed)
    s.qv = {i: traj.group_qv(f"Y{i}") for i in ys}
    s.cross = traj.cross
    for i in ys:
        if decomposition:
            if f"A{i}" not in names:
                raise EstimatorError("trajectory lacks decomposition observers")
            s.A[i] = traj.group_integrals(f"A{i}")
            s.B[i] = traj.group_integrals(f"B{i}")
            y = s.values[i]
            s.M[i] = y - y[0] - s.A[i] - s.B[i]
        if f"G{i}" in names:
            s.generator[i] = traj.group_integrals(f"G{i}")
    return s


def decompose_trajectory(traj: Trajectory) -> FieldSample:
    return field_sample(traj, decomposition=True)


def quadratic_variation(jumps: np.ndarray, H: TestFunction, frame: FieldFrame, species: int,
                        times) -> np.ndarray:
    """Pathwise ``sum (H_{lambda,s}((x+z)/N) - H_{lambda,s}(x/N))^2 / N`` up to each time."""
    if jumps is None:
        raise EstimatorError("jump records were not retained")
    N = frame.N
    sel = jumps[jumps["species"] == species]
    s = sel["t"]
    x = sel["site"].astype(np.int64)
    y = (x + sel["z"].astype(np.int64)) % N
    shift = frame.velocity * s
    d = H(y / N - shift) - H(x / N - shift)
    c = np.concatenate([[0.0], np.cumsum(d * d / N)])
    return c[np.searchsorted(s, np.asarray(times), side="right")]


def cross_variation(jumps: np.ndarray, H: TestFunction, G: TestFunction, frame: FieldFrame,
                    i: int, j: int, times) -> np.ndarray:
    """Sum over jumps of ``dY^i(H) dY^j(G)``; each jump moves one species only."""
    N = frame.N
    s = jumps["t"]
    x = jumps["site"].astype(np.int64)
    y = (x + jumps["z"].astype(np.int64)) % N
    shift = frame.velocity * s
    sp = jumps["species"]
    di = np.where(sp == i, H(y / N - shift) - H(x / N - shift), 0.0)
    dj = np.where(sp == j, G(y / N - shift) - G(x / N - shift), 0.0)
    c = np.concatenate([[0.0], np.cumsum(di * dj / N)])
    return c[np.searchsorted(s, np.asarray(times), side="right")]


# ---------------------------------------------------------------------------
# Boltzmann-Gibbs residuals


def bg_first_components(point: DensityPoint, H: TestFunction, frame: FieldFrame, f: LocalFunction,
                        ell: int, f0: float, grad: np.ndarray):
    """Components of ``sum_x [tau_x f - f~ - sum_j grad_j eta-bar^{j,(ell)}(x)] H_{lambda,s}(x/N)``.

    Block averages are moved onto the test function: mode ``k`` picks up the
    real Dirichlet factor of the window.
    """
    if f.radius != 0:
        raise EstimatorError("event-exact residuals need a single-site function")
    N = frame.N
    states = point.model.states(point.cap)
    ftab = f.site_table(states) - f0
    lin = (states - point.rho) @ grad
    comps = []
    for k, w in _mode_terms(H, N):
        phi = ftab - dirichlet_factor(k, ell, N) * lin
        comps.append((phi, w, frame.omega(k)))
    return comps


def sup_square(path) -> float:
    return float(np.max(np.asarray(path) ** 2))


def _windows(counts: np.ndarray, radius: int) -> np.ndarray:
    """``(N, 2r+1, n)`` occupation windows centred at each site."""
    return np.stack([np.roll(counts, -d, axis=0) for d in range(-radius, radius + 1)], axis=1)


def _trapezoid_path(vals: np.ndarray, grid: np.ndarray) -> np.ndarray:
    inc = 0.5 * (vals[1:] + vals[:-1]) * np.diff(grid)
    return np.concatenate([[0.0], np.cumsum(inc)])


def bg_second_integrand(counts: np.ndarray, point: DensityPoint, f: LocalFunction, f0: float,
                        hess: np.ndarray, ell: int, h: np.ndarray) -> float:
    """``sum_x [tau_x f - f~ - 1/2 sum_jk d2 f~ {eta-bar^j eta-bar^k - Gamma_jk/(2l+1)}] h(x)``."""
    fx = f(_windows(counts, f.radius)) - f0
    eb = block_sums(counts.astype(float), ell) / (2 * ell + 1) - point.rho
    quad = np.einsum("xj,jk,xk->x", eb, hess, eb) - np.sum(hess * point.gamma) / (2 * ell + 1)
    return float(np.dot(fx - 0.5 * quad, h))


def bg_first_integrand(counts: np.ndarray, point: DensityPoint, f: LocalFunction, f0: float,
                       grad: np.ndarray, ell: int, h: np.ndarray) -> float:
    fx = f(_windows(counts, f.radius)) - f0
    eb = block_sums(counts.astype(float), ell) / (2 * ell + 1) - point.rho
    return float(np.dot(fx - eb @ grad, h))


def snapshot_path(traj: Trajectory, integrand, H: TestFunction, frame: FieldFrame) -> np.ndarray:
    """Trapezoid time integral of ``integrand(counts, h)`` over the snapshot grid."""
    if traj.snapshots is None:
        raise EstimatorError("trajectory has no snapshots")
    N = frame.N
    vals = np.array([integrand(traj.snapshots[g].astype(np.int64), frame.moved(H, t).lattice(N))
                     for g, t in enumerate(traj.grid)])
    return _trapezoid_path(vals, traj.grid)


def bg_bound_shape(N: int, ell: int, alpha: float, T: float, H: TestFunction) -> tuple[float, float]:
    """The two terms ``T ell^alpha / N^{alpha-1} |H|_{2,N}^2`` and ``T^2 N^2 / ell^2 |H|_{1,N}^2``."""
    h = H.lattice(N)
    return (T * ell**alpha / N ** (alpha - 1) * float(np.mean(h * h)),
            T * T * N * N / ell**2 * float(np.mean(np.abs(h))) ** 2)


def optimal_block(N: int, alpha: float) -> int:
    """``ell = N^{(1+alpha)/(2+alpha)}`` rounded to an integer."""
    return max(1, int(round(N ** ((1 + alpha) / (2 + alpha)))))


# ---------------------------------------------------------------------------
# Energy estimator


def energy_integrand(counts: np.ndarray, point: DensityPoint, hess_i: np.ndarray, ell: int,
                     dh: np.ndarray) -> float:
    """``sum_jk d2 g~_i sum_x eta-bar^{j,(l)}(x) eta-bar^{k,(l)}(x) H'(x/N)``."""
    eb = block_sums(counts.astype(float), ell) / (2 * ell + 1) - point.rho
    return float(np.einsum("xj,jk,xk,x->", eb, hess_i, eb, dh))


def energy_estimator(traj: Trajectory, point: DensityPoint, H: TestFunction, frame: FieldFrame,
                     epsilon: float, species: int = 0) -> np.ndarray:
    """Time series of the regularised quadratic functional on the snapshot grid."""
    N = frame.N
    ell = int(round(epsilon * N))
    if ell < 1:
        raise EstimatorError("epsilon N must be at least 1")
    hess_i = point.g_tilde_hessian()[species]
    if traj.snapshots is None:
        raise EstimatorError("trajectory has no snapshots")
    vals = np.empty(len(traj.grid))
    for g, t in enumerate(traj.grid):
        dh = frame.moved(H, t).lattice(N, 1)
        vals[g] = energy_integrand(traj.snapshots[g], point, hess_i, ell, dh)
    return _trapezoid_path(vals, traj.grid)


def energy_estimators(traj: Trajectory, point: DensityPoint, H: TestFunction, frame: FieldFrame,
                      epsilons, species: int = 0) -> dict:
    """Several window sizes at once, sharing the snapshot pass."""
    N = frame.N
    ells = {e: int(round(e * N)) for e in epsilons}
    if min(ells.values()) < 1:
        raise EstimatorError("epsilon N must be at least 1")
    hess_i = point.g_tilde_hessian()[species]
    vals = {e: np.empty(len(traj.grid)) for e in epsilons}
    for g, t in enumerate(traj.grid):
        dh = frame.moved(H, t).lattice(N, 1)
        c = traj.snapshots[g]
        for e, ell in ells.items():
            vals[e][g] = energy_integrand(c, point, hess_i, ell, dh)
    return {e: _trapezoid_path(v, traj.grid) for e, v in vals.items()}


# ---------------------------------------------------------------------------
# Equivalence of ensembles


def _site_array(point: DensityPoint, prune: float = 1e-16):
    """Single-site law as an ``n``-dimensional array over a pruned box."""
    states = point.model.states(point.cap)
    keep = _pruned_support(point.probs, prune)
    top = states[keep].max(axis=0)
    arr = np.zeros(tuple(top + 1))
    for k in keep:
        arr[tuple(states[k])] += point.probs[k]
    return arr


def _power(arr: np.ndarray, m: int) -> np.ndarray:
    out = np.ones((1,) * arr.ndim)
    for _ in range(m):
        out = convolve(out, arr, method="direct")
    return out


def conditional_expectation(f: LocalFunction, point: DensityPoint, ell: int,
                            max_states: int = 10**7) -> tuple[np.ndarray, np.ndarray]:
    """``E[f | block sum over -ell..ell]`` on every block sum, with the block-sum law."""
    r = f.radius
    if r > ell:
        raise EstimatorError("support wider than the block")
    p = _site_array(point)
    box = np.array(p.shape) - 1
    grid_states = np.array(list(itertools.product(*[range(b + 1) for b in box])), dtype=np.int64)
    w = p[tuple(grid_states.T)]
    keep = w > 0
    grid_states, w = grid_states[keep], w[keep]
    width = 2 * r + 1
    if len(w) ** width > max_states:
        raise EstimatorError("local enumeration too large")
    F = np.zeros(tuple(width * box + 1))
    for combo in itertools.product(range(len(w)), repeat=width):
        combo = list(combo)
        win = grid_states[combo]
        val = float(f(win[None, :, :])[0])
        F[tuple(win.sum(axis=0))] += val * np.prod(w[combo])
    rest = _power(p, 2 * ell + 1 - width)
    num = convolve(F, rest, method="direct")
    law = _power(p, 2 * ell + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.where(law > 1e-300, num / np.where(law > 0, law, 1.0), 0.0)
    return cond, law


@dataclass
class EquivalenceReport:
    ell: int
    first: float
    second: float
    first_reference: float
    second_reference: float
    centered: bool


def _l4_sq(vals: np.ndarray, law: np.ndarray) -> float:
    return float(np.sqrt(np.sum(law * vals**4)))


def equivalence_of_ensembles_check(f: LocalFunction, point: DensityPoint, ell: int, h: float = 1e-4,
                                   derivatives=None) -> EquivalenceReport:
    """``||E[f|block] - first/second-order projection||_{L^4}^2`` by exact enumeration.

    The second-order projection carries the factor 1/2 of the Taylor expansion.
    """
    if derivatives is None:
        f0, grad, hess = density_derivatives(point.model, point.rho, f, point.cap, h, second=True)
    else:
        f0, grad, hess = derivatives
    cond, law = conditional_expectation(f, point, ell)
    m = 2 * ell + 1
    idx = np.indices(law.shape).reshape(law.ndim, -1).T
    eb = idx / m - point.rho
    c = cond.reshape(-1) - f0
    lw = law.reshape(-1)
    first = c - eb @ grad
    quad = np.einsum("sj,jk,sk->s", eb, hess, eb) - np.sum(hess * point.gamma) / m
    second = c - 0.5 * quad
    centered = abs(f0) < 1e-8 and np.abs(grad).max() < 1e-6
    return EquivalenceReport(ell, _l4_sq(first, lw), _l4_sq(second, lw), ell**-2.0, ell**-3.0, centered)


# ---------------------------------------------------------------------------
# Spectral gap


def canonical_generator(model: RateModel, alpha: float, c_plus: float, c_minus: float, ell: int, totals,
                        cap: int | None = None):
    """Symmetrised generator on ``-ell..ell`` (no wrap) with fixed totals, and ``nu_{k,ell}``."""
    width = 2 * ell + 1
    totals = np.atleast_1d(np.asarray(totals, dtype=np.int64))
    cap = int(totals.max()) if cap is None else cap
    states = enumerate_states(width, totals, cap)
    M = len(states)
    if M > MAX_EXACT_STATES:
        raise EstimatorError("canonical state space too large")
    lookup = {s.tobytes(): a for a, s in enumerate(states)}
    kern = JumpKernel(alpha, c_plus, c_minus, max(2, 2 * width))
    n = model.species_count
    Q = np.zeros((M, M))
    logw = np.zeros(M)
    for a, s in enumerate(states):
        logw[a] = -sum(model.G(s[x]) for x in range(width))
        for x in range(width):
            for i in range(n):
                if s[x, i] == 0:
                    continue
                g = model.rate(s[x], i)
                for y in range(width):
                    if y == x:
                        continue
                    t = s.copy()
                    t[x, i] -= 1
                    t[y, i] += 1
                    key = t.tobytes()
                    if key in lookup:
                        Q[a, lookup[key]] += g * float(kern.s(y - x))
    Q[np.diag_indices(M)] = -Q.sum(axis=1)
    nu = np.exp(logw - logw.max())
    return Q, nu / nu.sum(), states


def spectral_gap(model: RateModel, alpha: float, c_plus: float, c_minus: float, ell: int, totals) -> float:
    """``W(k, ell)``: inverse of the spectral gap of the symmetrised canonical dynamics."""
    Q, nu, _ = canonical_generator(model, alpha, c_plus, c_minus, ell, totals)
    if len(nu) < 2:
        raise EstimatorError("a single state has no gap")
    r = np.sqrt(nu)
    A = Q * r[:, None] / r[None, :]
    A = 0.5 * (A + A.T)
    ev = np.sort(np.linalg.eigvalsh(-A))
    gap = ev[1]
    if gap <= 1e-12:
        raise EstimatorError("chain is disconnected")
    return float(1.0 / gap)


def reversibility_defect(Q: np.ndarray, nu: np.ndarray) -> float:
    F = nu[:, None] * Q
    return float(np.abs(F - F.T).max())


def fit_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])
