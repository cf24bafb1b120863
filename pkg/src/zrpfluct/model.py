"""Static data of the multi-species zero range process with long jumps.

Rate models are built from a potential ``G`` on occupation vectors, so that
``g_i(k) = exp(G(k) - G(k^{i,-}))``.  The long-jump kernel lives on a
periodic lattice of ``N`` sites and is truncated at ``|z| <= N // 2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

DEFAULT_CAP = 64

Potential = Callable[[np.ndarray], np.ndarray]
RateFunction = Callable[[np.ndarray, int], float]


class ModelError(ValueError):
    pass


def alpha_regime(alpha: float) -> int:
    """-1 for alpha < 1, 0 for alpha == 1, +1 for alpha > 1."""
    if math.isclose(alpha, 1.0, rel_tol=0.0, abs_tol=1e-12):
        return 0
    return -1 if alpha < 1.0 else 1


def theta_alpha(v, alpha: float):
    """Compensator appearing in the continuum operator."""
    v = np.asarray(v, dtype=float)
    regime = alpha_regime(alpha)
    if regime < 0:
        out = np.zeros_like(v)
    elif regime == 0:
        out = np.where(np.abs(v) <= 1.0, v, 0.0)
    else:
        out = v.copy()
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Rate models


@dataclass(frozen=True, eq=False)
class RateModel:
    """Jump rates ``g_i`` of an ``n``-species zero range process.

    ``potential`` maps an integer array of shape ``(..., n)`` to the array of
    ``G`` values of shape ``(...)``.  For the ``custom`` family the rates are
    given directly by ``rate_fn`` and the potential is reconstructed by
    summing log-rates along a coordinate path.
    """

    species_count: int
    potential: Potential
    family: str = "custom"
    params: dict = field(default_factory=dict)
    rate_fn: RateFunction | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.species_count < 1:
            raise ModelError("species_count must be positive")

    # -- pointwise -------------------------------------------------------
    def G(self, k) -> float:
        k = np.asarray(k, dtype=np.int64)
        return float(self.potential(k[None, :])[0])

    def rate(self, k, i: int) -> float:
        return rate_from_potential(self, k, i)

    # -- tables over the capped state space ------------------------------
    def states(self, cap: int = DEFAULT_CAP) -> np.ndarray:
        """All occupation vectors in ``[0, cap]^n`` in C order, shape ``(S, n)``."""
        key = ("states", cap)
        if key not in self._cache:
            grids = np.indices((cap + 1,) * self.species_count).reshape(self.species_count, -1)
            self._cache[key] = np.ascontiguousarray(grids.T, dtype=np.int64)
        return self._cache[key]

    def strides(self, cap: int = DEFAULT_CAP) -> np.ndarray:
        n = self.species_count
        return np.array([(cap + 1) ** (n - 1 - i) for i in range(n)], dtype=np.int64)

    def potential_table(self, cap: int = DEFAULT_CAP) -> np.ndarray:
        key = ("G", cap)
        if key not in self._cache:
            self._cache[key] = np.asarray(self.potential(self.states(cap)), dtype=float)
        return self._cache[key]

    def rate_table(self, cap: int = DEFAULT_CAP) -> np.ndarray:
        """``g_i(k)`` for every state, shape ``(n, S)``."""
        key = ("rates", cap)
        if key in self._cache:
            return self._cache[key]
        states = self.states(cap)
        n = self.species_count
        out = np.zeros((n, len(states)))
        if self.rate_fn is not None:
            for s, k in enumerate(states):
                for i in range(n):
                    out[i, s] = self.rate_fn(k, i) if k[i] > 0 else 0.0
        else:
            G = self.potential_table(cap)
            strides = self.strides(cap)
            for i in range(n):
                occupied = states[:, i] > 0
                idx = np.nonzero(occupied)[0]
                out[i, idx] = np.exp(G[idx] - G[idx - strides[i]])
        self._cache[key] = out
        return out

    def g_star(self, cap: int = DEFAULT_CAP) -> np.ndarray:
        """Infimum of ``g_i`` over occupied states of the capped range."""
        table = self.rate_table(cap)
        states = self.states(cap)
        return np.array([table[i, states[:, i] > 0].min() for i in range(self.species_count)])


def rate_from_potential(model: RateModel, k, i: int) -> float:
    k = np.asarray(k, dtype=np.int64)
    if not 0 <= i < model.species_count:
        raise IndexError(f"species index {i} out of range for n={model.species_count}")
    if len(k) != model.species_count:
        raise ModelError("occupation vector has wrong length")
    if k[i] == 0:
        return 0.0
    if model.rate_fn is not None:
        return float(model.rate_fn(k, i))
    km = k.copy()
    km[i] -= 1
    return math.exp(model.G(k) - model.G(km))


def _log_factorial_sum(k: np.ndarray) -> np.ndarray:
    return gammaln(np.asarray(k, dtype=float) + 1.0).sum(axis=-1)


def constant_rate(n: int = 1) -> RateModel:
    """``g_i(k) = 1{k^i >= 1}``."""
    return RateModel(n, lambda k: np.zeros(np.shape(k)[:-1]), "constant", {})


def linear_rates(n: int = 1) -> RateModel:
    """Independent walkers, ``g_i(k) = k^i``."""
    return RateModel(n, _log_factorial_sum, "linear", {})


def potential_coupled(n: int = 2, gamma: float = 0.1) -> RateModel:
    """``G(k) = sum_i log k^i! + gamma * sum_{i<j} k^i k^j``.

    Gives ``g_i(k) = k^i exp(gamma * sum_{j != i} k^j)``.
    """
    if gamma < 0:
        raise ModelError("gamma must be non-negative")

    def G(k):
        k = np.asarray(k, dtype=float)
        tot = k.sum(axis=-1)
        cross = 0.5 * (tot**2 - (k**2).sum(axis=-1))
        return _log_factorial_sum(k) + gamma * cross

    return RateModel(n, G, "coupled", {"gamma": gamma})


def independent(hs: Sequence[Callable[[int], float]]) -> RateModel:
    """Species-wise rates ``g_i(k) = h_i(k^i)`` with ``h_i(m) > 0`` for ``m >= 1``."""
    hs = list(hs)
    cache: dict[int, np.ndarray] = {}

    def cumlog(i, upto):
        tab = cache.get(i)
        if tab is None or len(tab) <= upto:
            m = np.arange(1, max(upto, 8) * 2 + 1)
            vals = np.array([math.log(hs[i](int(j))) for j in m])
            tab = np.concatenate([[0.0], np.cumsum(vals)])
            cache[i] = tab
        return tab

    def G(k):
        k = np.asarray(k, dtype=np.int64)
        out = np.zeros(k.shape[:-1])
        for i in range(len(hs)):
            tab = cumlog(i, int(k[..., i].max(initial=0)))
            out = out + tab[k[..., i]]
        return out

    return RateModel(len(hs), G, "independent", {"h": [getattr(h, "__name__", "h") for h in hs]})


def custom_rates(n: int, rate_fn: RateFunction) -> RateModel:
    """Rates given directly; the potential follows the coordinate-path construction.

    Only meaningful as a potential when the compatibility condition holds;
    use :func:`check_compatibility` first.
    """

    def G(k):
        k = np.atleast_2d(np.asarray(k, dtype=np.int64))
        out = np.zeros(len(k))
        for r, kk in enumerate(k):
            acc = 0.0
            cur = np.zeros(n, dtype=np.int64)
            for i in range(n):
                for m in range(1, kk[i] + 1):
                    cur[i] = m
                    acc += math.log(rate_fn(cur.copy(), i))
            out[r] = acc
        return out.reshape(np.shape(k)[:-1])

    return RateModel(n, G, "custom", {}, rate_fn=rate_fn)


def build_rate_model(family: str, n: int, **params) -> RateModel:
    if family == "constant":
        return constant_rate(n)
    if family == "linear":
        return linear_rates(n)
    if family in ("coupled", "potential-coupled"):
        return potential_coupled(n, params.get("gamma", 0.1))
    raise ModelError(f"unknown rate family {family!r}")


@dataclass
class CompatibilityReport:
    passed: bool
    counterexample: tuple | None = None  # (i, j, k, lhs, rhs)


def check_compatibility(g, sample_set, n: int | None = None, rtol: float = 1e-12) -> CompatibilityReport:
    """Check ``g_i(k) g_j(k^{i,-}) = g_j(k) g_i(k^{j,-})`` on ``sample_set``.

    ``g`` is either a :class:`RateModel` or a callable ``g(k, i)``.
    """
    rate = g.rate if isinstance(g, RateModel) else g
    for k in sample_set:
        k = np.asarray(k, dtype=np.int64)
        nn = len(k) if n is None else n
        for i in range(nn):
            for j in range(nn):
                if i == j or k[i] < 1 or k[j] < 1:
                    continue
                ki = k.copy()
                ki[i] -= 1
                kj = k.copy()
                kj[j] -= 1
                lhs = rate(k, i) * rate(ki, j)
                rhs = rate(k, j) * rate(kj, i)
                if not math.isclose(lhs, rhs, rel_tol=rtol, abs_tol=0.0):
                    return CompatibilityReport(False, (i, j, tuple(int(v) for v in k), lhs, rhs))
    return CompatibilityReport(True)


def check_potential_growth(model: RateModel, cap: int = DEFAULT_CAP) -> float:
    """Minimum of ``G(k)/|k|`` over the capped range (a proxy for the liminf condition)."""
    states = model.states(cap)
    size = states.sum(axis=1)
    mask = size > 0
    return float((model.potential_table(cap)[mask] / size[mask]).min())


def min_rate_increment(model: RateModel, cap: int = DEFAULT_CAP) -> np.ndarray:
    """``inf_k g_i(k^{i,+}) - g_i(k)`` per species over the capped range."""
    table = model.rate_table(cap)
    states = model.states(cap)
    strides = model.strides(cap)
    out = np.empty(model.species_count)
    for i in range(model.species_count):
        idx = np.nonzero(states[:, i] < cap)[0]
        out[i] = (table[i, idx + strides[i]] - table[i, idx]).min()
    return out


# ---------------------------------------------------------------------------
# Jump kernel


def _zeta_partial(s: float, terms: int = 2000) -> float:
    """``sum_{z>=1} z^{-s}`` by partial sums plus an Euler-Maclaurin tail."""
    if s <= 1.0:
        raise ModelError("series diverges for s <= 1")
    z = np.arange(1, terms, dtype=float)
    head = np.sum(z[::-1] ** -s)
    M = float(terms)
    tail = M ** (1.0 - s) / (s - 1.0) + 0.5 * M**-s + s * M ** (-s - 1.0) / 12.0
    tail -= s * (s + 1.0) * (s + 2.0) * M ** (-s - 3.0) / 720.0
    return float(head + tail)


@dataclass(frozen=True)
class JumpKernel:
    """``p(z) = c_+ |z|^{-1-alpha}`` for ``z > 0`` and ``c_- |z|^{-1-alpha}`` for ``z < 0``."""

    alpha: float
    c_plus: float
    c_minus: float
    lattice_size: int

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ModelError("alpha must lie in (0, 2)")
        if self.c_plus < 0 or self.c_minus < 0 or self.c_plus + self.c_minus <= 0:
            raise ModelError("need c_+, c_- >= 0 with c_+ + c_- > 0")
        if self.lattice_size < 2:
            raise ModelError("lattice_size must be at least 2")

    @property
    def radius(self) -> int:
        return self.lattice_size // 2

    def p(self, z):
        z = np.asarray(z, dtype=float)
        az = np.abs(z)
        with np.errstate(divide="ignore"):
            mag = np.where(az > 0, az ** (-1.0 - self.alpha), 0.0)
        out = np.where(z > 0, self.c_plus * mag, self.c_minus * mag)
        return out if out.ndim else float(out)

    def s(self, z):
        """Symmetrized kernel ``(p(z) + p(-z)) / 2``."""
        z = np.asarray(z, dtype=float)
        return 0.5 * (self.p(z) + self.p(-z))

    def displacements(self) -> np.ndarray:
        L = self.radius
        return np.concatenate([np.arange(-L, 0), np.arange(1, L + 1)]).astype(np.int64)

    def weights(self) -> np.ndarray:
        return self.p(self.displacements())

    def with_size(self, N: int) -> "JumpKernel":
        return JumpKernel(self.alpha, self.c_plus, self.c_minus, N)


def kernel_mass(kernel: JumpKernel, untruncated: bool = False) -> float:
    if untruncated:
        return (kernel.c_plus + kernel.c_minus) * _zeta_partial(1.0 + kernel.alpha)
    w = kernel.weights()
    if w.size == 0:
        raise ModelError("empty truncation set")
    return float(np.sort(w).sum())


def kernel_mean(kernel: JumpKernel, untruncated: bool = False) -> float:
    """Mean displacement ``m = sum_z z p(z)``."""
    if untruncated:
        if kernel.alpha <= 1.0:
            raise ModelError("the untruncated mean is infinite for alpha <= 1")
        return (kernel.c_plus - kernel.c_minus) * _zeta_partial(kernel.alpha)
    z = np.arange(1, kernel.radius + 1, dtype=float)[::-1]
    return float((kernel.c_plus - kernel.c_minus) * np.sum(z**-kernel.alpha))


def frame_constant(kernel: JumpKernel, N: int) -> float:
    """Frame drift constant ``m^alpha_N``."""
    regime = alpha_regime(kernel.alpha)
    if regime < 0:
        return 0.0
    if regime == 0:
        x = np.arange(1, N + 1, dtype=float)[::-1]
        return float(N * (kernel.c_plus - kernel.c_minus) * np.sum(1.0 / x))
    return float(N**kernel.alpha * kernel_mean(kernel, untruncated=True))


# ---------------------------------------------------------------------------
# Configurations


class Configuration:
    """Per-site, per-species occupation counts on a periodic lattice."""

    def __init__(self, counts, cap: int = DEFAULT_CAP):
        counts = np.array(counts, dtype=np.int64)
        if counts.ndim == 1:
            counts = counts[:, None]
        if counts.ndim != 2:
            raise ModelError("counts must have shape (N, n)")
        if (counts < 0).any():
            raise ModelError("negative occupation")
        if (counts > cap).any():
            raise ModelError("occupation above the per-site cap")
        self.counts = counts
        self.cap = cap
        self._totals = counts.sum(axis=0)

    @property
    def lattice_size(self) -> int:
        return self.counts.shape[0]

    @property
    def species_count(self) -> int:
        return self.counts.shape[1]

    @property
    def totals(self) -> np.ndarray:
        return self._totals.copy()

    def move(self, i: int, x: int, y: int) -> bool:
        """Move one ``i``-particle from ``x`` to ``y``; False if blocked or empty."""
        N = self.lattice_size
        x %= N
        y %= N
        if self.counts[x, i] == 0 or self.counts[y, i] >= self.cap:
            return False
        self.counts[x, i] -= 1
        self.counts[y, i] += 1
        return True

    def state_index(self, strides: np.ndarray) -> np.ndarray:
        return self.counts @ strides

    def copy(self) -> "Configuration":
        return Configuration(self.counts.copy(), self.cap)

    def __repr__(self):
        return f"Configuration(N={self.lattice_size}, n={self.species_count}, totals={self._totals.tolist()})"
