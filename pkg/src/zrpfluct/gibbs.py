"""Grand-canonical product measures of the zero range process.

The single-site law is ``P(k) ∝ exp(-G(k) + mu . k)`` on the capped box
``[0, cap]^n``.  Everything here is exact enumeration over that box.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.special import logsumexp

from .model import DEFAULT_CAP, Configuration, RateModel

TAIL_THRESHOLD = 1e-10
MAX_LOCAL_STATES = 10**7


class EnsembleError(ValueError):
    pass


class FrameConditionError(RuntimeError):
    pass


def _extended_cap(model: RateModel, cap: int) -> int:
    ext = 2 * cap + 1
    while ext > cap + 1 and (ext + 1) ** model.species_count > 4 * 10**6:
        ext = (ext + cap) // 2
    return ext


def tail_mass(model: RateModel, mu, cap: int = DEFAULT_CAP) -> float:
    """Mass of the untruncated law lying outside ``[0, cap]^n``.

    Estimated on an enlarged box; a heavier tail beyond the enlarged box only
    makes the returned value an underestimate when it is already large.
    """
    mu = np.asarray(mu, dtype=float)
    ext = _extended_cap(model, cap)
    states = model.states(ext)
    logw = -model.potential_table(ext) + states @ mu
    if not np.all(np.isfinite(logw)):
        return 1.0
    outside = (states > cap).any(axis=1)
    lz = logsumexp(logw)
    return float(np.exp(logsumexp(logw[outside]) - lz)) if outside.any() else 0.0


class GrandCanonicalEnsemble:
    """Single-site grand-canonical law at chemical potential ``mu``."""

    def __init__(self, model: RateModel, mu, cap: int = DEFAULT_CAP,
                 tail_threshold: float = TAIL_THRESHOLD, check_tail: bool = True):
        self.model = model
        self.mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if self.mu.shape != (model.species_count,):
            raise EnsembleError("mu has the wrong length")
        self.cap = cap
        self.tail = tail_mass(model, self.mu, cap) if check_tail else float("nan")
        if check_tail and not self.tail < tail_threshold:
            raise EnsembleError(f"tail mass {self.tail:.3e} beyond cap exceeds {tail_threshold:.1e}")
        self.states = model.states(cap)
        logw = -model.potential_table(cap) + self.states @ self.mu
        self.log_z = float(logsumexp(logw))
        self.probs = np.exp(logw - self.log_z)

    @property
    def partition_function(self) -> float:
        return float(np.exp(self.log_z))

    def mean(self, table) -> float:
        return float(np.dot(self.probs, table))

    @property
    def density(self) -> np.ndarray:
        return self.probs @ self.states

    @property
    def covariance(self) -> np.ndarray:
        c = self.states - self.density
        return (c * self.probs[:, None]).T @ c

    def third_cumulant(self) -> np.ndarray:
        c = self.states - self.density
        return np.einsum("s,si,sj,sk->ijk", self.probs, c, c, c)

    def mean_rates(self) -> np.ndarray:
        return self.model.rate_table(self.cap) @ self.probs


def partition_function(model: RateModel, mu, cap: int = DEFAULT_CAP) -> float:
    return GrandCanonicalEnsemble(model, mu, cap).partition_function


def density_map(model: RateModel, mu, cap: int = DEFAULT_CAP) -> np.ndarray:
    return GrandCanonicalEnsemble(model, mu, cap).density


@dataclass
class DensityPoint:
    """A grand-canonical measure indexed by its particle densities."""

    model: RateModel
    rho: np.ndarray
    mu: np.ndarray
    gamma: np.ndarray
    g_tilde: np.ndarray
    lambda_matrix: np.ndarray
    cap: int = DEFAULT_CAP
    tail_mass: float = 0.0
    lambda_fd: np.ndarray | None = None
    _hessian: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.model.species_count

    @property
    def ensemble(self) -> GrandCanonicalEnsemble:
        return GrandCanonicalEnsemble(self.model, self.mu, self.cap, check_tail=False)

    @property
    def probs(self) -> np.ndarray:
        return self.ensemble.probs

    def g_tilde_hessian(self) -> np.ndarray:
        """``d^2 g~_i / d rho_j d rho_k`` as an array ``[i, j, k]``.

        Exact via the third cumulant: with ``M = Gamma^{-1} = d mu / d rho``
        and ``g~_i = exp(mu_i)``.
        """
        if self._hessian is None:
            M = np.linalg.inv(self.gamma)
            kappa = self.ensemble.third_cumulant()
            dGamma = np.einsum("abl,lk->abk", kappa, M)  # d Gamma_ab / d rho_k
            dM = -np.einsum("ia,abk,bj->ijk", M, dGamma, M)  # d M_ij / d rho_k
            g = self.g_tilde
            self._hessian = g[:, None, None] * (M[:, :, None] * M[:, None, :] + dM)
        return self._hessian

    def to_json(self) -> str:
        return json.dumps({
            "family": self.model.family,
            "params": self.model.params,
            "rho": self.rho.tolist(),
            "mu": self.mu.tolist(),
            "gamma": self.gamma.tolist(),
            "g_tilde": self.g_tilde.tolist(),
            "lambda_matrix": self.lambda_matrix.tolist(),
            "cap": self.cap,
            "tail_mass": self.tail_mass,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str, model: RateModel) -> "DensityPoint":
        d = json.loads(text)
        return cls(model, np.array(d["rho"]), np.array(d["mu"]), np.array(d["gamma"]),
                   np.array(d["g_tilde"]), np.array(d["lambda_matrix"]), d["cap"], d["tail_mass"])


def _newton(model, rho, cap, tol, max_iter, mu0=None):
    rho = np.asarray(rho, dtype=float)
    mu = np.log(rho / (1.0 + rho)) if mu0 is None else np.array(mu0, dtype=float)
    ens = GrandCanonicalEnsemble(model, mu, cap)
    res = ens.density - rho
    for _ in range(max_iter):
        err = np.abs(res).max()
        if err < tol:
            return ens
        step = np.linalg.solve(ens.covariance, res)
        t = 1.0
        while t > 1e-9:
            cand = mu - t * step
            try:
                trial = GrandCanonicalEnsemble(model, cand, cap)
            except EnsembleError:
                t *= 0.5
                continue
            new_res = trial.density - rho
            if np.abs(new_res).max() < err or np.abs(new_res).max() < tol:
                break
            t *= 0.5
        else:
            break
        mu, ens, res = cand, trial, new_res
    if np.abs(res).max() < tol:
        return ens
    raise EnsembleError(f"Newton inversion did not reach {tol:g}; residual {np.abs(res).max():.3e}")


def _best_effort_newton(model, rho, cap, mu0):
    """Newton to round-off: iterate until the residual stops improving."""
    ens = _newton(model, rho, cap, 1e-10, 100, mu0)
    best = np.abs(ens.density - rho).max()
    for _ in range(5):
        step = np.linalg.solve(ens.covariance, ens.density - rho)
        trial = GrandCanonicalEnsemble(model, ens.mu - step, cap)
        err = np.abs(trial.density - rho).max()
        if err >= best:
            break
        ens, best = trial, err
    return ens


def invert_density(model: RateModel, rho, cap: int = DEFAULT_CAP, tol: float = 1e-10,
                   max_iter: int = 100, fd_step: float = 1e-5, fd_check: bool = True,
                   fd_tol: float = 1e-6) -> DensityPoint:
    """Find ``mu = M(rho)`` by Newton iteration with Jacobian ``Gamma(mu)``."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if rho.shape != (model.species_count,):
        raise EnsembleError("rho has the wrong length")
    if (rho <= 0).any() or (rho >= cap).any():
        raise EnsembleError("target density outside the reachable range")
    ens = _newton(model, rho, cap, tol, max_iter)
    gamma = ens.covariance
    g_tilde = np.exp(ens.mu)
    lam = g_tilde[:, None] * np.linalg.inv(gamma)
    point = DensityPoint(model, rho, ens.mu.copy(), gamma, g_tilde, lam, cap, ens.tail)
    if fd_check:
        point.lambda_fd = lambda_matrix_fd(model, rho, cap, fd_step, mu0=ens.mu)
        scale = max(1.0, float(np.abs(lam).max()))
        if np.abs(point.lambda_fd - lam).max() > fd_tol * scale:
            raise EnsembleError("chain-rule and finite-difference lambda matrices disagree")
    return point


def lambda_matrix_fd(model: RateModel, rho, cap: int = DEFAULT_CAP, h: float = 1e-5, mu0=None) -> np.ndarray:
    """Central differences of the enumerated mean rates ``E[g_i]`` in ``rho``."""
    rho = np.asarray(rho, dtype=float)
    n = len(rho)
    out = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        up = _best_effort_newton(model, rho + e, cap, mu0).mean_rates()
        dn = _best_effort_newton(model, rho - e, cap, mu0).mean_rates()
        out[:, j] = (up - dn) / (2 * h)
    return out


def sample_configuration(point: DensityPoint, N: int, rng) -> Configuration:
    """i.i.d. sites from the single-site table by inverse CDF."""
    rng = np.random.default_rng(rng)
    cdf = np.cumsum(point.probs)
    u = rng.random(N) * cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
    states = point.model.states(point.cap)
    return Configuration(states[idx], point.cap)


# ---------------------------------------------------------------------------
# Local functions


@dataclass(frozen=True)
class LocalFunction:
    """A function of the occupations on sites ``-radius..radius``.

    ``fn`` receives an integer array of shape ``(B, 2*radius+1, n)`` and
    returns shape ``(B,)``.
    """

    fn: object
    radius: int = 0
    name: str = "f"

    def __call__(self, window):
        return np.asarray(self.fn(window), dtype=float)

    def site_table(self, states: np.ndarray) -> np.ndarray:
        if self.radius != 0:
            raise ValueError("only single-site functions have a site table")
        return self(states[:, None, :])


def site_function(fn, name: str = "f") -> LocalFunction:
    """Wrap ``fn(k)`` acting on occupation vectors of shape ``(B, n)``."""
    return LocalFunction(lambda w: fn(w[:, 0, :]), 0, name)


def rate_function(model: RateModel, i: int, cap: int = DEFAULT_CAP) -> LocalFunction:
    table = model.rate_table(cap)[i]
    strides = model.strides(cap)
    return LocalFunction(lambda w: table[w[:, 0, :] @ strides], 0, f"g{i}")


def _pruned_support(probs: np.ndarray, eps: float = 1e-15):
    order = np.argsort(probs)[::-1]
    cum = np.cumsum(probs[order])
    keep = order[: int(np.searchsorted(cum, 1.0 - eps)) + 1]
    return np.sort(keep)


def expectation_local(point: DensityPoint, f: LocalFunction, max_states: int = MAX_LOCAL_STATES,
                      prune: float = 1e-15) -> float:
    """Exact ``E_{nu_rho}[f]`` by enumeration over the support of ``f``.

    Single-site states carrying less than ``prune`` total mass are dropped.
    """
    probs = point.probs
    states = point.model.states(point.cap)
    width = 2 * f.radius + 1
    if width == 1:
        return float(np.dot(probs, f(states[:, None, :])))
    keep = _pruned_support(probs, prune)
    total = len(keep) ** width
    if total > max_states:
        raise EnsembleError(f"enumeration of {total} local states exceeds {max_states}")
    p_keep = probs[keep]
    acc = 0.0
    combos = itertools.product(range(len(keep)), repeat=width)
    chunk = 200_000
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        window = states[keep[block]]
        weight = np.prod(p_keep[block], axis=1)
        acc += float(np.dot(weight, f(window)))
    return acc


def density_derivatives(model: RateModel, rho, f: LocalFunction, cap: int = DEFAULT_CAP,
                        h: float = 1e-4, second: bool = False):
    """Central finite differences of ``rho -> E_{nu_rho}[f]``, re-solving ``mu`` each time."""
    rho = np.asarray(rho, dtype=float)
    n = len(rho)
    mu0 = None

    def ev(r):
        nonlocal mu0
        ens = _best_effort_newton(model, r, cap, mu0)
        mu0 = ens.mu
        pt = DensityPoint(model, r, ens.mu, ens.covariance, np.exp(ens.mu), np.eye(n), cap)
        return expectation_local(pt, f)

    f0 = ev(rho)
    grad = np.empty(n)
    plus = np.empty(n)
    minus = np.empty(n)
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        plus[j] = ev(rho + e)
        minus[j] = ev(rho - e)
        grad[j] = (plus[j] - minus[j]) / (2 * h)
    if not second:
        return f0, grad
    hess = np.empty((n, n))
    for j in range(n):
        hess[j, j] = (plus[j] - 2 * f0 + minus[j]) / h**2
        for k in range(j + 1, n):
            ej = np.zeros(n)
            ej[j] = h
            ek = np.zeros(n)
            ek[k] = h
            val = (ev(rho + ej + ek) - ev(rho + ej - ek) - ev(rho - ej + ek) + ev(rho - ej - ek)) / (4 * h * h)
            hess[j, k] = hess[k, j] = val
    return f0, grad, hess


# ---------------------------------------------------------------------------
# Frame condition


def frame_residual(point: DensityPoint) -> np.ndarray:
    lam = point.lambda_matrix
    n = lam.shape[0]
    off = lam[~np.eye(n, dtype=bool)]
    diag = np.diag(lam)
    return np.concatenate([off, diag[1:] - diag[0]])


def find_frame_density(model: RateModel, box=((0.1, 2.0),), cap: int = DEFAULT_CAP,
                       tol: float = 1e-8, starts: int = 6, seed: int = 0) -> DensityPoint:
    """Search the box for a density where ``d g~_i / d rho_j = lambda delta_ij``.

    Raises :class:`FrameConditionError` when no such density is found.
    """
    n = model.species_count
    box = np.asarray(box, dtype=float)
    if box.shape[0] == 1 and n > 1:
        box = np.repeat(box, n, axis=0)
    lo, hi = box[:, 0], box[:, 1]
    if n == 1:
        return invert_density(model, 0.5 * (lo + hi), cap)

    def residual(r):
        pt = invert_density(model, r, cap, fd_check=False)
        return frame_residual(pt)

    rng = np.random.default_rng(seed)
    candidates = [0.5 * (lo + hi)] + [lo + (hi - lo) * rng.random(n) for _ in range(starts - 1)]
    best = None
    for x0 in candidates:
        try:
            sol = least_squares(residual, x0, bounds=(lo, hi), xtol=1e-15, ftol=1e-15, gtol=1e-15)
        except EnsembleError:
            continue
        err = np.abs(sol.fun).max()
        if best is None or err < best[0]:
            best = (err, sol.x)
        if err < tol:
            break
    if best is None or best[0] >= tol:
        got = "none" if best is None else f"{best[0]:.3e}"
        raise FrameConditionError(f"no frame density found in the search box (best residual {got})")
    point = invert_density(model, best[1], cap)
    if np.abs(frame_residual(point)).max() >= tol:
        raise FrameConditionError("frame residual above tolerance after refinement")
    return point


def frame_speed(point: DensityPoint) -> float:
    """Common diagonal entry of the lambda matrix."""
    return float(np.mean(np.diag(point.lambda_matrix)))
