"""Reusable experiment drivers shared by the command line and the test suite."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .fields import (Accumulator, FieldFrame, bg_first_components, build_components, fit_slope,
                     fluctuation_field, spectral_gap)
from .gibbs import DensityPoint, density_derivatives, find_frame_density, invert_density, rate_function
from .kmc import exact_generator_matrix, exact_law, run_replicas, simulate
from .model import (Configuration, JumpKernel, RateModel, constant_rate, independent, linear_rates,
                    potential_coupled)
from .operators import (TestFunction, discrete_dirichlet_form, operator_distance, qv_rate_sum,
                        symbol_table)
from .ou import ou_autocorrelation, ou_spec

DEFAULT_C = (0.75, 0.25)


def uniform_grid(T: float, steps: int) -> np.ndarray:
    return np.linspace(0.0, T, steps + 1)


# ---------------------------------------------------------------------------
# Exact small-system oracle


def exact_oracle_tv(seed: int = 0, replicas: int = 100_000, times=(0.1, 1.0), alpha: float = 1.0,
                    c=DEFAULT_C, N: int = 3, particles: int = 2) -> dict:
    """Total variation between KMC and matrix-exponential laws (single species, ``g(k) = k``)."""
    model = linear_rates(1)
    kernel = JumpKernel(alpha, c[0], c[1], N)
    Q, states = exact_generator_matrix(model, kernel, [particles])
    lookup = {s.tobytes(): a for a, s in enumerate(states)}
    start = np.zeros((N, 1), dtype=np.int64)
    start[0, 0] = particles
    p0 = np.zeros(len(states))
    p0[lookup[start.tobytes()]] = 1.0
    point = invert_density(model, [particles / N], fd_check=False)
    init = Configuration(start)
    counts = np.zeros((len(times), len(states)))
    for r in range(replicas):
        tr = simulate(point, kernel, max(times), seed, r, grid=list(times), snapshots=True, initial=init)
        for g in range(len(times)):
            counts[g, lookup[tr.snapshots[g].astype(np.int64).tobytes()]] += 1
    out = {}
    for g, t in enumerate(times):
        exact = exact_law(Q, p0, t)
        out[t] = 0.5 * float(np.abs(counts[g] / replicas - exact).sum())
    return out


# ---------------------------------------------------------------------------
# Particle ensembles


@dataclass
class EnsembleSpec:
    point: DensityPoint
    kernel: JumpKernel
    T: float = 0.5
    steps: int = 100
    replicas: int = 1000
    seed: int = 1
    H: TestFunction = field(default_factory=lambda: TestFunction.cos_mode(1))
    G: TestFunction = field(default_factory=lambda: TestFunction.sin_mode(2))
    lam: float | None = None
    decompose: tuple = ()
    bg_ell: int | None = None
    bg_species: int = 0
    threads: int = 1

    @property
    def N(self) -> int:
        return self.kernel.lattice_size

    @property
    def frame(self) -> FieldFrame:
        return FieldFrame.for_point(self.point, self.kernel, self.lam)


@dataclass
class EnsembleResult:
    spec: EnsembleSpec
    grid: np.ndarray
    Y: np.ndarray  # (R, n, G)
    qv: np.ndarray  # (R, n, G)
    cross: np.ndarray  # (R, G)
    initial: np.ndarray  # (R, 2, n): Y_0(H), Y_0(G)
    hist: np.ndarray  # final single-site state counts
    A: np.ndarray | None = None  # (R, len(decompose), G)
    M: np.ndarray | None = None
    closure: float = 0.0
    bg: np.ndarray | None = None  # (R, G)
    events: int = 0
    rejected: int = 0
    seconds: float = 0.0


def run_ensemble(es: EnsembleSpec) -> EnsembleResult:
    point, kernel = es.point, es.kernel
    n = point.n
    frame = es.frame
    extra = []
    if es.bg_ell is not None:
        f = rate_function(point.model, es.bg_species, point.cap)
        f0, grad = density_derivatives(point.model, point.rho, f, point.cap)
        extra.append(("BG", bg_first_components(point, es.H, frame, f, es.bg_ell, f0, grad)))
    comps = build_components(point, kernel, es.H, frame, decomposition=bool(es.decompose),
                             extra=extra)
    if es.decompose:
        keep = set(f"A{i}" for i in es.decompose) | set(f"B{i}" for i in es.decompose) | {f"Y{i}" for i in range(n)}
        if "BG" in comps.group_names:
            keep.add("BG")
        comps = _restrict(comps, keep)
    grid = uniform_grid(es.T, es.steps)
    S = point.model.states(point.cap).shape[0]
    strides = point.model.strides(point.cap)

    def one(r):
        tr = simulate(point, kernel, es.T, es.seed, r, grid=grid, components=comps)
        out = {
            "Y": np.array([tr.group_values(f"Y{i}") for i in range(n)]),
            "qv": np.array([tr.group_qv(f"Y{i}") for i in range(n)]).reshape(n, -1),
            "cross": tr.cross[:, 0] if tr.cross.shape[1] else np.zeros(len(grid)),
            "initial": np.array([[fluctuation_field(tr.initial, point, H, frame, 0.0, i) for i in range(n)]
                                 for H in (es.H, es.G)]),
            "hist": np.bincount(tr.final.state_index(strides), minlength=S),
            "events": tr.events, "rejected": tr.rejected, "seconds": tr.elapsed,
        }
        if es.decompose:
            A = np.array([tr.group_integrals(f"A{i}") for i in es.decompose])
            B = np.array([tr.group_integrals(f"B{i}") for i in es.decompose])
            Yd = out["Y"][list(es.decompose)]
            out["A"] = A
            out["M"] = Yd - Yd[:, :1] - A - B
        if es.bg_ell is not None:
            out["bg"] = tr.group_integrals("BG")
        return out

    res = run_replicas(one, range(es.replicas), es.threads)
    er = EnsembleResult(es, grid, np.array([r["Y"] for r in res]), np.array([r["qv"] for r in res]),
                        np.array([r["cross"] for r in res]), np.array([r["initial"] for r in res]),
                        np.sum([r["hist"] for r in res], axis=0))
    if es.decompose:
        er.A = np.array([r["A"] for r in res])
        er.M = np.array([r["M"] for r in res])
    if es.bg_ell is not None:
        er.bg = np.array([r["bg"] for r in res])
    er.events = int(sum(r["events"] for r in res))
    er.rejected = int(sum(r["rejected"] for r in res))
    er.seconds = float(sum(r["seconds"] for r in res))
    return er


def _restrict(cs, keep):
    from .kmc import ComponentSet

    out = ComponentSet(cs.n_states, cs.lattice_size)
    remap = {}
    for g, name in enumerate(cs.group_names):
        if name in keep:
            idx = cs.members(g)
            remap[g] = out.add_group(name, [(cs.phi[c], cs.weights[c], cs.omega[c]) for c in idx])
    for a, b in cs.pairs:
        if a in remap and b in remap:
            out.add_pair(remap[a], remap[b])
    return out


# ---------------------------------------------------------------------------
# Statistics on ensembles


def chi_square_stationarity(hist: np.ndarray, point: DensityPoint, min_expected: float = 5.0):
    """Pearson goodness-of-fit of pooled single-site states against the exact table."""
    total = hist.sum()
    exp = point.probs * total
    order = np.argsort(exp)[::-1]
    obs_b, exp_b = [], []
    tail_o = tail_e = 0.0
    for k in order:
        if exp[k] >= min_expected:
            obs_b.append(hist[k])
            exp_b.append(exp[k])
        else:
            tail_o += hist[k]
            tail_e += exp[k]
    if tail_e > 0:
        obs_b.append(tail_o)
        exp_b.append(tail_e)
    obs_b, exp_b = np.array(obs_b, float), np.array(exp_b, float)
    stat = float(np.sum((obs_b - exp_b) ** 2 / exp_b))
    dof = len(obs_b) - 1
    return stat, dof, float(stats.chi2.sf(stat, dof))


def initial_covariances(er: EnsembleResult) -> list:
    """``(label, estimate, stderr, exact)`` for all species pairs and test-function pairs."""
    es = er.spec
    N = es.N
    fns = {"H": es.H.lattice(N), "G": es.G.lattice(N)}
    out = []
    n = es.point.n
    for a, b in (("H", "H"), ("G", "G"), ("H", "G")):
        ia, ib = "HG".index(a), "HG".index(b)
        ip = float(np.mean(fns[a] * fns[b]))
        for i in range(n):
            for j in range(n):
                x = er.initial[:, ia, i] * er.initial[:, ib, j]
                acc = Accumulator.of(x)
                out.append((f"{a}{i},{b}{j}", float(acc.mean), float(acc.stderr), es.point.gamma[i, j] * ip))
    return out


def qv_rates(er: EnsembleResult) -> list:
    """Per species: measured QV rate, its stderr, the exact finite-N value and the two closure values."""
    es = er.spec
    H = es.H
    k = es.kernel
    dform = discrete_dirichlet_form(H, k)
    out = []
    for i in range(es.point.n):
        acc = Accumulator.of(er.qv[:, i, -1] / es.T)
        exact = es.point.g_tilde[i] * qv_rate_sum(H, k)
        lam = es.point.lambda_matrix[i, i]
        out.append({
            "species": i, "measured": float(acc.mean), "stderr": float(acc.stderr), "exact": exact,
            "fd_closure": 2 * lam * es.point.gamma[i, i] * dform,
            "literal": 4 * es.point.g_tilde[i] * dform,
        })
    return out


def particle_autocorrelation(er: EnsembleResult, lags, species: int) -> list:
    """Mean over start times of ``Y_{s+lag} Y_s`` per replica; returns ``(lag, mean, stderr)``."""
    dt = er.grid[1] - er.grid[0]
    Y = er.Y[:, species, :]
    out = []
    for lag in lags:
        s = int(round(lag / dt))
        prod = np.mean(Y[:, s:] * Y[:, : Y.shape[1] - s], axis=1)
        acc = Accumulator.of(prod)
        out.append((float(lag), float(acc.mean), float(acc.stderr)))
    return out


def ou_targets(er: EnsembleResult, lags) -> np.ndarray:
    es = er.spec
    spec = ou_spec(es.point, es.kernel, K=max(es.H.K, 1), dt=1e-3, discrete=True, lam=es.lam)
    return np.array([ou_autocorrelation(spec, es.H, es.H, t) for t in lags])


def sup_square_mean(paths: np.ndarray) -> tuple[float, float]:
    """Mean and stderr of ``max_t path_t^2`` over replicas."""
    acc = Accumulator.of(np.max(paths**2, axis=-1))
    return float(acc.mean), float(acc.stderr)


# ---------------------------------------------------------------------------
# Scenario builders


def coupled_point(rho=(0.6, 0.4), gamma: float = 0.1) -> DensityPoint:
    return invert_density(potential_coupled(2, gamma), list(rho))


def frame_point_constant(box=((0.4, 0.6),)) -> DensityPoint:
    return find_frame_density(constant_rate(2), box)


def default_kernel(alpha: float, N: int, c=DEFAULT_C) -> JumpKernel:
    return JumpKernel(alpha, c[0], c[1], N)


# ---------------------------------------------------------------------------
# Deterministic checks


def gap_scaling(alpha: float, ells=(1, 2, 3, 4), c=DEFAULT_C, totals=(1, 3)) -> dict:
    model = linear_rates(1)
    W = {k: [spectral_gap(model, alpha, c[0], c[1], ell, [k]) for ell in ells] for k in totals}
    slope = fit_slope(ells, W[totals[0]])
    diff = max(abs(a - b) for a, b in zip(W[totals[0]], W[totals[-1]]))
    return {"W": W, "slope": slope, "k_spread": diff}


def operator_convergence(alpha: float, Ns=(256, 512), c=DEFAULT_C, H: TestFunction | None = None,
                         full: bool = True) -> dict:
    H = H or TestFunction.from_modes({1: 0.5, 2: 0.25j})
    sym = symbol_table(alpha, c[0], c[1], max(H.K, 1))
    d = {N: operator_distance(H, JumpKernel(alpha, c[0], c[1], N), sym, full=full) for N in Ns}
    a, b = Ns[0], Ns[-1]
    return {"distances": d, "sup_ratio": d[a][0] / d[b][0], "l1_ratio": d[a][1] / d[b][1]}


def builtin_families(n: int = 2) -> dict:
    return {
        "constant": constant_rate(n),
        "linear": linear_rates(n),
        "potential-coupled": potential_coupled(n, 0.1),
        "independent": independent([lambda k: 1.0 + 0.5 * k / (1.0 + k)] * n),
    }


def ensemble_exactness(model: RateModel, rng, count: int = 20, lo: float = 0.1, hi: float = 2.0,
                       h: float = 1e-5) -> dict:
    """Worst-case deviations of the ensemble identities over random densities."""
    from .gibbs import GrandCanonicalEnsemble, _newton

    worst = {"fugacity": 0.0, "einstein": 0.0, "roundtrip": 0.0, "symmetry": 0.0, "hessian": 0.0,
             "min_eig": np.inf, "density": 0.0}
    n = model.species_count
    for _ in range(count):
        rho = lo + (hi - lo) * rng.random(n)
        pt = invert_density(model, rho)
        ens = pt.ensemble
        worst["fugacity"] = max(worst["fugacity"], float(np.abs(ens.mean_rates() - np.exp(pt.mu)).max()))
        # d g~_i / d mu_j = Cov(g_i, eta^j) must equal g~_i delta_ij
        states = model.states(pt.cap)
        cov_g = (model.rate_table(pt.cap) * ens.probs) @ (states - ens.density)
        ein = cov_g - np.diag(pt.g_tilde)
        worst["einstein"] = max(worst["einstein"], float(np.abs(ein).max()))
        back = _newton(model, ens.density, pt.cap, 1e-13, 100, mu0=pt.mu + 0.05)
        worst["roundtrip"] = max(worst["roundtrip"], float(np.abs(back.mu - pt.mu).max()))
        worst["density"] = max(worst["density"], float(np.abs(ens.density - rho).max()))
        worst["symmetry"] = max(worst["symmetry"], float(np.abs(pt.gamma - pt.gamma.T).max()))
        worst["min_eig"] = min(worst["min_eig"], float(np.linalg.eigvalsh(pt.gamma).min()))
        hess = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            up = GrandCanonicalEnsemble(model, pt.mu + e, pt.cap).density
            dn = GrandCanonicalEnsemble(model, pt.mu - e, pt.cap).density
            hess[:, j] = (up - dn) / (2 * h)
        worst["hessian"] = max(worst["hessian"], float(np.abs(hess - pt.gamma).max()))
    return worst
