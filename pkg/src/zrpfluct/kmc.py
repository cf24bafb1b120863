"""Exact continuous-time simulation of the speeded-up zero range process.

The event catalog is a binary sum tree over the ``N * n`` activities
``g_i(eta(x))`` plus an alias table for the shared displacement law.  Linear
observables are tracked through *components*: a site table ``phi`` over the
flattened single-site states, complex per-site weights ``b(x)`` and a
frequency ``omega``.  A component contributes ``Re(exp(-i omega t) S(t))``
with ``S(t) = sum_x phi(eta_t(x)) b(x)``, and its time integral is
accumulated exactly between events.
"""
from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, null_space

from . import _kernels as K
from .gibbs import DensityPoint, sample_configuration
from .model import DEFAULT_CAP, Configuration, JumpKernel, RateModel, kernel_mass


class SimulationError(RuntimeError):
    pass


def alias_table(weights) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias tables ``(prob, alias)`` for sampling ``weights / sum``."""
    w = np.asarray(weights, dtype=float)
    m = len(w)
    scaled = w * m / w.sum()
    prob = np.ones(m)
    alias = np.arange(m, dtype=np.int64)
    small = [k for k in range(m) if scaled[k] < 1.0]
    large = [k for k in range(m) if scaled[k] >= 1.0]
    while small and large:
        s, l = small.pop(), large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] -= 1.0 - scaled[s]
        (small if scaled[l] < 1.0 else large).append(l)
    return prob, alias


def alias_probabilities(prob, alias) -> np.ndarray:
    """The law encoded by an alias table (for testing)."""
    m = len(prob)
    out = np.array(prob, dtype=float) / m
    np.add.at(out, alias, (1.0 - np.asarray(prob)) / m)
    return out


# ---------------------------------------------------------------------------
# Components


@dataclass
class ComponentSet:
    """Linear observables tracked by the simulator, organised in groups.

    Group values are sums over their components.  Jump increments of every
    group enter its quadratic variation; ``pairs`` lists group pairs whose
    cross-variation is accumulated.
    """

    n_states: int
    lattice_size: int
    phi: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    omega: list = field(default_factory=list)
    group: list = field(default_factory=list)
    group_names: list = field(default_factory=list)
    pairs: list = field(default_factory=list)

    def add_group(self, name: str, comps) -> int:
        """``comps`` is an iterable of ``(phi, weights, omega)`` triples."""
        g = len(self.group_names)
        self.group_names.append(name)
        for phi, w, om in comps:
            phi = np.asarray(phi, dtype=float)
            w = np.asarray(w, dtype=complex)
            if phi.shape != (self.n_states,) or w.shape != (self.lattice_size,):
                raise ValueError("component shapes do not match the lattice")
            self.phi.append(phi)
            self.weights.append(w)
            self.omega.append(float(om))
            self.group.append(g)
        return g

    def add_pair(self, a: int, b: int):
        self.pairs.append((a, b))

    def index(self, name: str) -> int:
        return self.group_names.index(name)

    def members(self, g: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.group, dtype=np.int64) == g)

    def arrays(self):
        C = len(self.phi)
        phi = np.array(self.phi).reshape(C, self.n_states)
        bw = np.array(self.weights, dtype=complex).reshape(C, self.lattice_size)
        pa = np.array([p[0] for p in self.pairs], dtype=np.int64)
        pb = np.array([p[1] for p in self.pairs], dtype=np.int64)
        return (phi, bw, np.array(self.omega, dtype=float), np.array(self.group, dtype=np.int64),
                len(self.group_names), pa, pb)


# ---------------------------------------------------------------------------
# Event catalog and single steps


class EventCatalog:
    """Sum tree of activities ``g_i(eta(x))`` with a displacement alias table."""

    def __init__(self, model: RateModel, kernel: JumpKernel, config: Configuration):
        self.model = model
        self.kernel = kernel
        self.cap = config.cap
        self.rates = model.rate_table(self.cap)
        self.strides = model.strides(self.cap)
        self.disp = kernel.displacements()
        self.prob, self.alias = alias_table(kernel.weights())
        self.mass = kernel_mass(kernel)
        self.speed = kernel.lattice_size**kernel.alpha * self.mass
        N, n = config.counts.shape
        L = 1
        while L < N * n:
            L *= 2
        self.tree = np.zeros(2 * L)
        self.idx = config.state_index(self.strides)
        K.fill_tree(self.tree, self.idx, self.rates)
        self.rejected = 0

    @property
    def total_activity(self) -> float:
        return float(self.tree[1])

    def activity(self, x: int, i: int) -> float:
        n = self.model.species_count
        return float(self.tree[self.tree.shape[0] // 2 + x * n + i])

    def recomputed_total(self) -> float:
        n = self.model.species_count
        return float(K.leaf_sum(self.tree, len(self.idx) * n))

    def rebuild(self):
        K.fill_tree(self.tree, self.idx, self.rates)


@dataclass
class Event:
    site: int
    species: int
    displacement: int
    applied: bool


def step(catalog: EventCatalog, config: Configuration, rng) -> tuple[float, Event | None]:
    """One Gillespie step.  Returns ``(inf, None)`` when nothing can move."""
    total = catalog.total_activity
    if total <= 0.0:
        return math.inf, None
    dt = rng.exponential(1.0 / (catalog.speed * total))
    x, i, z = K.draw_event(catalog.tree, rng, config.species_count, catalog.disp, catalog.prob, catalog.alias)
    ok = K.apply_move(catalog.tree, config.counts, catalog.idx, catalog.rates, catalog.strides,
                      config.cap, x, i, z)
    if not ok:
        catalog.rejected += 1
    return float(dt), Event(int(x), int(i), int(z), bool(ok))


# ---------------------------------------------------------------------------
# Trajectories


JUMP_DTYPE = np.dtype([("t", "<f8"), ("site", "<u4"), ("species", "<u2"), ("z", "<i4")])


@dataclass
class Trajectory:
    initial: Configuration
    final: Configuration
    grid: np.ndarray
    sums: np.ndarray  # (G, C) complex component sums S_c
    integrals: np.ndarray  # (G, C)
    qv: np.ndarray  # (G, groups)
    cross: np.ndarray  # (G, pairs)
    snapshots: np.ndarray | None
    jumps: np.ndarray | None
    events: int
    rejected: int
    tree_drift: float
    elapsed: float
    seed: int
    replica: int
    components: ComponentSet | None = None

    @property
    def events_per_second(self) -> float:
        return self.events / self.elapsed if self.elapsed > 0 else float("nan")

    def component_values(self) -> np.ndarray:
        """``Re(exp(-i omega t) S_c(t))`` on the grid, shape ``(G, C)``."""
        om = np.array(self.components.omega)
        return (self.sums * np.exp(-1j * np.outer(self.grid, om))).real

    def group_values(self, name: str) -> np.ndarray:
        g = self.components.index(name)
        return self.component_values()[:, self.components.members(g)].sum(axis=1)

    def group_integrals(self, name: str) -> np.ndarray:
        g = self.components.index(name)
        return self.integrals[:, self.components.members(g)].sum(axis=1)

    def group_qv(self, name: str) -> np.ndarray:
        return self.qv[:, self.components.index(name)]


def replica_streams(seed: int, replica: int):
    """Independent generators for the initial configuration and the dynamics."""
    ss = np.random.SeedSequence([int(seed), int(replica)])
    init, dyn = ss.spawn(2)
    return np.random.default_rng(init), np.random.default_rng(dyn)


def stream_id(seed: int, replica: int) -> str:
    ss = np.random.SeedSequence([int(seed), int(replica)])
    return f"{ss.entropy}:{int(seed)}:{int(replica)}"


def simulate(point: DensityPoint, kernel: JumpKernel, T: float, seed: int, replica: int = 0,
             grid=None, components: ComponentSet | None = None, keep_jumps: bool = False,
             snapshots: bool = False, initial: Configuration | None = None) -> Trajectory:
    """Run the process with generator ``N^alpha L`` from ``nu_rho`` up to time ``T``."""
    if T <= 0:
        raise SimulationError("T must be positive")
    N = kernel.lattice_size
    model = point.model
    cap = point.cap
    rng_init, rng_dyn = replica_streams(seed, replica)
    config = sample_configuration(point, N, rng_init) if initial is None else initial.copy()
    if config.counts.shape != (N, model.species_count):
        raise SimulationError("initial configuration does not match the lattice")
    start = config.copy()
    grid = np.array([0.0, T] if grid is None else grid, dtype=float)
    if (np.diff(grid) < 0).any() or grid[0] < 0 or grid[-1] > T:
        raise SimulationError("observer grid must be sorted inside [0, T]")
    rates = model.rate_table(cap)
    strides = model.strides(cap)
    S = rates.shape[1]
    comps = components if components is not None else ComponentSet(S, N)
    if comps.n_states != S or comps.lattice_size != N:
        raise SimulationError("components built for a different model or lattice")
    phi, bw, om, grp, ng, pa, pb = comps.arrays()
    prob, alias = alias_table(kernel.weights())
    speed = N**kernel.alpha * kernel_mass(kernel)
    counts = config.counts
    idx = config.state_index(strides)
    t0 = time.perf_counter()
    out = K.run_kernel(counts, idx, rates, strides, cap, kernel.displacements(), prob, alias,
                       speed, float(T), grid, phi, bw, om, grp, ng, pa, pb, rng_dyn,
                       keep_jumps, snapshots)
    elapsed = time.perf_counter() - t0
    S_rec, I_rec, qv, cross, snaps, jt, jx, ji, jz, events, rejected, drift = out
    jumps = None
    if keep_jumps:
        jumps = np.empty(len(jt), dtype=JUMP_DTYPE)
        jumps["t"], jumps["site"], jumps["species"], jumps["z"] = jt, jx, ji, jz
    final = Configuration(counts, cap)
    return Trajectory(start, final, grid, S_rec, I_rec, qv, cross, snaps if snapshots else None, jumps,
                      int(events), int(rejected), float(drift), elapsed, int(seed), int(replica), comps)


def run_replicas(fn, replicas, threads: int = 1):
    """``[fn(r) for r in replicas]`` with optional thread parallelism.

    The compiled kernel releases the GIL, so threads give real speed-up.
    Results are returned in replica order regardless of scheduling.
    """
    replicas = list(replicas)
    if threads <= 1:
        return [fn(r) for r in replicas]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, replicas))


def write_jump_records(path, jumps: np.ndarray):
    """Little-endian packed records: f64 time, u32 site, u16 species, i32 displacement."""
    np.asarray(jumps, dtype=JUMP_DTYPE).tofile(path)


def read_jump_records(path) -> np.ndarray:
    return np.fromfile(path, dtype=JUMP_DTYPE)


def write_snapshot_csv(path, config: Configuration):
    N, n = config.counts.shape
    site, sp = np.meshgrid(np.arange(N), np.arange(n), indexing="ij")
    rows = np.column_stack([site.ravel(), sp.ravel(), config.counts.ravel()])
    np.savetxt(path, rows, fmt="%d", delimiter=",", header="site,species,count", comments="")


# ---------------------------------------------------------------------------
# Exact generator for tiny systems

MAX_EXACT_STATES = 20_000


def _compositions(total: int, parts: int, cap: int):
    """All ways to place ``total`` indistinguishable particles on ``parts`` sites."""
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars + (total + parts - 1,):
            out.append(b - prev - 1)
            prev = b
        if max(out) <= cap:
            yield tuple(out)


def enumerate_states(N: int, totals, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Configurations with fixed per-species totals, shape ``(M, N, n)``."""
    per_species = [list(_compositions(int(k), N, cap)) for k in totals]
    size = math.prod(len(p) for p in per_species)
    if size > MAX_EXACT_STATES:
        raise SimulationError(f"{size} states exceed the exact-oracle limit {MAX_EXACT_STATES}")
    return np.array([np.array(c).T for c in itertools.product(*per_species)], dtype=np.int64).reshape(
        size, N, len(totals))


def site_rate_matrix(kernel: JumpKernel, symmetric: bool = False) -> np.ndarray:
    """``q(x, y) = N^alpha sum_{z = y - x mod N} p(z)`` over the truncated displacements."""
    N = kernel.lattice_size
    q = np.zeros((N, N))
    w = kernel.s(kernel.displacements()) if symmetric else kernel.weights()
    for z, pz in zip(kernel.displacements(), w):
        for x in range(N):
            q[x, (x + z) % N] += pz
    return N**kernel.alpha * q


def exact_generator_matrix(model: RateModel, kernel: JumpKernel, totals, cap: int = DEFAULT_CAP,
                           symmetric: bool = False):
    """Dense rate matrix of the finite chain and its enumerated states."""
    N = kernel.lattice_size
    states = enumerate_states(N, totals, cap)
    lookup = {s.tobytes(): k for k, s in enumerate(states)}
    q = site_rate_matrix(kernel, symmetric)
    M = len(states)
    Q = np.zeros((M, M))
    n = model.species_count
    for a, s in enumerate(states):
        for x in range(N):
            for i in range(n):
                if s[x, i] == 0:
                    continue
                g = model.rate(s[x], i)
                for y in range(N):
                    if y == x or q[x, y] == 0.0 or s[y, i] >= cap:
                        continue
                    t = s.copy()
                    t[x, i] -= 1
                    t[y, i] += 1
                    Q[a, lookup[t.tobytes()]] += g * q[x, y]
    Q[np.diag_indices(M)] = -Q.sum(axis=1)
    return Q, states


def exact_law(Q: np.ndarray, p0, t: float) -> np.ndarray:
    return np.asarray(p0, dtype=float) @ expm(Q * t)


def stationary_law(Q: np.ndarray) -> np.ndarray:
    """Left null vector of ``Q`` normalised to a probability vector."""
    v = null_space(Q.T)[:, 0]
    return np.abs(v) / np.abs(v).sum()
