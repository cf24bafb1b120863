"""Orchestration behind the command line: estimators, sweeps and output files."""
from __future__ import annotations

import csv
import json
import math
import platform
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, make_test_function
from .experiments import (EnsembleSpec, chi_square_stationarity, ou_targets, particle_autocorrelation,
                          qv_rates, run_ensemble, sup_square_mean, uniform_grid)
from .fields import (Accumulator, FieldFrame, bg_second_integrand, build_components, energy_estimators,
                     field_sample, fit_slope, fluctuation_field, optimal_block, snapshot_path, spectral_gap)
from .gibbs import (DensityPoint, FrameConditionError, density_derivatives, frame_residual, rate_function,
                    sample_configuration)
from .kmc import replica_streams, run_replicas, simulate, stream_id, write_jump_records, write_snapshot_csv
from .model import (alpha_regime, check_compatibility, check_potential_growth, min_rate_increment)
from .operators import TestFunction
from .ou import burgers_spec, ou_spec, simulate_ou

FRAME_TOL = 1e-8
SUMMARY_HEADER = ["estimator", "quantity", "mean", "stderr", "replicas", "reference"]


class ValidationFailure(RuntimeError):
    """Configuration is well formed but violates a model assumption."""


class AcceptanceFailure(RuntimeError):
    """A statistical comparison fell outside its tolerance."""


def code_version() -> str:
    from . import __version__

    return __version__


# ---------------------------------------------------------------------------
# Output


@dataclass
class Output:
    root: Path
    cfg: RunConfig
    command: str
    seed: int
    replicas: int
    files: list = field(default_factory=list)
    started: float = field(default_factory=time.time)

    def __post_init__(self):
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _manifest(self, path: Path, extra: dict | None = None):
        info = {
            "file": path.name,
            "command": self.command,
            "config_hash": self.cfg.digest(),
            "config": self.cfg.data,
            "seed": self.seed,
            "replicas": self.replicas,
            "stream_ids": [stream_id(self.seed, r) for r in range(self.replicas)],
            "code_version": code_version(),
            "python": platform.python_version(),
            "numpy": np.__version__,
        }
        info.update(extra or {})
        mpath = path.with_name(path.name + ".manifest.json")
        mpath.write_text(json.dumps(info, indent=1, sort_keys=True, default=_jsonable))
        return mpath

    def table(self, name: str, header, rows, extra: dict | None = None) -> Path:
        path = self.root / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.files.append(path)
        self.files.append(self._manifest(path, extra))
        return path

    def binary(self, name: str, writer, extra: dict | None = None) -> Path:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        writer(path)
        self.files.append(path)
        self.files.append(self._manifest(path, extra))
        return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


# ---------------------------------------------------------------------------
# Context


@dataclass
class Context:
    cfg: RunConfig
    seed: int
    replicas: int
    threads: int = 1
    N: int | None = None
    _point: DensityPoint | None = None

    @property
    def point(self) -> DensityPoint:
        if self._point is None:
            self._point = self.cfg.point()
        return self._point

    @property
    def kernel(self):
        return self.cfg.kernel(self.N)

    @property
    def lam(self):
        return self.cfg.sim.get("lam")

    def frame_ok(self) -> bool:
        return self.point.n == 1 or float(np.abs(frame_residual(self.point)).max()) < FRAME_TOL

    def require_frame(self, what: str):
        if alpha_regime(self.kernel.alpha) >= 0 and self.lam is None and not self.frame_ok():
            raise ValidationFailure(f"{what}: frame condition unmet at this density; "
                                    "frame-dependent estimators are disabled (set sim.lam to override)")

    def frame(self) -> FieldFrame:
        return FieldFrame.for_point(self.point, self.kernel, self.lam)

    def estimator(self, name: str) -> dict:
        for e in self.cfg.data["estimators"]:
            if e["name"] == name:
                return dict(e)
        return {"name": name}

    def ensemble(self, est: dict, **kw) -> EnsembleSpec:
        H = make_test_function(est["modes"]) if "modes" in est else TestFunction.cos_mode(1)
        G = make_test_function(est["g_modes"]) if "g_modes" in est else TestFunction.sin_mode(2)
        sim = self.cfg.sim
        return EnsembleSpec(self.point, self.kernel, sim["T"], sim["grid_steps"], self.replicas, self.seed,
                            H, G, self.lam, threads=self.threads, **kw)


def _test_fn(est: dict) -> TestFunction:
    return make_test_function(est["modes"]) if "modes" in est else TestFunction.cos_mode(1)


# ---------------------------------------------------------------------------
# Estimators: each returns rows matching SUMMARY_HEADER


def est_field(ctx: Context, est: dict):
    er = run_ensemble(ctx.ensemble(est))
    h = er.spec.H.lattice(er.spec.N)
    for i in range(ctx.point.n):
        acc = Accumulator.of(er.Y[:, i, -1] ** 2)
        yield "field", f"second_moment_T[{i}]", acc.mean, acc.stderr, acc.count, ctx.point.gamma[i, i] * np.mean(h * h)


def est_qv(ctx: Context, est: dict):
    er = run_ensemble(ctx.ensemble(est))
    for q in qv_rates(er):
        i = q["species"]
        yield "qv", f"rate[{i}]", q["measured"], q["stderr"], ctx.replicas, q["exact"]
        yield "qv", f"fd_closure[{i}]", q["fd_closure"], 0.0, 0, ""
        yield "qv", f"literal[{i}]", q["literal"], 0.0, 0, ""
    if ctx.point.n > 1:
        acc = Accumulator.of(np.abs(er.cross[:, -1]))
        yield "qv", "cross_abs[0,1]", acc.mean, acc.stderr, acc.count, 0.0


def est_decompose(ctx: Context, est: dict):
    ctx.require_frame("decompose")
    n = ctx.point.n
    er = run_ensemble(ctx.ensemble(est, decompose=tuple(range(n))))
    for a, i in enumerate(range(n)):
        m, s = sup_square_mean(er.A[:, a])
        yield "decompose", f"sup_A2[{i}]", m, s, ctx.replicas, ""
        acc = Accumulator.of(er.M[:, a, -1])
        yield "decompose", f"M_T[{i}]", acc.mean, acc.stderr, acc.count, 0.0


def est_bg1(ctx: Context, est: dict):
    ctx.require_frame("bg1")
    N = ctx.kernel.lattice_size
    ell = int(est.get("ell") or optimal_block(N, ctx.kernel.alpha))
    er = run_ensemble(ctx.ensemble(est, bg_ell=ell, bg_species=est.get("species", 0)))
    m, s = sup_square_mean(er.bg)
    yield "bg1", f"sup_R2_over_N[ell={ell}]", m / N, s / N, ctx.replicas, ""


def _snapshot_runs(ctx: Context, est: dict, reducer):
    es = ctx.ensemble(est)
    grid = uniform_grid(es.T, es.steps)

    def one(r):
        tr = simulate(es.point, es.kernel, es.T, es.seed, r, grid=grid, snapshots=True)
        return reducer(tr)

    return run_replicas(one, range(ctx.replicas), ctx.threads)


def est_bg2(ctx: Context, est: dict):
    ctx.require_frame("bg2")
    N = ctx.kernel.lattice_size
    ell = int(est.get("ell") or optimal_block(N, ctx.kernel.alpha))
    point, frame, H = ctx.point, ctx.frame(), _test_fn(est)
    i = est.get("species", 0)
    f = rate_function(point.model, i, point.cap)
    f0, _, hess = density_derivatives(point.model, point.rho, f, point.cap, second=True)

    def reduce(tr):
        path = snapshot_path(tr, lambda c, h: bg_second_integrand(c, point, f, f0, hess, ell, h), H, frame)
        return float(np.max(path**2))

    acc = Accumulator.of(_snapshot_runs(ctx, est, reduce))
    yield "bg2", f"sup_R2_over_N[ell={ell}]", acc.mean / N, acc.stderr / N, acc.count, ""


def est_energy(ctx: Context, est: dict):
    ctx.require_frame("energy")
    point, frame, H = ctx.point, ctx.frame(), _test_fn(est)
    eps = sorted(est.get("epsilon", [1 / 8, 1 / 16, 1 / 32]), reverse=True)
    allowed = sorted(set(eps) | {e / 2 for e in eps})
    i = est.get("species", 0)

    def reduce(tr):
        paths = energy_estimators(tr, point, H, frame, allowed, i)
        return [float(np.max((paths[e] - paths[e / 2]) ** 2)) for e in eps]

    vals = np.array(_snapshot_runs(ctx, est, reduce))
    for a, e in enumerate(eps):
        acc = Accumulator.of(vals[:, a])
        yield "energy", f"sup_diff2[eps={e:g}]", acc.mean, acc.stderr, acc.count, ""


def est_autocorrelation(ctx: Context, est: dict):
    ctx.require_frame("autocorrelation")
    er = run_ensemble(ctx.ensemble(est))
    T = er.spec.T
    lags = est.get("lags") or [round(0.05 * j, 10) for j in range(1, 11) if 0.05 * j <= T + 1e-12]
    ref = ou_targets(er, lags)
    i = est.get("species", 0)
    for (lag, m, s), r in zip(particle_autocorrelation(er, lags, i), ref):
        yield "autocorrelation", f"lag={lag:g}[{i}]", m, s, ctx.replicas, r[i, i]


ESTIMATOR_FNS = {
    "field": est_field, "qv": est_qv, "decompose": est_decompose, "bg1": est_bg1, "bg2": est_bg2,
    "energy": est_energy, "autocorrelation": est_autocorrelation,
}


def run_estimator(ctx: Context, name: str, **overrides) -> list:
    est = ctx.estimator(name)
    est.update(overrides)
    return list(ESTIMATOR_FNS[name](ctx, est))


# ---------------------------------------------------------------------------
# Commands


def cmd_validate(ctx: Context, out: Output | None = None) -> list:
    """Assumption checks as ``(check, status, detail)`` rows."""
    cfg = ctx.cfg
    cap = cfg.data["model"]["cap"]
    model = cfg.model()
    n = model.species_count
    rows = []
    box = np.array(np.meshgrid(*[np.arange(5)] * n, indexing="ij")).reshape(n, -1).T
    rep = check_compatibility(model, box)
    rows.append(("compatibility", "pass" if rep.passed else "fail",
                 "" if rep.passed else f"counterexample k={rep.counterexample[2]} species {rep.counterexample[:2]}"))
    growth = check_potential_growth(model, cap)
    rows.append(("potential_growth", "pass" if np.isfinite(growth) else "fail", f"min G(k)/|k| = {growth:.6g}"))
    inc = min_rate_increment(model, cap)
    rows.append(("rate_increment", "pass" if (inc > 0).all() else "not-met",
                 "inf increment per species = " + " ".join(f"{v:.6g}" for v in inc)))
    try:
        point = ctx.point
    except FrameConditionError as exc:
        rows.append(("frame_solve", "fail", str(exc)))
        point = None
    except Exception as exc:  # density inversion failures
        rows.append(("density", "fail", str(exc)))
        point = None
    if point is not None:
        rows.append(("tail_mass", "pass" if point.tail_mass < 1e-10 else "fail", f"{point.tail_mass:.3e}"))
        res = 0.0 if n == 1 else float(np.abs(frame_residual(point)).max())
        lam = np.diag(point.lambda_matrix)
        if res < FRAME_TOL:
            rows.append(("frame", "pass", f"lambda = {float(lam.mean()):.12g}"))
        elif alpha_regime(ctx.kernel.alpha) >= 0:
            rows.append(("frame", "warn", f"frame condition unmet (residual {res:.3e}); "
                                          "frame-dependent estimators disabled"))
        else:
            rows.append(("frame", "info", f"not required for alpha < 1 (residual {res:.3e})"))
        if ctx.cfg.frame_solve:
            rows.append(("frame_solve", "pass", "rho = " + " ".join(f"{r:.12g}" for r in point.rho)))
    if out is not None:
        out.table("validate.csv", ["check", "status", "detail"], rows)
    return rows


def cmd_sample(ctx: Context, out: Output):
    point, N = ctx.point, ctx.kernel.lattice_size
    H = _test_fn(ctx.estimator("field"))
    frame = FieldFrame(0.0, 0.0, N)
    strides = point.model.strides(point.cap)
    hist = np.zeros(point.probs.shape[0], dtype=np.int64)
    rows = []
    for r in range(ctx.replicas):
        rng, _ = replica_streams(ctx.seed, r)
        c = sample_configuration(point, N, rng)
        hist += np.bincount(c.state_index(strides), minlength=len(hist))
        for i in range(point.n):
            rows.append((r, i, fluctuation_field(c, point, H, frame, 0.0, i)))
        if r == 0:
            out.binary("snapshot_0.csv", lambda p, c=c: write_snapshot_csv(p, c))
    out.table("sample.csv", ["replica", "species", "Y0"], rows)
    stat, dof, p = chi_square_stationarity(hist, point)
    out.table("sample_chi2.csv", ["statistic", "dof", "pvalue"], [(stat, dof, p)])


def cmd_simulate(ctx: Context, out: Output):
    point, kernel = ctx.point, ctx.kernel
    sim = ctx.cfg.sim
    grid = uniform_grid(sim["T"], sim["grid_steps"])
    H = _test_fn(ctx.estimator("field"))
    comps = build_components(point, kernel, H, FieldFrame.for_point(point, kernel, ctx.lam)) \
        if ctx.frame_ok() or ctx.lam is not None or alpha_regime(kernel.alpha) < 0 else None

    def one(r):
        tr = simulate(point, kernel, sim["T"], ctx.seed, r, grid=grid, components=comps,
                      keep_jumps=sim["keep_jumps"], snapshots=False)
        if sim["keep_jumps"]:
            out.binary(f"jumps/replica_{r:05d}.bin", lambda p: write_jump_records(p, tr.jumps))
        if sim["snapshots"]:
            out.binary(f"snapshots/replica_{r:05d}.csv", lambda p: write_snapshot_csv(p, tr.final))
        ys = [tr.group_values(f"Y{i}")[-1] for i in range(point.n)] if comps is not None else [math.nan] * point.n
        return (r, tr.events, tr.rejected, *ys), tr.elapsed

    res = run_replicas(one, range(ctx.replicas), ctx.threads)
    header = ["replica", "events", "rejected"] + [f"Y_T[{i}]" for i in range(point.n)]
    secs = sum(r[1] for r in res)
    events = sum(r[0][1] for r in res)
    out.table("simulate.csv", header, [r[0] for r in res],
              {"events_per_second": events / secs if secs > 0 else None})


def cmd_decompose(ctx: Context, out: Output):
    ctx.require_frame("decompose")
    point, kernel = ctx.point, ctx.kernel
    sim = ctx.cfg.sim
    H = _test_fn(ctx.estimator("decompose"))
    comps = build_components(point, kernel, H, ctx.frame(), decomposition=True)
    grid = uniform_grid(sim["T"], sim["grid_steps"])

    def one(r):
        tr = simulate(point, kernel, sim["T"], ctx.seed, r, grid=grid, components=comps)
        return list(field_sample(tr, True).rows())

    rows = [row for rs in run_replicas(one, range(ctx.replicas), ctx.threads) for row in rs]
    out.table("decompose.csv", ["replica", "time", "species", "quantity", "value"], rows)


def cmd_estimator(name: str):
    def run(ctx: Context, out: Output):
        out.table(f"{name}.csv", SUMMARY_HEADER, run_estimator(ctx, name))
    return run


def cmd_gap(ctx: Context, out: Output):
    k = ctx.cfg.data["kernel"]
    g = ctx.cfg.data["gap"]
    model = ctx.cfg.model()
    rows = []
    for total in g["totals"]:
        W = [spectral_gap(model, k["alpha"], k["c_plus"], k["c_minus"], ell, [total] * model.species_count)
             for ell in g["ells"]]
        rows += [(ell, total, "W", w) for ell, w in zip(g["ells"], W)]
        rows.append(("", total, "slope", fit_slope(g["ells"], W)))
    out.table("gap.csv", ["ell", "total", "quantity", "value"], rows)


def _ou_rows(times, Y, spec_n):
    for r in range(Y.shape[1]):
        for s, t in enumerate(times):
            for i in range(spec_n):
                yield r, float(t), i, "Y", float(Y[0, r, s, i])


def cmd_ou(ctx: Context, out: Output, burgers: bool = False):
    o = ctx.cfg.data["ou"]
    sim = ctx.cfg.sim
    H = _test_fn(ctx.estimator("field"))
    rng = np.random.default_rng(np.random.SeedSequence([ctx.seed, 2**32 - 1]))
    if burgers:
        ctx.require_frame("burgers")
        spec = burgers_spec(ctx.point, ctx.kernel, o["K"], o["dt"], o["quadratic"], ctx.lam)
        n = spec.ou.n
        dt = spec.ou.dt
    else:
        spec = ou_spec(ctx.point, ctx.kernel, o["K"], o["dt"], o["discrete"], o["noise"], ctx.lam)
        n, dt = spec.n, spec.dt
    every = max(1, int(round(sim["T"] / sim["grid_steps"] / dt)))
    times, Y = simulate_ou(spec, [H], sim["T"], rng, ctx.replicas, every, burgers)
    name = "burgers.csv" if burgers else "ou.csv"
    out.table(name, ["replica", "time", "species", "quantity", "value"], _ou_rows(times, Y, n))


def cmd_sweep(ctx: Context, out: Output):
    sw = ctx.cfg.data.get("sweep")
    if sw is None:
        raise ValidationFailure("sweep: configuration has no sweep section")
    axis, name = sw["axis"], sw.get("estimator", "qv")
    rows = []
    for v in sw["values"]:
        if axis == "N":
            sub = Context(ctx.cfg, ctx.seed, ctx.replicas, ctx.threads, int(v), ctx._point)
            res = run_estimator(sub, name)
        elif axis == "ell":
            res = run_estimator(ctx, name, ell=int(v))
        else:
            res = run_estimator(ctx, name, epsilon=[float(v)])
        rows += [(axis, v, *r) for r in res]
    if sw.get("fit_slope"):
        by_q = {}
        for r in rows:
            by_q.setdefault(re.sub(r"\[(ell|eps)=[^\]]*\]", "", r[3]), []).append((r[1], r[4]))
        for q, pts in by_q.items():
            xs, ys = zip(*pts)
            if len(xs) > 1 and min(ys) > 0:
                rows.append((axis, "", name, f"slope:{q}", fit_slope(xs, ys), "", "", ""))
    out.table("sweep.csv", ["axis", "value"] + SUMMARY_HEADER, rows)


def cmd_compare(ctx: Context, out: Output, z: float = 3.0):
    rows = run_estimator(ctx, "autocorrelation")
    failed = [r for r in rows if abs(r[2] - r[5]) > z * r[3]]
    rows = [(*r, "PASS" if abs(r[2] - r[5]) <= z * r[3] else "FAIL") for r in rows]
    out.table("compare.csv", SUMMARY_HEADER + ["verdict"], rows)
    if failed:
        raise AcceptanceFailure(f"{len(failed)} lag(s) outside {z:g} standard errors")


COMMANDS = {
    "validate": None,
    "sample": cmd_sample,
    "simulate": cmd_simulate,
    "decompose": cmd_decompose,
    "qv": cmd_estimator("qv"),
    "bg1": cmd_estimator("bg1"),
    "bg2": cmd_estimator("bg2"),
    "energy": cmd_estimator("energy"),
    "gap": cmd_gap,
    "ou": cmd_ou,
    "burgers": lambda ctx, out: cmd_ou(ctx, out, burgers=True),
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}
