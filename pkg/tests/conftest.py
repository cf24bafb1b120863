from __future__ import annotations

import pytest

from zrpfluct.experiments import EnsembleSpec, coupled_point, default_kernel, frame_point_constant, run_ensemble
from zrpfluct.fields import optimal_block
from zrpfluct.gibbs import invert_density
from zrpfluct.model import linear_rates
from zrpfluct.operators import TestFunction

VERDICTS: dict[int, tuple[str, str]] = {}


@pytest.fixture(scope="session")
def record():
    """Record one PASS/FAIL line per acceptance criterion."""

    def _record(number: int, ok: bool, detail: str) -> bool:
        line = ("PASS" if ok else "FAIL", detail)
        VERDICTS[number] = line
        print(f"\nCRITERION {number:2d}: {line[0]}  {detail}")
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        verdict, detail = VERDICTS[number]
        terminalreporter.write_line(f"CRITERION {number:2d}: {verdict}  {detail}")


H_ACC = TestFunction.cos_mode(1)
G_ACC = TestFunction.sin_mode(2)


@pytest.fixture(scope="session")
def coupled_ensembles():
    """alpha = 0.75, potential-coupled rates at rho = (0.6, 0.4), several lattice sizes."""
    point = coupled_point()
    out = {}
    for N in (64, 128, 256, 512):
        es = EnsembleSpec(point, default_kernel(0.75, N), T=0.5, steps=100, replicas=1000, seed=101,
                          H=H_ACC, G=G_ACC, decompose=(0,), bg_ell=optimal_block(N, 0.75))
        out[N] = run_ensemble(es)
    return out


@pytest.fixture(scope="session")
def frame_ensemble():
    """alpha = 1.25, constant rates at the frame-solved density, N = 512."""
    es = EnsembleSpec(frame_point_constant(), default_kernel(1.25, 512), T=0.5, steps=100, replicas=1000,
                      seed=202, H=H_ACC, G=G_ACC)
    return run_ensemble(es)


@pytest.fixture(scope="session")
def linear_ensemble():
    """Single species, linear rates, alpha = 0.75, N = 512."""
    es = EnsembleSpec(invert_density(linear_rates(1), [1.0]), default_kernel(0.75, 512), T=0.5, steps=100,
                      replicas=1000, seed=303, H=H_ACC, G=G_ACC)
    return run_ensemble(es)
