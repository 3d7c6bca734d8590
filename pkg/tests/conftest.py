import numpy as np
import pytest
from hypothesis import strategies as st

from periodic_engine import profiles as pr
from periodic_engine.synthesis import EngineParams


@pytest.fixture
def carnot41():
    return pr.carnot(4.0, 1.0)


@pytest.fixture
def sine():
    return pr.sinusoid(2.5, 1.5)


@pytest.fixture
def unit_params():
    return EngineParams()


def random_profile(rng: np.random.Generator, period: float = 1.0) -> pr.TemperatureProfile:
    """A random two-to-four piece profile mixing constant, sinusoid and sampled pieces."""
    n = int(rng.integers(2, 5))
    cuts = np.sort(rng.uniform(0.05, 0.95, n - 1)) * period
    edges = np.concatenate([[0.0], cuts, [period]])
    pieces = []
    for a, b in zip(edges[:-1], edges[1:]):
        kind = rng.integers(3)
        if kind == 0:
            shape = pr.Constant(float(rng.uniform(0.5, 5.0)))
        elif kind == 1:
            mean = float(rng.uniform(1.0, 5.0))
            shape = pr.Sinusoid(mean, float(rng.uniform(0.0, 0.9) * mean), float(rng.uniform(1.0, 20.0)),
                                float(rng.uniform(0, 2 * np.pi)))
        else:
            ts = np.linspace(a, b, int(rng.integers(2, 6)))
            shape = pr.SampledLinear(tuple(zip(ts, rng.uniform(0.5, 5.0, len(ts)))))
        pieces.append(pr.Piece(float(a), float(b), shape))
    return pr.TemperatureProfile(period, tuple(pieces))


@st.composite
def profiles(draw):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    return random_profile(np.random.default_rng(seed))


def trapezoid_mean(profile, f, n=200_001):
    """Brute-force period mean on a uniform grid; jumps cost O(1/n)."""
    t = np.linspace(0.0, profile.period, n)
    return np.trapezoid(f(profile(t)), t) / profile.period


ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.fixture
def acceptance(request):
    """``record(n, ok, detail)`` prints one PASS/FAIL line and keeps it for the run summary."""
    lines = request.config.stash[ACCEPTANCE_LINES]

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n:2d}  {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
