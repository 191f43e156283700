import numpy as np
import pytest

from feedermarket import ConsumerParams, Participant, ProsumerParams, table1
from feedermarket.scenario import PopulationSpec, generate_population


@pytest.fixture(scope="session")
def t1():
    return table1()


@pytest.fixture
def toy_seller():
    return ProsumerParams("S", 1, a=0.005, b=2.0, gamma=0.0, s_min=0.0, s_max=1000.0)


@pytest.fixture
def toy_buyer():
    return ConsumerParams("B", 1, omega=10.0, mu=0.005, d_min=0.0, d_max=1000.0)


def random_market(rng, max_side=50, area=1):
    """Sellers and buyers drawn from the case-study envelope."""
    ns, nb = rng.integers(1, max_side + 1, size=2)
    sellers = [
        Participant(
            ProsumerParams(f"P{i}", area, rng.uniform(0.001, 0.008), rng.uniform(2, 9),
                           0.0, 0.0, cap := rng.uniform(30, 200)),
            0.0, 0.0, cap,
        )
        for i in range(ns)
    ]
    buyers = [
        Participant(
            ConsumerParams(f"C{j}", area, rng.uniform(7, 20), rng.uniform(0.04, 0.15),
                           0.0, cap := rng.uniform(30, 200)),
            0.0, 0.0, cap,
        )
        for j in range(nb)
    ]
    return sellers, buyers


def random_scenarios(n, seed=2024):
    """Small multi-area generated scenarios with varied shapes."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        areas = int(rng.integers(1, 6))
        sellers = int(rng.integers(areas, 6 * areas + 1))
        buyers = int(rng.integers(areas, 6 * areas + 1))
        out.append(generate_population(
            PopulationSpec(num_areas=areas, sellers=sellers, buyers=buyers,
                           seed=int(rng.integers(0, 2**32)))
        ))
    return out


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
