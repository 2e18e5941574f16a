import numpy as np
import pytest

from arwlab.generators import GeneratorSpec, generate, random_network
from arwlab.network import Network

ACCEPTANCE_LINES = []


def record(line: str) -> None:
    """Queue a line for the end-of-session acceptance summary."""
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def gen(text):
    return generate(GeneratorSpec.parse(text))


@pytest.fixture(scope="session")
def single():
    return Network.from_dense(np.zeros((1, 1)), labels=["a"])


@pytest.fixture(scope="session")
def two_site():
    return gen("two-site")


@pytest.fixture(scope="session")
def wheel3():
    return gen("wheel:3")


@pytest.fixture(scope="session")
def battery(two_site, wheel3):
    """Small mixed battery: symmetric, wheel, lattice ball, tree, non-uniform and random nets."""
    rng = np.random.default_rng(101)
    nets = [two_site, wheel3, gen("wheel:6"), gen("ball:2:2"), gen("tree:3:1"),
            gen("transitive:cycle:7@degree"), gen("transitive:hypercube:3")]
    nets += [random_network(int(rng.integers(3, 9)), rng) for _ in range(3)]
    return nets
