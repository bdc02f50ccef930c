import numpy as np
import pytest

from qagcl.dataset import GeoRecord, InteractionDataset, as_edges
from qagcl.synthetic import write_wsdream_like


def random_bipartite(rng, num_users, num_services, p=0.4):
    """Random edge set in which every user has at least one edge and one non-edge."""
    edges = []
    for u in range(num_users):
        row = [s for s in range(num_services) if rng.random() < p]
        if not row:
            row = [int(rng.integers(num_services))]
        if len(row) == num_services:
            row = row[:-1]
        edges += [(u, s) for s in row]
    return as_edges(edges)


def toy_dataset(rng, num_users=4, num_services=5, p=0.5):
    train = random_bipartite(rng, num_users, num_services, p)
    geo_u = [GeoRecord(i, float(rng.uniform(-60, 60)), float(rng.uniform(-170, 170)), True)
             for i in range(num_users)]
    geo_s = [GeoRecord(i, float(rng.uniform(-60, 60)), float(rng.uniform(-170, 170)), True)
             for i in range(num_services)]
    return InteractionDataset(num_users, num_services, train, np.zeros((0, 2), np.int64),
                              geo_u, geo_s, gamma=0.05, core=1, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synthetic_raw(tmp_path_factory):
    return write_wsdream_like(str(tmp_path_factory.mktemp("raw")), num_users=40, num_services=80, seed=3)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
