import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from collabgnn import autodiff as ad
from collabgnn.build import build_graph, build_sample


@pytest.fixture(autouse=True, scope="session")
def single_thread():
    with threadpool_limits(1):
        yield


@pytest.fixture(autouse=True)
def clean_tape():
    ad.reset_tape()
    yield
    ad.reset_tape()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_sample(rng, dim=256, n_img=None, n_txt=None, label=None, sid="s"):
    n_img = n_img or int(rng.integers(3, 9))
    n_txt = n_txt or int(rng.integers(5, 12))
    label = int(rng.integers(0, 2)) if label is None else label
    return build_sample(rng.standard_normal((n_img, dim)), rng.standard_normal((n_txt, dim)), label, sid)


def random_graph(rng, n, dim=4):
    return build_graph(rng.standard_normal((n, dim)))


ACCEPTANCE_LINES: list[str] = []


def verdict(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
