import numpy as np
import pytest

from fedseries.synthetic import noisy_sine_ohlcv, write_csv

# acceptance results collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sine_csv(tmp_path):
    def make(name="SYN", n=300, seed=0, **kw):
        return write_csv(noisy_sine_ohlcv(n, seed=seed, **kw), tmp_path / f"{name}.csv")

    return make


def write_rows(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
