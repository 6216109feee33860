from datetime import datetime, timedelta

import numpy as np
import pytest


def write_series_csv(path, values, start=datetime(2016, 7, 1), step=timedelta(hours=1), names=None):
    values = np.asarray(values, dtype=np.float64)
    names = names or [f"v{i}" for i in range(values.shape[1])]
    with open(path, "w") as fh:
        fh.write("date," + ",".join(names) + "\n")
        for i, row in enumerate(values):
            ts = (start + i * step).strftime("%Y-%m-%d %H:%M:%S")
            fh.write(ts + "," + ",".join(repr(float(v)) for v in row) + "\n")
    return path


def periodic_series(n_rows, n_vars=4, seed=0, noise=0.0):
    """24-periodic signals plus a small affine trend."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_rows)[:, None]
    phase = rng.uniform(0, 2 * np.pi, n_vars)
    amp = rng.uniform(0.5, 2.0, n_vars)
    trend = rng.uniform(-1e-3, 1e-3, n_vars)
    vals = amp * np.sin(2 * np.pi * t / 24 + phase) + trend * t + rng.uniform(-1, 1, n_vars)
    if noise:
        vals = vals + noise * rng.normal(size=vals.shape)
    return vals


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def csv_factory(tmp_path):
    def make(values, name="series.csv", **kw):
        return write_series_csv(tmp_path / name, values, **kw)

    return make


# acceptance criteria append "PASS/FAIL/SKIP" lines here; printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
