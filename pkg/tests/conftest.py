import numpy as np
import pytest

from mmcount import kernels
from mmcount.data import SynthParams, make_synth_dataset

BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    impl = kernels.get_backend(request.param)
    for name in ("stamp_kernels", "block_sum", "patch_sums"):
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """12 paired 32x48 scenes split 8/2/2."""
    out = tmp_path_factory.mktemp("synth_small")
    params = SynthParams(n_images=12, height=32, width=48, heads_min=2, heads_max=6,
                         head_radius=2, dark_fraction=0.3, seed=7)
    return make_synth_dataset(params, out, (8 / 12, 2 / 12, 2 / 12), sigma=2.0, overwrite=True)


@pytest.fixture
def criterion(request):
    """Report one acceptance criterion as a PASS/FAIL line, then assert it."""
    tr = request.config.pluginmanager.get_plugin("terminalreporter")
    results = request.config.__dict__.setdefault("_acceptance_results", [])

    def check(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        results.append(line)
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.__dict__.get("_acceptance_results")
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
