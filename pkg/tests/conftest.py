import numpy as np
import pytest

from adaptalign.pipeline import default_train_config, fit_reference
from adaptalign.synth import standard_benchmark


@pytest.fixture(scope="session")
def bench():
    return standard_benchmark()


@pytest.fixture(scope="session")
def reference(bench):
    """Reference adapter and mapper trained once on subject 1 at the default config."""
    adapter, mapper, trace = fit_reference(bench, default_train_config())
    return adapter, mapper, trace


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def run_cli(*argv):
    """Run the CLI in-process; returns (exit code, stdout, stderr)."""
    import contextlib
    import io

    from adaptalign.cli import main

    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="session")
def cli_env(tmp_path_factory):
    """Standard benchmark and reference model written through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    code, _, err = run_cli("simulate", "--preset", "standard", "--out", root / "bench", "--quiet")
    assert code == 0, err
    code, out, err = run_cli("train-reference", "--data", root / "bench", "--out", root / "ref")
    assert code == 0, err
    return {"root": root, "bench": root / "bench", "ref": root / "ref", "train_stdout": out}
