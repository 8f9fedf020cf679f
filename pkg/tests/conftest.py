import subprocess
import sys
import time

import numpy as np
import pytest

from thzdt.scene import canonical_scene


@pytest.fixture(scope="session")
def scene():
    return canonical_scene()


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def pipeline_runs(tmp_path_factory):
    """Two full seeded end-to-end runs through the installed CLI.

    Returns (run1 dir, run2 dir, total wall seconds). Shared by the
    acceptance tests that inspect run products and by the determinism
    check, so the expensive runs happen once per session.
    """
    base = tmp_path_factory.mktemp("runall")
    dirs = (base / "run1", base / "run2")
    t0 = time.perf_counter()
    for out in dirs:
        proc = subprocess.run(
            [sys.executable, "-m", "thzdt", "run-all", "--seed", "7",
             "--out-dir", str(out)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
    elapsed = time.perf_counter() - t0
    return dirs[0], dirs[1], elapsed
