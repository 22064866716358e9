"""The compiled kernel and the pure-Python fallback must give identical traces."""

import os
import subprocess
import sys

import numpy as np
import pytest

from lagsim import _lagkernel_py, lag

try:
    from lagsim import _lagkernel
except ImportError:  # pragma: no cover - build without a C compiler
    _lagkernel = None


def random_system(rng, n):
    from lagsim.core import Alphabet

    alpha = Alphabet([f"x{i}" for i in range(n)] + ["!h"], "!h")
    rules = []
    for a in range(n):
        for b in range(n):
            if rng.random() < 0.9:
                k = int(rng.integers(1, 3))
                rules.append(lag.ProductionRule((a, b), tuple(int(x) for x in rng.integers(0, n, k))))
    return lag.LagSystem(alpha, rules)


@pytest.mark.skipif(_lagkernel is None, reason="compiled kernel not built")
def test_kernels_agree_on_random_systems(monkeypatch):
    rng = np.random.default_rng(11)
    for _ in range(50):
        s = random_system(rng, int(rng.integers(2, 8)))
        word = tuple(int(x) for x in rng.integers(0, len(s.alphabet) - 1, int(rng.integers(0, 10))))
        budget = int(rng.integers(0, 3000))
        monkeypatch.setattr(lag, "_kernel", _lagkernel)
        a = lag.run(s, word, budget)
        monkeypatch.setattr(lag, "_kernel", _lagkernel_py)
        b = lag.run(s, word, budget)
        assert a.halt == b.halt
        assert np.array_equal(a.lengths, b.lengths)
        n = a.steps + int(a.lengths[-1])
        assert np.array_equal(a.stream[:n], b.stream[:n])


def test_env_var_forces_python_kernel():
    code = "import lagsim.lag as l; print(l.KERNEL)"
    env = dict(os.environ, LAGSIM_PURE="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
