import random

import pytest

from fairflow import _pykernels, kernels

try:
    from fairflow import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def random_residual_network(rng):
    n = rng.randint(3, 9)
    m = rng.randint(1, 20)
    tail, head, cost, rf, rb = [], [], [], [], []
    for _ in range(m):
        u, v = rng.sample(range(n), 2)
        tail.append(u)
        head.append(v)
        cost.append(rng.randint(0, 9))
        rf.append(rng.randint(0, 4))
        rb.append(0)
    return n, tail, head, cost, rf, rb


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")


@needs_ext
def test_compiled_and_python_ssp_agree_exactly():
    rng = random.Random(3)
    for _ in range(300):
        n, tail, head, cost, rf, rb = random_residual_network(rng)
        demand = rng.randint(1, 6)
        a = (list(rf), list(rb))
        b = (list(rf), list(rb))
        ra = _pykernels.successive_shortest_paths(n, tail, head, cost, a[0], a[1], 0, n - 1, demand)
        rb_ = _ckernels.successive_shortest_paths(n, tail, head, cost, b[0], b[1], 0, n - 1, demand)
        assert ra == rb_
        assert a == b


@needs_ext
@pytest.mark.parametrize("lam", [0.0, 0.3, 2.0, 8.0, 40.0])
def test_compiled_and_python_theta_agree(lam):
    for n in range(0, 30):
        assert _ckernels.theta(n, lam) == pytest.approx(_pykernels.theta(n, lam), rel=1e-13, abs=1e-13)


def test_theta_edge_cases():
    assert kernels.theta(0, 3.0) == 0.0
    assert kernels.theta(4, 0.0) == 0.0


def test_pure_fallback_is_selectable():
    import os
    import subprocess
    import sys
    code = ("from fairflow import kernels; from fairflow.dispatch import solve_deterministic;"
            "import oracles; print(kernels.BACKEND, solve_deterministic(oracles.river_crossing()).revenue)")
    env = dict(os.environ, FAIRFLOW_PURE="1", PYTHONPATH=os.path.dirname(__file__))
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["python", "12.0"]
