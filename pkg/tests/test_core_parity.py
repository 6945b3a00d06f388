"""Compiled core vs pure-Python fallback: same contract, matching numbers."""

import numpy as np
import pytest

from metocal._core import BACKEND, _pyfallback

try:
    from metocal._core import _native
except ImportError:
    _native = None

needs_native = pytest.mark.skipif(_native is None, reason="compiled core not built")


def problem(seed=0, n=400, pm=3):
    rng = np.random.default_rng(seed)
    G = np.ascontiguousarray(
        np.column_stack([np.ones(n)] + [rng.normal(2, 1, n) for _ in range(pm - 1)])
    )
    s_e = np.abs(rng.normal(0.5, 0.15, n)) + 0.05
    beta = rng.normal(0.4, 0.2, pm)
    y = G @ beta + (0.2 + 0.5 * s_e) * rng.standard_normal(n)
    x0 = np.concatenate([beta * 0.7, [0.4, 0.0]])
    return y, G, s_e, x0


@needs_native
def test_nll_values_agree():
    y, G, s_e, x0 = problem()
    theta = np.concatenate([x0[:-2], [0.3, 0.4]])
    a = _native.gaussian_nll(theta, y, G, s_e)
    b = _pyfallback.gaussian_nll(theta, y, G, s_e)
    assert a == pytest.approx(b, rel=1e-12)


@needs_native
def test_infeasible_returns_inf_in_both():
    y, G, s_e, x0 = problem()
    theta = np.concatenate([x0[:-2], [-1.0, 0.0]])
    assert _native.gaussian_nll(theta, y, G, s_e) == float("inf")
    assert _pyfallback.gaussian_nll(theta, y, G, s_e) == float("inf")


@needs_native
@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("opt_e", [True, False])
def test_nm_optima_agree(seed, opt_e):
    y, G, s_e, x0 = problem(seed)
    ra = _native.fit_gaussian_nm(x0, y, G, s_e, opt_e, 0.05, 1e-9, 10000)
    rb = _pyfallback.fit_gaussian_nm(x0, y, G, s_e, opt_e, 0.05, 1e-9, 10000)
    assert ra[1] == pytest.approx(rb[1], rel=1e-9, abs=1e-6)
    assert np.allclose(ra[0], rb[0], rtol=1e-4, atol=1e-5)
    assert ra[3] and rb[3]


@needs_native
def test_fixed_e_stays_fixed():
    y, G, s_e, x0 = problem()
    x0[-1] = 0.25
    for impl in (_native, _pyfallback):
        theta, _, _, _ = impl.fit_gaussian_nm(x0, y, G, s_e, False, 0.05, 1e-9, 10000)
        assert theta[-1] == 0.25


def test_backend_reports_name():
    assert BACKEND in ("native", "python")


def test_python_fallback_env_override(tmp_path):
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "from metocal._core import BACKEND; print(BACKEND)"],
        env={"METOCAL_PURE_PYTHON": "1", "PATH": "/usr/bin:/bin"},
        capture_output=True,
        text=True,
        cwd=tmp_path,
    )
    assert out.stdout.strip() == "python"
