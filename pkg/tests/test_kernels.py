import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdgm import _lstm_py, kernels


def test_backend_selected():
    assert kernels.BACKEND in kernels.BACKENDS
    assert "python" in kernels.BACKENDS
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_env_forces_fallback():
    env = dict(os.environ, PDGM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import pdgm.kernels as k; print(k.BACKEND, sorted(k.BACKENDS))"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python ['python']"


@pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="compiled core not built")
@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 12), st.integers(1, 9), st.integers(0, 10**6))
def test_compiled_matches_fallback(B, T, k, seed):
    rng = np.random.default_rng(seed)
    xw = rng.standard_normal((B, T, 4 * k))
    wh = 0.5 * rng.standard_normal((k, 4 * k))
    fwd_c = kernels.lstm_forward(xw, wh, "cython")
    fwd_p = kernels.lstm_forward(xw, wh, "python")
    for a, b in zip(fwd_c, fwd_p):
        assert np.allclose(a, b, rtol=1e-13, atol=1e-14)
    d_a, d_c = rng.standard_normal((B, T, k)), rng.standard_normal((B, T, k))
    bc = kernels.lstm_backward(wh, fwd_p[1], fwd_p[2], d_a, d_c, "cython")
    bp = kernels.lstm_backward(wh, fwd_p[1], fwd_p[2], d_a, d_c, "python")
    assert np.allclose(bc, bp, rtol=1e-12, atol=1e-13)


def test_fallback_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    B, T, k = 2, 4, 3
    xw = rng.standard_normal((B, T, 4 * k))
    wh = 0.4 * rng.standard_normal((k, 4 * k))
    wa, wc = rng.standard_normal((B, T, k)), rng.standard_normal((B, T, k))

    def objective(x):
        a, c, _ = _lstm_py.lstm_forward(x, wh)
        return float(np.sum(wa * a) + np.sum(wc * c))

    _, c_seq, gates = _lstm_py.lstm_forward(xw, wh)
    dz = _lstm_py.lstm_backward(wh, c_seq, gates, wa, wc)
    for idx in [(0, 0, 0), (1, 3, 5), (0, 2, 11), (1, 1, 7)]:
        xp, xm = xw.copy(), xw.copy()
        xp[idx] += 1e-6
        xm[idx] -= 1e-6
        assert abs((objective(xp) - objective(xm)) / 2e-6 - dz[idx]) < 1e-8
