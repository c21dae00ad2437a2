import os
import subprocess
import sys

import numpy as np
import pytest

from qamatch.numerics import kernels

needs_numba = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")


def _gates(seed=0, B=7, H=5):
    rng = np.random.default_rng(seed)
    return rng.normal(0, 2, size=(B, 4 * H)), rng.normal(size=(B, H))


@needs_numba
def test_lstm_forward_numba_equals_numpy():
    z, c = _gates()
    for a, b in zip(kernels.lstm_gates_forward_numba(z, c), kernels.lstm_gates_forward_numpy(z, c)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


@needs_numba
def test_lstm_backward_numba_equals_numpy():
    z, c = _gates(1)
    _, _, acts, tc = kernels.lstm_gates_forward_numpy(z, c)
    rng = np.random.default_rng(2)
    dh, dc = rng.normal(size=c.shape), rng.normal(size=c.shape)
    for a, b in zip(
        kernels.lstm_gates_backward_numba(dh, dc, acts, tc, c),
        kernels.lstm_gates_backward_numpy(dh, dc, acts, tc, c),
    ):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def _sweep_inputs(seed=3, V=20, D=6, n=300, k=4):
    rng = np.random.default_rng(seed)
    w_in = rng.uniform(-0.1, 0.1, size=(V, D))
    w_out = rng.uniform(-0.1, 0.1, size=(V, D))
    centers = rng.integers(2, V, size=n)
    contexts = rng.integers(2, V, size=n)
    negs = rng.integers(2, V, size=(n, k))
    negs[0, 0] = contexts[0]  # a negative equal to the context is skipped
    alphas = np.linspace(0.05, 0.001, n)
    return w_in, w_out, centers, contexts, negs, alphas


@needs_numba
def test_sgns_sweep_numba_equals_numpy():
    a = _sweep_inputs()
    b = tuple(x.copy() for x in a)
    la = kernels.sgns_sweep_numba(*a)
    lb = kernels.sgns_sweep_numpy(*b)
    assert la == pytest.approx(lb, rel=1e-12)
    np.testing.assert_allclose(a[0], b[0], atol=1e-13)
    np.testing.assert_allclose(a[1], b[1], atol=1e-13)


def test_sgns_sweep_reduces_loss():
    w_in, w_out, centers, contexts, negs, alphas = _sweep_inputs(n=200)
    first = kernels.sgns_sweep(w_in, w_out, centers, contexts, negs, alphas)
    for _ in range(20):
        last = kernels.sgns_sweep(w_in, w_out, centers, contexts, negs, alphas)
    assert last < first


def test_env_flag_selects_numpy_backend():
    code = "from qamatch.numerics import kernels; print(kernels.backend())"
    env = {**os.environ, "QAMATCH_NO_NUMBA": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
