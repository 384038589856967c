"""Shared fixtures and independent reference implementations.

The reference (oracle) routines here are deliberately written as direct
summations in double precision, independent of the package's own code paths.
"""

import numpy as np
import pytest


def direct_dft(x, inverse=False):
    """O(N^2) discrete Fourier transform by explicit kernel matrix."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.size
    sign = 2j if inverse else -2j
    kernel = np.exp(sign * np.pi * np.outer(np.arange(n), np.arange(n)) / n)
    out = kernel @ x
    return out / n if inverse else out


def direct_convolve(x, h):
    """Zero-history FIR by shift-and-accumulate in double precision."""
    x = np.asarray(x, dtype=np.complex128)
    h = np.asarray(h, dtype=np.complex128)
    n = x.size
    y = np.zeros(n, dtype=np.complex128)
    for j in range(min(h.size, n)):
        y[j:] += h[j] * x[: n - j]
    return y


def rel_err(a, b):
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-30)
    return float(np.max(np.abs(a - b)) / scale)


def random_series(rng, n, dtype=np.complex64):
    return (rng.standard_normal(n) + 1j * rng.standard_normal(n)).astype(dtype)


def random_taps(rng, n_tap, dtype=np.complex64):
    return (rng.standard_normal(n_tap) + 1j * rng.standard_normal(n_tap)).astype(dtype)


def random_plane(rng, rows, cols):
    """Random non-negative float32 power plane."""
    return (rng.standard_normal((rows, cols)) ** 2).astype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
