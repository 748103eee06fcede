"""Shared fixtures and independent numerical oracles for the test suite."""

import numpy as np
import pytest

from antipure import data, denoiser, diffusion


# --- oracles -----------------------------------------------------------------

def finite_diff(f, x, h=1e-5):
    """Central finite differences of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b) / denom))


def dct2_bruteforce(x):
    """Direct O(s^4) orthonormal 2D DCT-II, straight from the cosine sums."""
    x = np.asarray(x, dtype=np.float64)
    s = x.shape[0]
    out = np.zeros((s, s))
    for m in range(s):
        for n in range(s):
            acc = 0.0
            for i in range(s):
                for j in range(s):
                    acc += (x[i, j]
                            * np.cos(np.pi * (2 * i + 1) * m / (2 * s))
                            * np.cos(np.pi * (2 * j + 1) * n / (2 * s)))
            am = np.sqrt(1.0 / s) if m == 0 else np.sqrt(2.0 / s)
            an = np.sqrt(1.0 / s) if n == 0 else np.sqrt(2.0 / s)
            out[m, n] = am * an * acc
    return out


# --- shared heavyweight fixtures ----------------------------------------------

TOY_T = 100


@pytest.fixture(scope="session")
def sched():
    return diffusion.make_schedule(TOY_T, 1e-4, 0.02)


@pytest.fixture(scope="session")
def train_images():
    return data.make_dataset(64, 32, seed=7)


@pytest.fixture(scope="session")
def eval_images():
    return data.make_dataset(16, 32, seed=1007)


@pytest.fixture(scope="session")
def trained_model(sched, train_images):
    """One shared toy denoiser; trained once per session."""
    spec = denoiser.DenoiserSpec(in_channels=1, base_channels=16, num_blocks=2, embed_dim=32)
    return denoiser.train(spec, train_images, steps=2000, lr=0.01, seed=11, sched=sched)


@pytest.fixture(scope="session")
def tiny_model():
    """Small random-weight model for cheap gradient checks on 8x8 images."""
    spec = denoiser.DenoiserSpec(in_channels=1, base_channels=4, num_blocks=1, embed_dim=8)
    return denoiser.init_model(spec, seed=3)
