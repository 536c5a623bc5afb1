"""Shared test helpers: finite-difference gradients and tiny fixtures."""

import numpy as np
import pytest

from unrealdc import netcore as nc


def fd_gradients(params, loss_fn, step=1e-5):
    """Central-difference gradients of loss_fn over every parameter entry."""
    grads = {}
    for name, base in params.items():
        g = np.zeros_like(base, dtype=np.float64)
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = base[ix]
            base[ix] = orig + step
            up = nc.loss_value(params, loss_fn)
            base[ix] = orig - step
            down = nc.loss_value(params, loss_fn)
            base[ix] = orig
            g[ix] = (up - down) / (2.0 * step)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-5):
    """Worst-case relative disagreement between two gradient collections."""
    worst = 0.0
    for name in analytic:
        a = np.asarray(analytic[name], dtype=np.float64)
        b = np.asarray(numeric[name], dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        worst = max(worst, float((np.abs(a - b) / denom).max()))
    return worst


@pytest.fixture(scope="session")
def tiny_params():
    cfg = nc.tiny_config(n_actions=3, dtype="float64")
    return nc.init_params(cfg, seed=0)


@pytest.fixture(scope="session")
def tiny_params_5():
    cfg = nc.tiny_config(n_actions=5, dtype="float64")
    return nc.init_params(cfg, seed=0)
