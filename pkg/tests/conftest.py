"""Shared test utilities: the central finite-difference oracle and helpers."""

from __future__ import annotations

import numpy as np
import pytest

from moerl.autodiff import Tensor


def fd_grad(loss_fn, leaf: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of ``loss_fn()`` w.r.t. ``leaf``.

    Independent oracle: wiggles the leaf's raw array in place and re-runs
    the forward function; never touches the tape machinery.
    """
    grad = np.zeros_like(leaf.data)
    for ix in np.ndindex(leaf.data.shape):
        orig = leaf.data[ix]
        leaf.data[ix] = orig + h
        up = loss_fn()
        leaf.data[ix] = orig - h
        down = loss_fn()
        leaf.data[ix] = orig
        grad[ix] = (up - down) / (2.0 * h)
    return grad


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def assert_grad_close(loss_fn, leaf: Tensor, analytic: np.ndarray, tol: float = 1e-4):
    numeric = fd_grad(loss_fn, leaf)
    err = max_rel_err(analytic, numeric)
    assert err < tol, f"gradient mismatch: max rel err {err:.3e}"


def resample_until(rng: np.random.Generator, make, ok, tries: int = 100):
    """Draw ``make(rng)`` until ``ok(sample)`` holds (kink/tie avoidance)."""
    for _ in range(tries):
        sample = make(rng)
        if ok(sample):
            return sample
    pytest.fail("could not sample an input satisfying the margin condition")
