"""Shared test oracles: finite differences and straight-line net evaluation."""

import numpy as np

from latentalign.numerics import ParamStore, compute_gradient


def finite_difference_grads(loss_value_fn, params: ParamStore, step=1e-5) -> ParamStore:
    """Central finite differences of a plain-value loss over every parameter.

    `loss_value_fn(params) -> float` must evaluate the loss from array values
    only (no tape), so this stays independent of the reverse-mode path.
    """
    grads = params.zeros_like()
    for name, value in params.items():
        g = grads[name]
        flat_v = value.ravel()
        flat_g = g.ravel()
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + step
            up = loss_value_fn(params)
            flat_v[i] = orig - step
            down = loss_value_fn(params)
            flat_v[i] = orig
            flat_g[i] = (up - down) / (2.0 * step)
    return grads


def assert_grads_close(analytic: ParamStore, numeric: ParamStore,
                       rel_tol=1e-4, abs_tol=1e-8, small=1e-6):
    """Relative comparison with an absolute floor for near-zero gradients."""
    for name, ga in analytic.items():
        gn = numeric[name]
        denom = np.maximum(np.abs(gn), small)
        rel = np.abs(ga - gn) / denom
        tiny = np.abs(gn) < small
        ok = np.where(tiny, np.abs(ga - gn) < abs_tol, rel < rel_tol)
        assert np.all(ok), (
            f"gradient mismatch for {name}: max rel err "
            f"{rel[~tiny].max() if (~tiny).any() else 0.0:.3e}, "
            f"max abs err on tiny {np.abs(ga - gn)[tiny].max() if tiny.any() else 0.0:.3e}")


def straightline_mlp(layer_defs, x):
    """Independent forward pass: list of (W, b, activation-name) tuples."""
    h = np.asarray(x, dtype=np.float64)
    for w, b, act in layer_defs:
        h = w @ h + b
        if act == "tanh":
            h = np.tanh(h)
        elif act == "scaled_shifted_sigmoid":
            h = 0.5 * (1.0 / (1.0 + np.exp(-h)) - 0.5)
        elif act != "identity":
            raise ValueError(act)
    return h
