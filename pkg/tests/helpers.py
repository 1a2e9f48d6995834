"""Shared test oracles: central finite differences for gradient checks."""

import numpy as np

from drivevqa import nn

FD_STEP = 1e-5
FD_TOL = 1e-4


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def fd_gradient(fn, x, step=FD_STEP):
    """Central differences of scalar fn w.r.t. every element of x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def check_layer_gradients(make_layer, make_input, run, trials, seed):
    """Generic layer check: analytic backward vs central differences.

    make_layer(rng) builds a float64 layer, make_input(rng) an input,
    run(layer, x) returns (scalar loss, callable that performs backward and
    returns dx).  Each trial draws a fresh layer + input.  Returns the max
    relative error seen across params and inputs.
    """
    rng = nn.make_rng(seed)
    worst = 0.0
    for _ in range(trials):
        layer = make_layer(rng)
        x = make_input(rng)
        _, backward = run(layer, x)
        layer.zero_grads()
        dx = backward()

        for name, param in layer.params.items():
            analytic = layer.grads[name].copy()

            def loss_at(p, _name=name, _layer=layer, _x=x):
                saved = _layer.params[_name].copy()
                _layer.params[_name][...] = p
                value, _ = run(_layer, _x)
                _layer.params[_name][...] = saved
                return value

            numeric = fd_gradient(loss_at, param)
            worst = max(worst, rel_error(analytic, numeric))

        if dx is not None:
            def loss_at_x(xv, _layer=layer):
                value, _ = run(_layer, xv)
                return value

            numeric = fd_gradient(loss_at_x, x)
            worst = max(worst, rel_error(dx, numeric))
    return worst
