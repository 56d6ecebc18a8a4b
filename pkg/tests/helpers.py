"""Shared test oracles: finite differences and naive reference computations."""

import numpy as np

from pcelab import nn


def central_diff_param_grads(graph, x, dy, eps=1e-5):
    """Numeric gradients of sum(forward(x) * dy) w.r.t. every parameter."""
    out = {}
    for key, p in graph.parameters().items():
        num = np.zeros_like(p)
        for i in range(p.size):
            old = p.flat[i]
            p.flat[i] = old + eps
            hi = float(np.sum(graph.forward(x, mode=nn.EVAL)[0] * dy))
            p.flat[i] = old - eps
            lo = float(np.sum(graph.forward(x, mode=nn.EVAL)[0] * dy))
            p.flat[i] = old
            num.flat[i] = (hi - lo) / (2 * eps)
        out[key] = num
    return out


def central_diff_input_grad(graph, x, dy, eps=1e-5):
    num = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + eps
        hi = float(np.sum(graph.forward(x, mode=nn.EVAL)[0] * dy))
        x.flat[i] = old - eps
        lo = float(np.sum(graph.forward(x, mode=nn.EVAL)[0] * dy))
        x.flat[i] = old
        num.flat[i] = (hi - lo) / (2 * eps)
    return num


def rel_err(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-10)
    return np.max(np.abs(a - b)) / scale


def check_graph_grads(graph, x, dy, tol=1e-4):
    """Assert analytic gradients match central differences for a graph whose
    layers are all deterministic in eval mode."""
    out, caches = graph.forward(x, mode=nn.EVAL)
    dx, grads = graph.backward(caches, dy)
    num_in = central_diff_input_grad(graph, x.copy(), dy)
    assert rel_err(dx, num_in) < tol, f"input grad mismatch: {rel_err(dx, num_in)}"
    num_params = central_diff_param_grads(graph, x, dy)
    for key, num in num_params.items():
        assert rel_err(grads[key], num) < tol, (
            f"param grad mismatch for {key}: {rel_err(grads[key], num)}")


def naive_dft_magnitude(h):
    n = len(h)
    f = np.exp(-2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n) / np.sqrt(n)
    return np.abs(f.conj().T @ h)
