"""Central finite-difference oracle for graph gradients.

Only forward evaluations are used here, so the check stays independent of
the backward closures it validates.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .diffgraph import Node, ParamStore, backward


def numeric_grad(loss_fn: Callable[[], float], array: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Perturb ``array`` in place coordinate by coordinate; restores it."""
    out = np.zeros_like(array)
    flat, gflat = array.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return out


def fd_resolution(loss_value: float, eps: float = 1e-5, rtol: float = 1e-4) -> float:
    """Smallest gradient magnitude a central difference resolves to ``rtol``.

    Each loss evaluation is exact to about one ulp, so the difference quotient
    carries an absolute error near ``2 * ulp(|f|) / eps``; coordinates below
    that divided by ``rtol`` are noise as far as this oracle can tell.
    """
    return 2 * np.finfo(np.float64).eps * max(1.0, abs(loss_value)) / eps / rtol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def check_params(
    build_loss: Callable[[], Node],
    params: ParamStore,
    eps: float = 1e-5,
    names: list[str] | None = None,
    floor: float = 1e-6,
) -> dict[str, float]:
    """Max coordinate-wise relative error per parameter entry.

    ``build_loss`` must rebuild the graph from the current parameter values
    and be deterministic (fix any rng inside it).
    """
    grads = backward(build_loss(), params)
    report = {}
    for name in names or params.names():
        node = params[name]
        num = numeric_grad(lambda: float(build_loss().value), node.value, eps)
        report[name] = float(relative_error(grads[name], num, floor).max())
    return report
