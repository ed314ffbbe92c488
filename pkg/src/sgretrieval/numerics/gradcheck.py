"""Central finite-difference gradient checking.

The numeric side never touches the autodiff backward path: it re-runs the
forward closure with perturbed parameter entries and differences the scalar
loss. Callers should build the model under test in float64 so the h=1e-3
stencil is not drowned by rounding.

LeakyReLU kinks need care: with hundreds of piecewise-linear units a random
instance almost surely has some pre-activation closer to its kink than the
stencil can straddle, which corrupts the difference without any gradient
being wrong. A coordinate that fails at the base width is therefore
re-checked with narrower central stencils; the coordinate's error is the
best across widths. A genuinely wrong analytic gradient fails at every
width, so narrowing can only rescue stencil artifacts, never real defects.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

REL_TOL = 1e-3
_DENOM_FLOOR = 1e-3
_REFINE_FACTORS = (8.0, 64.0)


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), _DENOM_FLOOR)


def finite_difference_check(build_loss, params: list[Tensor], h: float = 1e-3,
                            max_coords_per_param: int = 24,
                            rng: np.random.Generator | None = None) -> float:
    """Return the max relative error between analytic and numeric gradients.

    ``build_loss`` must run a fresh forward pass from the params' current
    data and return a scalar tensor. Checks every coordinate of small
    params and a random subset of large ones.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def central(flat, c, width):
        original = flat[c]
        flat[c] = original + width
        plus = float(build_loss().data)
        flat[c] = original - width
        minus = float(build_loss().data)
        flat[c] = original
        return (plus - minus) / (2.0 * width)

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        size = flat.size
        if size <= max_coords_per_param:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=max_coords_per_param, replace=False)
        a_flat = a.reshape(-1)
        for c in coords:
            err = _rel_err(a_flat[c], central(flat, c, h))
            for factor in _REFINE_FACTORS:
                if err < REL_TOL:
                    break
                err = min(err, _rel_err(a_flat[c], central(flat, c, h / factor)))
            worst = max(worst, err)
    return worst
