"""One-sided regularizations of grid functions.

Two families are provided:

* sup/inf convolutions with the penalty ``|y| / eps``, which bracket any
  function of linear growth from above/below and are ``1/eps``-Lipschitz;
* convolutions with a bump kernel shifted into one orthant, which bracket
  increasing functions and satisfy an exact shift identity between the two
  sides.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .monotone_core import GridFunction

__all__ = [
    "bump",
    "MollifierKernel",
    "RegularizedFunction",
    "sup_convolution",
    "inf_convolution",
    "one_sided_mollify",
    "regularize",
    "convolve_values",
]


def bump(z) -> np.ndarray:
    """Standard bump ``exp(-1/(1-z^2))`` on ``(-1, 1)``, zero outside (unnormalized)."""
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    inside = np.abs(z) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - z[inside] ** 2))
    return out


@dataclass(frozen=True)
class MollifierKernel:
    """Bump kernel of half-width ``eps`` shifted to one side of the origin.

    ``side="lower"`` is supported in ``(0, 2 eps)^d`` and averages values to
    the lower-left of a point; ``side="upper"`` is its mirror image in
    ``(-2 eps, 0)^d``.
    """

    eps: float
    side: str = "lower"

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("kernel width must be positive")
        if self.side not in ("upper", "lower"):
            raise ValueError(f"side must be 'upper' or 'lower', got {self.side!r}")

    def steps(self, h: float) -> int:
        """Number of cells spanned by the support ``2 eps`` on spacing ``h``."""
        k = int(round(2.0 * self.eps / h))
        if k < 2:
            raise ValueError(f"kernel width 2*eps={2 * self.eps:g} is narrower than two cells of size {h:g}")
        return k

    def weights(self, h: float) -> np.ndarray:
        """Discrete 1-D weights ``w_0..w_K`` summing to one, symmetric in index."""
        k = self.steps(h)
        z = (np.arange(k + 1) - 0.5 * k) / (0.5 * k)
        w = bump(z)
        w = 0.5 * (w + w[::-1])
        return w / w.sum()

    def effective_eps(self, h: float) -> float:
        return 0.5 * self.steps(h) * h


@dataclass(frozen=True)
class RegularizedFunction:
    source: GridFunction
    method: str
    eps: float
    result: GridFunction


def _growth_constant(phi: GridFunction) -> float:
    pts = phi.grid.points()
    radius = np.linalg.norm(pts, axis=1)
    vals = np.abs(phi.components().reshape(-1, phi.ncomp)).max(axis=1)
    return float(np.max(vals / (1.0 + radius)))


def _shifted(values: np.ndarray, offset, dim: int) -> np.ndarray:
    """``out[i] = values[clamp(i - offset)]`` along the first ``dim`` axes."""
    out = values
    for j, k in enumerate(offset):
        if k == 0:
            continue
        n = values.shape[j]
        idx = np.clip(np.arange(n) - k, 0, n - 1)
        out = np.take(out, idx, axis=j)
    return out


def _convolution(phi: GridFunction, eps: float, sign: float) -> GridFunction:
    if eps <= 0:
        raise ValueError("eps must be positive")
    growth = _growth_constant(phi)
    if eps * growth >= 1.0:
        raise ValueError(
            f"eps={eps:g} too large for growth constant M={growth:g}; the supremum diverges unless eps < 1/M"
        )
    grid = phi.grid
    vals = phi.components()
    spread = float(np.max(vals.max(axis=tuple(range(grid.dim))) - vals.min(axis=tuple(range(grid.dim)))))
    # offsets farther than eps * (range of phi) are beaten by y = 0
    radius = eps * spread
    h = np.asarray(grid.spacing)
    kmax = np.minimum(np.floor(radius / h + 1e-12).astype(int), np.asarray(grid.shape) - 1)
    best = vals.copy()
    for offset in itertools.product(*[range(-k, k + 1) for k in kmax]):
        dist = float(np.linalg.norm(np.asarray(offset) * h))
        if dist == 0.0 or dist > radius + 1e-12:
            continue
        cand = _shifted(vals, offset, grid.dim) - sign * dist / eps
        best = np.maximum(best, cand) if sign > 0 else np.minimum(best, cand)
    if phi.is_scalar:
        best = best[..., 0]
    return phi.with_values(best)


def sup_convolution(phi: GridFunction, eps: float) -> GridFunction:
    """``sup_y { phi(x - y) - |y| / eps }`` over grid offsets ``y``.

    Samples outside the grid take the value of the nearest boundary node.
    Vector-valued functions are regularized component by component.
    """
    return _convolution(phi, eps, +1.0)


def inf_convolution(phi: GridFunction, eps: float) -> GridFunction:
    """``inf_y { phi(x - y) + |y| / eps }``; the lower counterpart of :func:`sup_convolution`."""
    return _convolution(phi, eps, -1.0)


def convolve_values(values: np.ndarray, dim: int, spacing, kernel: MollifierKernel) -> np.ndarray:
    """Apply the one-sided kernel along each of the first ``dim`` axes of ``values``.

    The lower side computes ``sum_k w_k v[i - k]`` and the upper side
    ``sum_k w_k v[i + K - k]`` with the same accumulation order, so the upper
    result at ``i - K`` reproduces the lower result at ``i`` bit for bit.
    """
    out = np.asarray(values, dtype=float)
    for j in range(dim):
        w = kernel.weights(spacing[j])
        big_k = len(w) - 1
        n = out.shape[j]
        base = np.arange(n)
        acc = np.zeros_like(out)
        for k, wk in enumerate(w):
            if kernel.side == "lower":
                idx = np.clip(base - k, 0, n - 1)
            else:
                idx = np.clip(base + big_k - k, 0, n - 1)
            acc = acc + wk * np.take(out, idx, axis=j)
        out = acc
    return out


def one_sided_mollify(phi: GridFunction, kernel: MollifierKernel) -> GridFunction:
    """Convolve ``phi`` with a one-sided bump kernel (tensor product over axes).

    For increasing ``phi`` the lower side stays below ``phi`` and the upper
    side above it. Raises if ``2 * eps`` spans fewer than two cells.
    """
    return phi.with_values(convolve_values(phi.values, phi.grid.dim, phi.grid.spacing, kernel))


def regularize(phi: GridFunction, method: str, eps: float) -> RegularizedFunction:
    if method == "sup_conv":
        res = sup_convolution(phi, eps)
    elif method == "inf_conv":
        res = inf_convolution(phi, eps)
    elif method == "mollify_upper":
        res = one_sided_mollify(phi, MollifierKernel(eps, "upper"))
    elif method == "mollify_lower":
        res = one_sided_mollify(phi, MollifierKernel(eps, "lower"))
    else:
        raise ValueError(f"unknown regularization method {method!r}")
    return RegularizedFunction(phi, method, eps, res)
