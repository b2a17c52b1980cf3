"""Threshold gates for prunable entities.

Each prunable entity (a weight, a node, a filter, or a whole subnetwork)
carries a trainable scaling-factor vector ``alpha``.  The forward pass scales
the entity's output by ``alpha * I(alpha)`` where ``I`` is the hard mask

    I(a) = 1 if |a| > t else 0,

so an entity whose scaling factor has been driven under the threshold is
*exactly* zeroed.  The hard mask has zero derivative almost everywhere, so
the backward pass substitutes a smooth surrogate built from the first
derivative of the foothill function,

    f(x, beta) = tanh(beta*x/2) + (beta*x/2) * sech(beta*x/2)^2,

shifted to the threshold: m~(a) = (f(|a| - t, beta) + 1) / 2.  The surrogate
keeps gradient flowing to scaling factors on both sides of the threshold,
which is what lets a pruned entity rejuvenate during training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor, custom_grad

GRANULARITIES = ("weight", "node", "filter", "subnetwork")

DEFAULT_BETA = 5.0
# subnetwork gates use a coarser threshold than per-weight/node/filter gates
DEFAULT_THRESHOLD = {"weight": 1e-4, "node": 1e-4, "filter": 1e-4, "subnetwork": 1e-3}
DEFAULT_ALPHA_INIT = 1.0


def hard_mask(alpha, t: float):
    """0/1 indicator of |alpha| > t, elementwise."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return (np.abs(alpha) > t).astype(np.float64)


def _sech2(u):
    # 1/cosh^2 without overflow: sech(u) = 2 e^{-|u|} / (1 + e^{-2|u|})
    e = np.exp(-np.abs(u))
    s = 2.0 * e / (1.0 + e * e)
    return s * s


def foothill_fd(x, beta: float):
    """First derivative of the foothill function with unit shape parameter.

    Odd in x, asymptotically +-1, with a mild overshoot (max ~1.1996 near
    beta*x/2 ~ 1.2) before settling to the asymptote.
    """
    u = 0.5 * beta * np.asarray(x, dtype=np.float64)
    return np.tanh(u) + u * _sech2(u)


def foothill_fd_grad(x, beta: float):
    """Derivative of ``foothill_fd`` in x: (beta/2) sech^2(u) (2 - 2u tanh u)."""
    u = 0.5 * beta * np.asarray(x, dtype=np.float64)
    return 0.5 * beta * _sech2(u) * (2.0 - 2.0 * u * np.tanh(u))


def surrogate_mask(alpha, t: float, beta: float):
    """Smooth stand-in for the hard mask: 0.5 at |alpha| = t, -> 1 far above."""
    return 0.5 * (foothill_fd(np.abs(alpha) - t, beta) + 1.0)


def surrogate_mask_grad(alpha, t: float, beta: float):
    """d/d(alpha) of ``surrogate_mask``; odd in alpha, 0 at alpha = 0."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return 0.5 * foothill_fd_grad(np.abs(alpha) - t, beta) * np.sign(alpha)


@dataclass
class GateParam:
    """Scaling factor, threshold and surrogate sharpness for one entity.

    ``alpha`` has one component per prunable sub-entity (d = 1 for a whole
    subnetwork).  The hard mask is recomputed from ``alpha`` on every use, so
    there is no stale mask state to invalidate.
    """

    alpha: np.ndarray
    threshold: float
    beta: float
    granularity: str
    name: str = ""

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(-1)
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity {self.granularity!r}")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.beta <= 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    @classmethod
    def create(cls, granularity: str, dim: int, threshold: float | None = None,
               beta: float = DEFAULT_BETA, alpha_init: float = DEFAULT_ALPHA_INIT,
               name: str = "") -> "GateParam":
        if threshold is None:
            threshold = DEFAULT_THRESHOLD[granularity]
        return cls(np.full(dim, alpha_init), threshold, beta, granularity, name)

    @property
    def dim(self) -> int:
        return self.alpha.shape[0]

    def mask(self) -> np.ndarray:
        return hard_mask(self.alpha, self.threshold)

    def active_count(self) -> int:
        return int(self.mask().sum())


def _expand(v: np.ndarray, ndim: int, axis: int) -> np.ndarray:
    """Reshape a length-d vector so it broadcasts along ``axis`` of a rank-``ndim`` array."""
    shape = [1] * ndim
    shape[axis] = v.shape[0]
    return v.reshape(shape)


def _check_axis(x: Tensor, gate: GateParam, axis: int) -> int:
    if gate.dim == 1:
        return -1  # scalar gate scales the whole tensor
    if not (-x.data.ndim <= axis < x.data.ndim):
        raise ShapeError(f"gate axis {axis} out of range for shape {x.shape}")
    axis = axis % x.data.ndim
    if x.shape[axis] != gate.dim:
        raise ShapeError(
            f"gate dimension {gate.dim} does not match size {x.shape[axis]} "
            f"of axis {axis} in shape {x.shape}")
    return axis


def apply_gate(x: Tensor, gate: GateParam, axis: int = 0,
               alpha: Tensor | None = None) -> Tensor:
    """Scale ``x`` by ``alpha * I(alpha)`` along ``axis``.

    Forward is the exact hard product, so a masked component's output is
    exactly zero and an active one is exactly ``alpha * x``.  Backward treats
    the gated factor as the smooth ``alpha * m~(alpha)``: the gradient on
    alpha is ``m~ + alpha * m~'`` times the upstream-times-input sum, which
    stays nonzero below the threshold (rejuvenation).  The gradient on ``x``
    uses the exact forward scale.

    ``alpha`` is the tape node carrying ``gate.alpha``; pass the node returned
    by ``tape.param`` so the gradient lands in the registry.
    """
    if alpha is None:
        alpha = Tensor(gate.alpha)
    if alpha.shape != (gate.dim,):
        raise ShapeError(f"alpha node shape {alpha.shape} != gate dim ({gate.dim},)")
    axis = _check_axis(x, gate, axis)
    a = alpha.data
    m = hard_mask(a, gate.threshold)
    s = a * m
    xd = x.data
    if gate.dim == 1:
        out = s[0] * xd

        def rule(g):
            gcoef = float(np.sum(g * xd))
            dalpha = gcoef * (surrogate_mask(a, gate.threshold, gate.beta)
                              + a * surrogate_mask_grad(a, gate.threshold, gate.beta))
            return g * s[0], dalpha
    else:
        s_b = _expand(s, xd.ndim, axis)
        out = s_b * xd
        reduce_axes = tuple(i for i in range(xd.ndim) if i != axis)

        def rule(g):
            coeff = (surrogate_mask(a, gate.threshold, gate.beta)
                     + a * surrogate_mask_grad(a, gate.threshold, gate.beta))
            dalpha = np.sum(g * xd, axis=reduce_axes) * coeff
            return g * s_b, dalpha

    return custom_grad(out, (x, alpha), rule, op="apply_gate")


def apply_mask(x: Tensor, gate: GateParam, axis: int = 0,
               alpha: Tensor | None = None) -> Tensor:
    """Multiply ``x`` by the hard mask alone, with the surrogate backward.

    Used where the scaling factor enters elsewhere (recurrent cells scale the
    pre-activation and mask the post-activation).  Gradient on ``x`` is the
    exact mask; gradient on alpha is ``m~'(alpha)`` times the upstream-times-
    input sum.
    """
    if alpha is None:
        alpha = Tensor(gate.alpha)
    if alpha.shape != (gate.dim,):
        raise ShapeError(f"alpha node shape {alpha.shape} != gate dim ({gate.dim},)")
    axis = _check_axis(x, gate, axis)
    a = alpha.data
    m = hard_mask(a, gate.threshold)
    xd = x.data
    if gate.dim == 1:
        out = m[0] * xd

        def rule(g):
            dalpha = float(np.sum(g * xd)) * surrogate_mask_grad(a, gate.threshold, gate.beta)
            return g * m[0], dalpha
    else:
        m_b = _expand(m, xd.ndim, axis)
        out = m_b * xd
        reduce_axes = tuple(i for i in range(xd.ndim) if i != axis)

        def rule(g):
            dalpha = (np.sum(g * xd, axis=reduce_axes)
                      * surrogate_mask_grad(a, gate.threshold, gate.beta))
            return g * m_b, dalpha

    return custom_grad(out, (x, alpha), rule, op="apply_mask")
