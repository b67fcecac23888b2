"""Cross-stitch units: a learned 2 x 2 mix of two same-shaped activation maps.

At every location the mixed maps are::

    [x'_R]   [a_RR  a_RD] [x_R]
    [x'_D] = [a_DR  a_DD] [x_D]

with the same four scalars shared by all batch, channel and spatial
positions.  The gradient with respect to the inputs uses the transposed
matrix; each alpha gradient sums the product of an output gradient and an
input over every location.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, record_multi

SAME_BRANCH_INIT = 0.9
CROSS_BRANCH_INIT = 0.1

ALPHA_NAMES = ("rr", "rd", "dr", "dd")


class CrossStitchUnit:
    """Four mixing scalars stored as one [4] tensor ordered (rr, rd, dr, dd)."""

    def __init__(self, rr: float, rd: float, dr: float, dd: float, name: str = "stitch"):
        self.alpha = Tensor([rr, rd, dr, dd], requires_grad=True, name=name)

    @property
    def alpha_rr(self) -> float:
        return float(self.alpha.data[0])

    @property
    def alpha_rd(self) -> float:
        return float(self.alpha.data[1])

    @property
    def alpha_dr(self) -> float:
        return float(self.alpha.data[2])

    @property
    def alpha_dd(self) -> float:
        return float(self.alpha.data[3])

    @property
    def matrix(self) -> np.ndarray:
        return self.alpha.data.reshape(2, 2).copy()

    def set(self, rr: float, rd: float, dr: float, dd: float) -> None:
        self.alpha.data[:] = (rr, rd, dr, dd)

    def __repr__(self) -> str:
        rr, rd, dr, dd = self.alpha.data
        return f"CrossStitchUnit(rr={rr:.6g}, rd={rd:.6g}, dr={dr:.6g}, dd={dd:.6g})"


def init_unit(name: str = "stitch") -> CrossStitchUnit:
    """Unit with 0.9 on the same-branch weights and 0.1 across, rows summing to 1."""
    return CrossStitchUnit(SAME_BRANCH_INIT, CROSS_BRANCH_INIT, CROSS_BRANCH_INIT, SAME_BRANCH_INIT, name=name)


def _check(x_r, x_d):
    if np.shape(x_r) != np.shape(x_d):
        raise ShapeError(f"cross-stitch: branch maps differ in shape, {np.shape(x_r)} vs {np.shape(x_d)}")


def stitch_forward(x_r: np.ndarray, x_d: np.ndarray, alpha) -> tuple[np.ndarray, np.ndarray]:
    """Mix two arrays with ``alpha`` = (rr, rd, dr, dd) or a :class:`CrossStitchUnit`."""
    _check(x_r, x_d)
    rr, rd, dr, dd = _alphas(alpha)
    return rr * x_r + rd * x_d, dr * x_r + dd * x_d


def stitch_backward(g_r, g_d, x_r, x_d, alpha) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the loss with respect to both inputs and the four alphas.

    ``g_r``/``g_d`` are the loss gradients at the mixed outputs.  Returns
    ``(dL/dx_R, dL/dx_D, dL/dalpha)`` with the alpha gradient ordered
    (rr, rd, dr, dd).
    """
    _check(x_r, x_d)
    _check(g_r, x_r)
    _check(g_d, x_d)
    rr, rd, dr, dd = _alphas(alpha)
    dx_r = rr * g_r + dr * g_d
    dx_d = rd * g_r + dd * g_d
    dalpha = np.array(
        [np.sum(g_r * x_r), np.sum(g_r * x_d), np.sum(g_d * x_r), np.sum(g_d * x_d)]
    )
    return dx_r, dx_d, dalpha


def _alphas(alpha) -> np.ndarray:
    if isinstance(alpha, CrossStitchUnit):
        return alpha.alpha.data
    a = np.asarray(alpha, dtype=np.float64).reshape(-1)
    if a.size != 4:
        raise ShapeError(f"cross-stitch: need 4 alpha values, got {a.size}")
    return a


def stitch(x_r: Tensor, x_d: Tensor, unit: CrossStitchUnit) -> tuple[Tensor, Tensor]:
    """Tape-recorded cross-stitch; the backward rule is :func:`stitch_backward`."""
    out_r, out_d = stitch_forward(x_r.data, x_d.data, unit)
    t_r, t_d = Tensor(out_r), Tensor(out_d)

    def rule(g_r, g_d):
        return stitch_backward(g_r, g_d, x_r.data, x_d.data, unit)

    record_multi((x_r, x_d, unit.alpha), (t_r, t_d), rule)
    return t_r, t_d
