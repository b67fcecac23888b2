"""Finite-difference checks of every analytic backward rule."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import stitch as S
from . import tensor as T
from .network import build_model
from .tensor import Tensor, finite_difference_grad, relative_error

STEP = 1e-6
TOLERANCE = 1e-5


@dataclass
class SuiteResult:
    name: str
    max_rel_error: float
    n_checked: int

    def passed(self, tol: float = TOLERANCE) -> bool:
        return self.max_rel_error <= tol


def _projection_check(name: str, op: Callable[..., Tensor], inputs: list[Tensor], rng, h: float = STEP) -> SuiteResult:
    """Compare tape gradients of ``sum(w * op(*inputs))`` with central differences."""
    w = rng.standard_normal(op(*inputs).shape)

    def loss() -> float:
        return float(np.sum(w * op(*inputs).data))

    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    with T.Tape() as tape:
        out = op(*inputs)
        scalar = T.weighted_sum(out, w)
    tape.backward(scalar)
    worst, count = 0.0, 0
    for t in inputs:
        numeric = finite_difference_grad(loss, t, h)
        worst = max(worst, relative_error(t.grad, numeric))
        count += t.size
    return SuiteResult(name, worst, count)


def check_stitch(rng, configs: int = 1, shape=(1, 2, 4, 4), h: float = STEP) -> SuiteResult:
    """Analytic stitch backward against finite differences on random units and maps."""
    worst, count = 0.0, 0
    for _ in range(configs):
        alpha = rng.uniform(-1.5, 1.5, size=4)
        x_r = rng.standard_normal(shape)
        x_d = rng.standard_normal(shape)
        w_r = rng.standard_normal(shape)
        w_d = rng.standard_normal(shape)

        def loss() -> float:
            o_r, o_d = S.stitch_forward(x_r, x_d, alpha)
            return float(np.sum(w_r * o_r) + np.sum(w_d * o_d))

        g_xr, g_xd, g_alpha = S.stitch_backward(w_r, w_d, x_r, x_d, alpha)
        for analytic, target in ((g_xr, x_r), (g_xd, x_d), (g_alpha, alpha)):
            numeric = finite_difference_grad(loss, Tensor(target), h)
            worst = max(worst, relative_error(analytic, numeric))
            count += target.size
    return SuiteResult("cross_stitch", worst, count)


def check_separable_conv(rng) -> SuiteResult:
    inputs = [
        Tensor(rng.standard_normal((2, 3, 6, 6))),
        Tensor(rng.standard_normal((3, 3, 3))),
        Tensor(rng.standard_normal((4, 3))),
        Tensor(rng.standard_normal(4)),
    ]
    return _projection_check("separable_conv2d", T.separable_conv2d, inputs, rng)


def check_maxpool(rng) -> SuiteResult:
    return _projection_check("maxpool2d", T.maxpool2d, [Tensor(rng.standard_normal((2, 3, 4, 4)))], rng)


def check_relu(rng) -> SuiteResult:
    x = rng.uniform(0.1, 2.0, size=(3, 7)) * rng.choice([-1.0, 1.0], size=(3, 7))
    return _projection_check("relu", T.relu, [Tensor(x)], rng)


def check_dense(rng) -> SuiteResult:
    inputs = [
        Tensor(rng.standard_normal((2, 3))),
        Tensor(rng.standard_normal((4, 3))),
        Tensor(rng.standard_normal(4)),
    ]
    return _projection_check("dense", T.dense, inputs, rng)


def check_cross_entropy(rng) -> SuiteResult:
    logits = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    labels = rng.integers(0, 2, size=4)
    with T.Tape() as tape:
        loss = T.softmax_cross_entropy(logits, labels)
    tape.backward(loss)
    numeric = finite_difference_grad(lambda: T.softmax_cross_entropy(logits, labels).item(), logits)
    return SuiteResult("softmax_cross_entropy", relative_error(logits.grad, numeric), logits.size)


def check_end_to_end(rng, n_params: int = 25, input_size: int = 16, batch: int = 2, mode: str = "all",
                     h: float = STEP) -> SuiteResult:
    """Whole-model check on ``n_params`` sampled scalars, every stitch alpha included.

    Analytic gradients come from the float64 tape.  The central differences
    run on an extended-precision copy of the model, so parameters with very
    small gradients are not swamped by float64 roundoff.
    """
    model = build_model(mode, input_size, seed=int(rng.integers(2**31)))
    for unit in model.stitch_units:
        unit.set(*(np.array([0.9, 0.1, 0.1, 0.9]) + rng.uniform(-0.2, 0.2, size=4)))
    spatial = rng.standard_normal((batch, 3, input_size, input_size))
    freq = rng.standard_normal((batch, 3, input_size, input_size))
    labels = np.arange(batch) % 2

    model.zero_grad()
    with T.Tape() as tape:
        value = T.softmax_cross_entropy(model(spatial, freq), labels)
    tape.backward(value)

    oracle = build_model(mode, input_size, seed=model.seed)
    for p, q in zip(model.parameters().values(), oracle.parameters().values()):
        q.data = p.data.astype(np.longdouble)
    spatial_ld = spatial.astype(np.longdouble)
    freq_ld = freq.astype(np.longdouble)

    def loss():
        return T.softmax_cross_entropy(oracle(spatial_ld, freq_ld), labels).data[0]

    params = model.parameters()
    oracle_params = oracle.parameters()
    picks = [(name, i) for name in params if model.is_stitch_param(name) for i in range(4)]
    others = [name for name in params if not model.is_stitch_param(name)]
    while len(picks) < n_params:
        name = others[int(rng.integers(len(others)))]
        pick = (name, int(rng.integers(params[name].size)))
        if pick not in picks:
            picks.append(pick)

    worst = 0.0
    for name, i in picks[:n_params]:
        numeric = finite_difference_grad(loss, oracle_params[name], h, indices=[i]).reshape(-1)[i]
        grad = params[name].grad
        analytic = 0.0 if grad is None else grad.reshape(-1)[i]
        worst = max(worst, relative_error(analytic, numeric))
    return SuiteResult("end_to_end", worst, min(len(picks), n_params))


def run_all(seed: int = 0) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    return [
        check_stitch(rng, configs=10),
        check_separable_conv(rng),
        check_maxpool(rng),
        check_relu(rng),
        check_dense(rng),
        check_cross_entropy(rng),
        check_end_to_end(rng),
    ]
