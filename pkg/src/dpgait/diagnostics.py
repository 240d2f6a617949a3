"""Finite-difference gradient checks for every layer and for a shrunken model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .dpg_model import DpgConfig, DpgModel, forward, init_model, loss_and_grads
from .tensor_core import GradCheckReport, Tensor, grad_check

# small enough for a full finite-difference sweep over every parameter
REDUCED_CONFIG = dict(input_side=16, conv_channels=(2, 3, 4), fc_widths=(8, 4, 2, 2))


def _away_from_zero(rng, shape, floor=0.1):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(floor, 1.0, size=shape)


def _dropout_case(x):
    return tc.dropout(x, 0.3, "train", np.random.default_rng(1234))


_MSE_TARGET = np.linspace(-1.0, 1.0, 5)

# name -> (function of tensors, sampler rng -> list of arrays)
OP_CASES = {
    "conv2d": (tc.conv2d, lambda r: [r.standard_normal((5, 5, 2)), r.standard_normal((3, 2, 3, 3)),
                                     r.standard_normal(3)]),
    "conv2d_batched": (tc.conv2d, lambda r: [r.standard_normal((2, 4, 6, 3)),
                                             r.standard_normal((2, 3, 3, 3)), r.standard_normal(2)]),
    "maxpool2d": (tc.maxpool2d, lambda r: [r.standard_normal((2, 4, 6, 3))]),
    "relu": (tc.relu, lambda r: [_away_from_zero(r, (4, 5))]),
    "linear": (tc.linear, lambda r: [r.standard_normal(3), r.standard_normal((4, 3)),
                                     r.standard_normal(4)]),
    "linear_batched": (tc.linear, lambda r: [r.standard_normal((3, 5)), r.standard_normal((2, 5)),
                                             r.standard_normal(2)]),
    "dropout": (_dropout_case, lambda r: [r.standard_normal((6, 7))]),
    "flatten": (lambda x: tc.flatten(x, 1), lambda r: [r.standard_normal((2, 3, 4, 2))]),
    "concat": (tc.concat, lambda r: [r.standard_normal(3), r.standard_normal(4)]),
    "mse_loss": (lambda p: tc.mse_loss(p, _MSE_TARGET), lambda r: [r.standard_normal(5)]),
}


def check_op(name: str, seed: int, epsilon: float = 1e-6, tolerance: float = 1e-4) -> GradCheckReport:
    fn, sampler = OP_CASES[name]
    return grad_check(fn, sampler, epsilon, tolerance, seed=seed)


def model_grad_check(seed: int = 0, epsilon: float = 1e-6, tolerance: float = 1e-3,
                     batch: int = 2, **overrides) -> GradCheckReport:
    """Check d(MSE)/d(theta) of a reduced-size model against central differences."""
    cfg = DpgConfig(**{**REDUCED_CONFIG, "seed": seed, **overrides})
    names = [n for n, _ in cfg.parameter_shapes()]
    side = cfg.input_side

    def draw(rng):
        cfg.seed = int(rng.integers(2**31))
        params = init_model(cfg, dtype=np.float64).params
        for n in names:
            if n.endswith(".bias"):
                params[n].data[...] = rng.uniform(0.05, 0.5, params[n].shape)
        images = (rng.uniform(0, 255, (batch, side, side, 3)),
                  rng.uniform(0, 255, (batch, side, side, 3)))
        return params, images, rng.standard_normal(batch)

    def sampler(rng):
        # zero biases leave dead units exactly on a ReLU kink, and tiny layers
        # die easily; redraw until every parameter block carries gradient
        for _ in range(100):
            params, sampler.images, sampler.targets = draw(rng)
            sampler.mask_seed = int(rng.integers(2**31))
            model = DpgModel(cfg, params)
            _, grads, _ = loss_and_grads(model, *sampler.images, sampler.targets, "train",
                                         np.random.default_rng(sampler.mask_seed))
            if all(np.any(g != 0) for g in grads.values()):
                break
        return [params[n].data for n in names]

    def fn(*params: Tensor) -> Tensor:
        model = DpgModel(cfg, dict(zip(names, params)))
        pred = forward(model, *sampler.images, mode="train",
                       rng_state=np.random.default_rng(sampler.mask_seed))
        return tc.mse_loss(pred, sampler.targets)

    return grad_check(fn, sampler, epsilon, tolerance, seed=seed)


@dataclass
class SuiteResult:
    name: str
    seed: int
    report: GradCheckReport


def run_suite(seeds: int = 20, epsilon: float = 1e-6, op_tolerance: float = 1e-4,
              model_tolerance: float = 1e-3, model_seeds: int = 3) -> list[SuiteResult]:
    results = []
    for name in OP_CASES:
        for s in range(seeds):
            results.append(SuiteResult(name, s, check_op(name, s, epsilon, op_tolerance)))
    for s in range(model_seeds):
        results.append(SuiteResult("dpg_model_reduced", s, model_grad_check(s, epsilon, model_tolerance)))
    return results
