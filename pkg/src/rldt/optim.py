"""Optimizers: Adam (default) and LAMB, with optional linear warmup."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .autodiff import ParamSet


@dataclass
class OptimizerState:
    algo: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_steps: int = 0
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.algo not in ("adam", "lamb"):
            raise ValueError(f"unknown optimizer {self.algo!r}")
        if self.lr < 0.0 or self.weight_decay < 0.0:
            raise ValueError("lr and weight_decay must be nonnegative")

    def effective_lr(self) -> float:
        """Learning rate after linear warmup at the current step count."""
        if self.warmup_steps > 0:
            return self.lr * min(1.0, self.step_count / self.warmup_steps)
        return self.lr

    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "m": {k: a.copy() for k, a in self.m.items()},
            "v": {k: a.copy() for k, a in self.v.items()},
        }

    def load_state_dict(self, state: dict):
        self.step_count = state["step_count"]
        self.m = {k: a.copy() for k, a in state["m"].items()}
        self.v = {k: a.copy() for k, a in state["v"].items()}


def _check_finite(params: ParamSet):
    # a NaN or inf anywhere makes the sum non-finite; scan per parameter
    # only when the cheap whole-set check trips, to name the offender
    if params.flat_grad is not None and np.isfinite(params.flat_grad.sum()):
        return
    for p in params:
        if not np.isfinite(p.grad.sum()):
            raise FloatingPointError(f"non-finite gradient in parameter {p.name!r}")


def optimizer_step(opt: OptimizerState, params: ParamSet):
    """Apply one update from the accumulated gradients (grads are kept)."""
    _check_finite(params)
    opt.step_count += 1
    lr = opt.effective_lr()
    if opt.algo == "adam" and params.flat_data is not None:
        if "__flat__" not in opt.m:
            opt.m["__flat__"] = np.zeros(params.flat_data.size)
            opt.v["__flat__"] = np.zeros(params.flat_data.size)
        K.adam_update(params.flat_data, params.flat_grad, opt.m["__flat__"],
                      opt.v["__flat__"], opt.step_count, lr, opt.beta1,
                      opt.beta2, opt.eps, opt.weight_decay)
        return
    for p in params:
        if p.name not in opt.m:
            opt.m[p.name] = np.zeros(p.data.size)
            opt.v[p.name] = np.zeros(p.data.size)
        if opt.algo == "adam":
            K.adam_update(p.data.ravel(), p.grad.ravel(), opt.m[p.name],
                          opt.v[p.name], opt.step_count, lr, opt.beta1,
                          opt.beta2, opt.eps, opt.weight_decay)
        else:
            _lamb_update(opt, p, lr)


def _lamb_update(opt: OptimizerState, p, lr: float):
    """LAMB: Adam direction scaled by the layer-wise trust ratio."""
    g = p.grad.ravel()
    m = opt.m[p.name]
    v = opt.v[p.name]
    m *= opt.beta1
    m += (1.0 - opt.beta1) * g
    v *= opt.beta2
    v += (1.0 - opt.beta2) * g * g
    mhat = m / (1.0 - opt.beta1 ** opt.step_count)
    vhat = v / (1.0 - opt.beta2 ** opt.step_count)
    update = mhat / (np.sqrt(vhat) + opt.eps)
    if opt.weight_decay != 0.0:
        update = update + opt.weight_decay * p.data.ravel()
    w_norm = np.linalg.norm(p.data)
    u_norm = np.linalg.norm(update)
    trust = w_norm / u_norm if w_norm > 0.0 and u_norm > 0.0 else 1.0
    p.data.ravel()[...] -= lr * trust * update
