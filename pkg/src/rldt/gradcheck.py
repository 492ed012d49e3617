"""Finite-difference verification of the recorded gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Param, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    n_checked: int

    def __str__(self):
        return (f"grad check: max rel error {self.max_rel_error:.3e} "
                f"at {self.worst_param} over {self.n_checked} scalars")


def grad_check(loss_fn, params, h: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of loss_fn against central differences.

    loss_fn rebuilds the loss from the current parameter values and returns a
    scalar Tensor; it must be deterministic (dropout disabled).  params is an
    iterable of Param whose gradients the loss is supposed to produce.
    Relative error per scalar is |a - n| / max(1e-12, |a| + |n|).
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    # keyed by identity: separate ParamSets may reuse parameter names
    analytic = {id(p): p.grad.copy() for p in params}

    worst = 0.0
    worst_name = "<none>"
    n_checked = 0
    for p in params:
        flat = p.data.ravel()
        a_flat = analytic[id(p)].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(loss_fn().data)
            flat[i] = orig - h
            f_minus = float(loss_fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = a_flat[i]
            rel = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
            n_checked += 1
            if rel > worst:
                worst = rel
                worst_name = f"{p.name}[{i}]"
    for p in params:
        p.zero_grad()
    return GradCheckReport(worst, worst_name, n_checked)
