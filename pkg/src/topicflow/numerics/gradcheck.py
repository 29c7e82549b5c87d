"""Compare reverse-mode gradients with central finite differences."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, gradient_of, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    worst: tuple[str, tuple] | None
    n_entries: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def __str__(self):
        flag = "pass" if self.passed else "FAIL"
        return (f"grad_check {flag}: max rel err {self.max_rel_error:.3e} "
                f"(tol {self.tolerance:.0e}, {self.n_entries} entries, worst {self.worst})")


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
               step: float = 1e-5, tolerance: float = 1e-4,
               floor: float = 1e-4) -> GradCheckReport:
    """Max relative error between backprop and central differences over every entry.

    The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``; ``floor``
    keeps entries whose true gradient is ~0 from dividing rounding noise by ~0.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = list(params)
    analytic = {p: g.copy() for p, g in gradient_of(loss_fn(), params).items()}
    worst, max_err, count = None, 0.0, 0
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = float(loss_fn().data)
                flat[i] = orig - step
                fm = float(loss_fn().data)
                flat[i] = orig
                num = (fp - fm) / (2.0 * step)
                ana = float(analytic[p].reshape(-1)[i])
                err = abs(ana - num) / max(abs(ana), abs(num), floor)
                count += 1
                if err > max_err:
                    max_err = err
                    worst = (p.name, np.unravel_index(i, p.shape))
    return GradCheckReport(max_err, tolerance, worst, count)
