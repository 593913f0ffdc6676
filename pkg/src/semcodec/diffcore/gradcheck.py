"""Central-difference verification of analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError
from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    """Outcome of one finite-difference sweep.

    max_rel_error is over all probed coordinates; failures lists
    (input name, coordinate tuple, relative error) for every coordinate
    whose relative error exceeded the tolerance.
    """

    max_rel_error: float
    checked: int
    tolerance: float
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures


def _rel_error(a, b):
    # Relative against the larger magnitude, with an absolute floor so
    # near-zero pairs compare on an absolute scale instead of blowing up.
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def grad_check(f, inputs, h=1e-6, tol=1e-4, coords_per_input=None, seed=0):
    """Compare f's analytic gradients against central differences.

    f maps the dict of named input Tensors to a scalar Tensor and must be
    deterministic.  Every coordinate of every input is probed unless
    coords_per_input caps the count, in which case a seeded subset is drawn
    per input.  Inputs are restored to their original values afterwards.
    """
    if h <= 0.0 or tol <= 0.0:
        raise ParameterError("step size and tolerance must be positive")
    if not inputs:
        raise ParameterError("grad_check needs at least one input")
    for name, t in inputs.items():
        if not isinstance(t, Tensor) or not t.requires_grad:
            raise ParameterError(f"grad_check input {name!r} must be a Tensor requiring grad")
        t.grad = None

    out = f(inputs)
    if out.values.shape != ():
        raise ParameterError("grad_check target must return a scalar tensor")
    out.backward()
    analytic = {}
    for name, t in inputs.items():
        analytic[name] = np.zeros_like(t.values) if t.grad is None else t.grad.copy()
        t.grad = None

    rng = np.random.default_rng(seed)
    failures = []
    max_rel = 0.0
    checked = 0
    for name, t in inputs.items():
        flat = t.values.reshape(-1)
        size = flat.size
        if coords_per_input is None or coords_per_input >= size:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=coords_per_input, replace=False)
        for c in coords:
            orig = flat[c]
            with no_grad():
                flat[c] = orig + h
                plus = float(f(inputs).values)
                flat[c] = orig - h
                minus = float(f(inputs).values)
            flat[c] = orig
            fd = (plus - minus) / (2.0 * h)
            ana = float(analytic[name].reshape(-1)[c])
            rel = _rel_error(fd, ana)
            max_rel = max(max_rel, rel)
            checked += 1
            if rel > tol:
                failures.append((name, np.unravel_index(int(c), t.values.shape), rel))
    return GradCheckReport(max_rel_error=max_rel, checked=checked, tolerance=tol,
                           failures=failures)
