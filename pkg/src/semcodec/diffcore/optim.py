"""Adam with bias correction over named parameter tensors."""

import numpy as np

from ..errors import ParameterError, StateError


class Adam:
    """Keeps first/second moment estimates per parameter, keyed by name.

    step() consumes the gradients accumulated by backward() and clears them;
    a parameter with no gradient at step time is a hard error, since it means
    the training graph silently dropped a weight.
    """

    def __init__(self, named_params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if not named_params:
            raise ParameterError("Adam needs at least one parameter")
        if not (0.0 < lr):
            raise ParameterError("learning rate must be positive")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ParameterError("betas must lie in [0, 1)")
        self.params = dict(named_params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {name: np.zeros_like(p.values) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.values) for name, p in self.params.items()}

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                raise StateError(f"parameter {name!r} has no gradient at optimizer step")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.values -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.grad = None

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    # -- checkpoint support ----------------------------------------------------

    def state_arrays(self):
        """Moments and step counter as flat named float64 arrays."""
        out = {"adam.t": np.asarray(float(self.t))}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays):
        t = arrays.get("adam.t")
        if t is None:
            raise StateError("optimizer state missing step counter")
        self.t = int(round(float(t)))
        for name, p in self.params.items():
            for prefix, dest in (("adam.m.", self.m), ("adam.v.", self.v)):
                key = prefix + name
                if key not in arrays:
                    raise StateError(f"optimizer state missing {key!r}")
                arr = arrays[key]
                if arr.shape != p.values.shape:
                    raise StateError(f"optimizer state {key!r} has shape {arr.shape}, "
                                     f"expected {p.values.shape}")
                dest[name] = arr.astype(np.float64).copy()
