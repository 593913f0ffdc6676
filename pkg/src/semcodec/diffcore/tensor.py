"""Reverse-mode autodiff on numpy float64 arrays.

A Tensor wraps an ndarray and records, while gradients are enabled, the
closure that propagates its output gradient back to its parents.  backward()
topologically sorts the recorded graph and runs those closures once each.

Only the operations this package needs are implemented.  All of them are
exact float64 computations; none is allowed to produce NaN or Inf from
finite in-range inputs (checked on every op output, hard error on violation).
"""

import numpy as np

from ..errors import NumericError, ParameterError, ShapeError

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording inside its block."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled():
    return _GRAD_ENABLED


def _as_array(values):
    arr = np.asarray(values, dtype=np.float64)
    return arr


def _check_finite(arr, op_name):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op_name} produced a non-finite value")


class Tensor:
    """An ndarray plus an optional gradient and autodiff bookkeeping."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False):
        self.values = _as_array(values)
        if not np.all(np.isfinite(self.values)):
            raise NumericError("tensor constructed from non-finite values")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values)

    def detach(self):
        """A new leaf tensor sharing no graph history (values are copied)."""
        return Tensor(self.values.copy())

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    # -- backward pass --------------------------------------------------------

    def backward(self, seed=None):
        """Run reverse-mode accumulation from this tensor.

        seed defaults to ones; for a scalar loss that is the usual dL/dL = 1.
        """
        if not self.requires_grad:
            from ..errors import StateError

            raise StateError("backward called on a tensor with no recorded graph")
        if seed is None:
            seed = np.ones_like(self.values)
        else:
            seed = _as_array(seed)
            if seed.shape != self.values.shape:
                raise ShapeError("backward seed shape does not match tensor shape")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(seed)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- graph construction ---------------------------------------------------

    @staticmethod
    def _make(values, parents, backward, op_name):
        _check_finite(values, op_name)
        out = Tensor.__new__(Tensor)
        out.values = values
        out.grad = None
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(p for p in parents if p.requires_grad)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            if other.shape != self.shape:
                raise ShapeError(f"add: shapes {self.shape} and {other.shape} differ")
            vals = self.values + other.values

            def backward(g):
                self._accumulate(g)
                other._accumulate(g)

            return Tensor._make(vals, (self, other), backward, "add")
        c = float(other)
        vals = self.values + c

        def backward(g):
            self._accumulate(g)

        return Tensor._make(vals, (self,), backward, "add")

    __radd__ = __add__

    def __neg__(self):
        vals = -self.values

        def backward(g):
            self._accumulate(-g)

        return Tensor._make(vals, (self,), backward, "neg")

    def __sub__(self, other):
        if isinstance(other, Tensor):
            if other.shape != self.shape:
                raise ShapeError(f"sub: shapes {self.shape} and {other.shape} differ")
            vals = self.values - other.values

            def backward(g):
                self._accumulate(g)
                other._accumulate(-g)

            return Tensor._make(vals, (self, other), backward, "sub")
        return self.__add__(-float(other))

    def __rsub__(self, other):
        return (-self).__add__(float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            if other.shape != self.shape:
                raise ShapeError(f"mul: shapes {self.shape} and {other.shape} differ")
            vals = self.values * other.values
            a, b = self, other

            def backward(g):
                a._accumulate(g * b.values)
                b._accumulate(g * a.values)

            return Tensor._make(vals, (self, other), backward, "mul")
        c = float(other)
        vals = self.values * c

        def backward(g):
            self._accumulate(g * c)

        return Tensor._make(vals, (self,), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ParameterError("tensor/tensor division is not supported; multiply by a reciprocal")
        c = float(other)
        if c == 0.0:
            raise ParameterError("division by zero")
        return self.__mul__(1.0 / c)

    # -- elementwise functions -------------------------------------------------

    def exp(self):
        vals = np.exp(self.values)

        def backward(g):
            self._accumulate(g * vals)

        return Tensor._make(vals, (self,), backward, "exp")

    def log(self):
        if np.any(self.values <= 0.0):
            raise ParameterError("log requires strictly positive inputs")
        vals = np.log(self.values)
        src = self.values

        def backward(g):
            self._accumulate(g / src)

        return Tensor._make(vals, (self,), backward, "log")

    def sqrt(self):
        if np.any(self.values < 0.0):
            raise ParameterError("sqrt requires non-negative inputs")
        vals = np.sqrt(self.values)

        def backward(g):
            # Gradient uses the computed root; inputs of exactly zero get
            # gradient zero rather than an infinity.
            denom = np.where(vals > 0.0, 2.0 * vals, 1.0)
            self._accumulate(np.where(vals > 0.0, g / denom, 0.0))

        return Tensor._make(vals, (self,), backward, "sqrt")

    def abs(self):
        vals = np.abs(self.values)
        src = self.values

        def backward(g):
            self._accumulate(g * np.sign(src))

        return Tensor._make(vals, (self,), backward, "abs")

    def tanh(self):
        vals = np.tanh(self.values)

        def backward(g):
            self._accumulate(g * (1.0 - vals * vals))

        return Tensor._make(vals, (self,), backward, "tanh")

    def elu(self, alpha=1.0):
        """x for x > 0, alpha*(exp(x)-1) otherwise."""
        pos = self.values > 0.0
        ex = np.exp(np.minimum(self.values, 0.0))
        vals = np.where(pos, self.values, alpha * (ex - 1.0))

        def backward(g):
            self._accumulate(g * np.where(pos, 1.0, alpha * ex))

        return Tensor._make(vals, (self,), backward, "elu")

    # -- reductions -----------------------------------------------------------

    def sum(self):
        vals = np.asarray(self.values.sum())
        shape = self.values.shape

        def backward(g):
            self._accumulate(np.broadcast_to(g, shape))

        return Tensor._make(vals, (self,), backward, "sum")

    def mean(self):
        n = self.values.size
        if n == 0:
            raise ParameterError("mean of an empty tensor")
        vals = np.asarray(self.values.mean())
        shape = self.values.shape

        def backward(g):
            self._accumulate(np.broadcast_to(g / n, shape))

        return Tensor._make(vals, (self,), backward, "mean")

    # -- linear algebra ---------------------------------------------------------

    def matmul(self, other):
        if not isinstance(other, Tensor):
            raise ParameterError("matmul expects a Tensor operand")
        if self.values.ndim != 2 or other.values.ndim != 2:
            raise ShapeError("matmul operands must be 2-D")
        if self.values.shape[1] != other.values.shape[0]:
            raise ShapeError(
                f"matmul: inner dimensions {self.values.shape} @ {other.values.shape} do not agree"
            )
        vals = self.values @ other.values
        a, b = self, other

        def backward(g):
            a._accumulate(g @ b.values.T)
            b._accumulate(a.values.T @ g)

        return Tensor._make(vals, (self, other), backward, "matmul")

    __matmul__ = matmul

    # -- shape ops ---------------------------------------------------------------

    def reshape(self, *shape):
        vals = self.values.reshape(*shape)
        src_shape = self.values.shape

        def backward(g):
            self._accumulate(g.reshape(src_shape))

        return Tensor._make(vals, (self,), backward, "reshape")

    def transpose(self):
        if self.values.ndim != 2:
            raise ShapeError("transpose is defined for 2-D tensors")
        vals = self.values.T.copy()

        def backward(g):
            self._accumulate(g.T)

        return Tensor._make(vals, (self,), backward, "transpose")

    def slice_rows(self, start, stop):
        if self.values.ndim != 2:
            raise ShapeError("slice_rows is defined for 2-D tensors")
        rows = self.values.shape[0]
        if not (0 <= start < stop <= rows):
            raise ParameterError(f"slice_rows bounds [{start}, {stop}) invalid for {rows} rows")
        vals = self.values[start:stop].copy()
        shape = self.values.shape

        def backward(g):
            full = np.zeros(shape)
            full[start:stop] = g
            self._accumulate(full)

        return Tensor._make(vals, (self,), backward, "slice_rows")

    def gather_rows(self, index):
        """Select rows by an integer index array; output shape = index.shape + (cols,).

        Used to frame a signal: a 1-column tensor indexed by a frames-by-length
        matrix yields all analysis windows in one op.
        """
        idx = np.asarray(index)
        if not np.issubdtype(idx.dtype, np.integer):
            raise ParameterError("gather_rows expects an integer index array")
        if self.values.ndim != 1:
            raise ShapeError("gather_rows is defined for 1-D tensors")
        n = self.values.shape[0]
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ParameterError("gather_rows index out of range")
        vals = self.values[idx]

        def backward(g):
            full = np.zeros(n)
            np.add.at(full, idx, g)
            self._accumulate(full)

        return Tensor._make(vals, (self,), backward, "gather_rows")


def constant(values):
    """A tensor that never requires gradients (graph-stopping wrapper)."""
    return Tensor(values, requires_grad=False)


def parameter(values):
    """A leaf tensor that accumulates gradients."""
    return Tensor(values, requires_grad=True)
