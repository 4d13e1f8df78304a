"""Minimal reverse-mode autodiff over numpy arrays, with Adam and Glorot init.

Only the operations the embedding models need are implemented. Every op
records a backward closure; Tensor.backward() runs them in reverse
topological order. Constants (requires_grad=False leaves) are skipped, so
mixing parameters with plain arrays is cheap. Gradient buffers for
intermediates are allocated lazily on first accumulation.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _scatter_rows(indices: np.ndarray, values: np.ndarray, n_rows: int) -> np.ndarray:
    """Sum `values` rows into an (n_rows, width) array at `indices`.

    Flat bincount; an order of magnitude faster than np.add.at.
    """
    if values.ndim == 1:
        return np.bincount(indices, weights=values, minlength=n_rows)
    width = values.shape[1]
    flat = (indices[:, None] * width + np.arange(width)).ravel()
    return np.bincount(flat, weights=values.ravel(),
                       minlength=n_rows * width).reshape(n_rows, width)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        # leaf parameters get an eager buffer (the optimizer pokes at it);
        # op outputs allocate on first accumulation instead
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def _child(self, data, parents, backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = np.asarray(data, dtype=np.float64)
        out.requires_grad = True
        out.grad = None
        out._parents = parents
        out._backward = backward
        return out

    def _add_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g)  # copy: g may alias a child's buffer
        else:
            self.grad += g

    # -- graph walk --------------------------------------------------------

    def backward(self):
        self._add_grad(np.ones_like(self.data))
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        data = self.data + other.data
        if not (self.requires_grad or other.requires_grad):
            return Tensor(data)

        def backward(g):
            if self.requires_grad:
                self._add_grad(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._add_grad(_unbroadcast(g, other.data.shape))

        return self._child(data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        data = self.data - other.data
        if not (self.requires_grad or other.requires_grad):
            return Tensor(data)

        def backward(g):
            if self.requires_grad:
                self._add_grad(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._add_grad(-_unbroadcast(g, other.data.shape))

        return self._child(data, (self, other), backward)

    def __mul__(self, other):
        other = as_tensor(other)
        data = self.data * other.data
        if not (self.requires_grad or other.requires_grad):
            return Tensor(data)

        def backward(g):
            if self.requires_grad:
                self._add_grad(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._add_grad(_unbroadcast(g * self.data, other.data.shape))

        return self._child(data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        data = self.data / other.data
        if not (self.requires_grad or other.requires_grad):
            return Tensor(data)

        def backward(g):
            if self.requires_grad:
                self._add_grad(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._add_grad(_unbroadcast(-g * self.data / (other.data ** 2),
                                             other.data.shape))

        return self._child(data, (self, other), backward)

    def __neg__(self):
        if not self.requires_grad:
            return Tensor(-self.data)

        def backward(g):
            self._add_grad(-g)

        return self._child(-self.data, (self,), backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        data = self.data @ other.data
        if not (self.requires_grad or other.requires_grad):
            return Tensor(data)

        def backward(g):
            if self.requires_grad:
                self._add_grad(g @ other.data.T)
            if other.requires_grad:
                other._add_grad(self.data.T @ g)

        return self._child(data, (self, other), backward)

    # -- shape -------------------------------------------------------------

    def transpose(self):
        if not self.requires_grad:
            return Tensor(self.data.T)

        def backward(g):
            self._add_grad(g.T)

        return self._child(self.data.T, (self,), backward)

    def reshape(self, shape):
        if not self.requires_grad:
            return Tensor(self.data.reshape(shape))
        orig = self.data.shape

        def backward(g):
            self._add_grad(g.reshape(orig))

        return self._child(self.data.reshape(shape), (self,), backward)

    def take(self, indices):
        """Gather along axis 0."""
        indices = np.asarray(indices)
        data = self.data[indices]
        if not self.requires_grad:
            return Tensor(data)
        n_rows = self.data.shape[0]

        def backward(g):
            self._add_grad(_scatter_rows(indices, g, n_rows))

        return self._child(data, (self,), backward)

    @staticmethod
    def concat(tensors: list["Tensor"], axis: int = 1) -> "Tensor":
        data = np.concatenate([t.data for t in tensors], axis=axis)
        if not any(t.requires_grad for t in tensors):
            return Tensor(data)
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * g.ndim
                    sl[axis] = slice(start, stop)
                    t._add_grad(g[tuple(sl)])

        out = tensors[0]._child(data, tuple(tensors), backward)
        return out

    # -- reductions and elementwise ----------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        data = self.data.sum(axis=axis, keepdims=keepdims)
        if not self.requires_grad:
            return Tensor(data)
        shape = self.data.shape

        def backward(g):
            if axis is None:
                self._add_grad(np.broadcast_to(g, shape))
            elif keepdims:
                self._add_grad(np.broadcast_to(g, shape))
            else:
                self._add_grad(np.broadcast_to(np.expand_dims(g, axis), shape))

        return self._child(data, (self,), backward)

    def exp(self):
        data = np.exp(self.data)
        if not self.requires_grad:
            return Tensor(data)

        def backward(g):
            self._add_grad(g * data)

        return self._child(data, (self,), backward)

    def log(self):
        data = np.log(self.data)
        if not self.requires_grad:
            return Tensor(data)

        def backward(g):
            self._add_grad(g / self.data)

        return self._child(data, (self,), backward)

    def sqrt(self):
        data = np.sqrt(self.data)
        if not self.requires_grad:
            return Tensor(data)

        def backward(g):
            # clamp keeps the gradient finite at exactly 0; Adam's scale-free
            # update bounds the resulting step
            self._add_grad(g * 0.5 / np.maximum(data, 1e-100))

        return self._child(data, (self,), backward)

    def relu(self):
        data = np.maximum(self.data, 0.0)
        if not self.requires_grad:
            return Tensor(data)
        mask = self.data > 0

        def backward(g):
            self._add_grad(g * mask)

        return self._child(data, (self,), backward)

    def leaky_relu(self, slope: float = 0.2):
        factor = np.where(self.data > 0, 1.0, slope)
        data = self.data * factor
        if not self.requires_grad:
            return Tensor(data)

        def backward(g):
            self._add_grad(g * factor)

        return self._child(data, (self,), backward)

    def elu(self):
        data = np.where(self.data > 0, self.data, np.expm1(self.data))
        if not self.requires_grad:
            return Tensor(data)
        deriv = np.where(self.data > 0, 1.0, data + 1.0)

        def backward(g):
            self._add_grad(g * deriv)

        return self._child(data, (self,), backward)

    def masked_softmax(self, mask: np.ndarray):
        """Row-wise softmax restricted to True entries of `mask`.

        Masked-out entries come back exactly 0. Every row must contain at
        least one True entry.
        """
        mask = np.asarray(mask, dtype=bool)
        shifted = np.where(mask, self.data, -np.inf)
        rowmax = shifted.max(axis=1, keepdims=True)
        weights = np.exp(shifted - rowmax)
        out_data = weights / weights.sum(axis=1, keepdims=True)
        if not self.requires_grad:
            return Tensor(out_data)

        def backward(g):
            inner = (g * out_data).sum(axis=1, keepdims=True)
            self._add_grad(out_data * (g - inner))

        return self._child(out_data, (self,), backward)

    def pair_distances(self, i: np.ndarray, j: np.ndarray):
        """Euclidean distances between row pairs: ||self[i_k] - self[j_k]||.

        Fused gather/diff/norm; the workhorse of the training loss.
        """
        i = np.asarray(i)
        j = np.asarray(j)
        diff = self.data[i] - self.data[j]
        data = np.sqrt(np.einsum("kd,kd->k", diff, diff))
        if not self.requires_grad:
            return Tensor(data)
        n_rows = self.data.shape[0]

        def backward(g):
            # d(||u||)/du = u / ||u||, clamped at exactly 0
            scale = (g / np.maximum(data, 1e-100))[:, None] * diff
            self._add_grad(_scatter_rows(i, scale, n_rows))
            self._add_grad(-_scatter_rows(j, scale, n_rows))

        return self._child(data, (self,), backward)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def glorot_uniform(rng: np.random.Generator, shape: tuple, fan_in: int,
                   fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Adam:
    """Adam with bias correction; operates in place on parameter tensors."""

    def __init__(self, params: list[Tensor], lr: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self):
        for p in self.params:
            p.grad[...] = 0.0

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1.0 - self.beta2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
