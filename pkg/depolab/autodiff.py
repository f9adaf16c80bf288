#
# Reverse-mode automatic differentiation over dense tensors
#
# Copyright (C) 2026  The depolab developers.  All rights reserved.
#
# This library is free software; you can redistribute it and/or
# modify it under the terms of the GNU Lesser General Public
# License as published by the Free Software Foundation; either
# version 2.1 of the License, or (at your option) any later version.
#
# This library is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the GNU
# Lesser General Public License for more details.
#
# You should have received a copy of the GNU Lesser General Public
# License along with this library; if not, write to the Free Software
# Foundation, Inc., 51 Franklin Street, Fifth Floor, Boston, MA  02110-1301
# USA
#
import logging
import threading
from collections import namedtuple

import numpy as np

from depolab.constants import MIN_DIRECTION_NORM
from depolab.error import DepolabError, NumericalError

log = logging.getLogger(__name__)

__all__ = [
    "AutodiffError",
    "ShapeError",
    "DegenerateDirectionError",
    "GraphError",
    "Tensor",
    "Graph",
    "as_tensor",
    "backward",
    "matvec",
    "row",
    "select",
    "add",
    "add_n",
    "sub",
    "mul",
    "scale",
    "tanh",
    "exp",
    "ln",
    "dot",
    "sqdist",
    "norm",
    "normalize",
    "log_softmax",
    "log_softmax_select",
    "clip",
    "minimum",
    "maximum",
    "total",
    "mean",
    "finite_difference",
]


class AutodiffError(DepolabError):
    """General exception for the automatic differentiation."""
    pass


class ShapeError(AutodiffError):
    """Exception for incompatible shapes of operands."""
    pass


class DegenerateDirectionError(NumericalError):
    """Exception for a vector too short to have a direction."""
    pass


class GraphError(AutodiffError):
    """Exception for an invalid use of a graph."""
    pass


class Tensor(object):
    """A dense 64-bit real tensor.

    Leaf tensors are created by the user. Tensors created by the
    primitive operations are recorded on the active graph if any
    of their inputs requires a gradient.
    """

    __slots__ = [
        "_values",
        "_requires_grad",
        "_is_leaf",
        "grad"
    ]

    def __init__(self, values, requires_grad=False):
        """Create a leaf tensor.

        :param values: an array-like object, it is copied
        :param requires_grad: should the gradient be computed?
        """
        self._values = np.array(values, dtype=np.float64)
        self._requires_grad = requires_grad
        self._is_leaf = True
        self.grad = None

    @classmethod
    def _from_operation(cls, values):
        tensor = cls.__new__(cls)
        tensor._values = values
        tensor._requires_grad = False
        tensor._is_leaf = False
        tensor.grad = None
        return tensor

    @property
    def values(self):
        """Values of the tensor."""
        return self._values

    @property
    def shape(self):
        """Shape of the tensor."""
        return self._values.shape

    @property
    def size(self):
        """Number of values of the tensor."""
        return self._values.size

    @property
    def requires_grad(self):
        """Is the gradient of this tensor computed?"""
        return self._requires_grad

    @property
    def is_leaf(self):
        """Was this tensor created by the user?"""
        return self._is_leaf

    def item(self):
        """Return the value of a scalar tensor.

        :return: a float
        """
        if self._values.size != 1:
            raise ShapeError(
                "Tensor of shape {} is not a scalar.".format(self.shape)
            )

        return float(self._values.reshape(()))

    def zero_grad(self):
        """Forget the accumulated gradient."""
        self.grad = None

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self._values)

        self.grad += grad

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)

        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return scale(self, 1.0 / float(other))

    def __repr__(self):
        return "Tensor(shape={}, requires_grad={})".format(
            self.shape, self._requires_grad
        )


GraphNode = namedtuple("GraphNode", [
    "op",
    "inputs",
    "output",
    "backward"
])


class Graph(object):
    """A tape of recorded primitive operations.

    Usage:

    .. code-block:: python

        w = Tensor([3.0, 4.0], requires_grad=True)

        with Graph() as graph:
            root = dot(w, w)

        graph.backward(root)
        print(w.grad)   # [6. 8.]

    A graph is used by a single thread. Graphs of different threads
    are independent.
    """

    _local = threading.local()

    def __init__(self):
        """Create an empty graph."""
        self._nodes = []
        self._positions = {}

    @classmethod
    def active(cls):
        """Return the graph recording in this thread or None."""
        stack = getattr(cls._local, "stack", None)

        if not stack:
            return None

        return stack[-1]

    def __enter__(self):
        if not hasattr(self._local, "stack"):
            self._local.stack = []

        self._local.stack.append(self)
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self._local.stack.pop()

    @property
    def nodes(self):
        """Recorded nodes in the topological order."""
        return list(self._nodes)

    def __len__(self):
        return len(self._nodes)

    def record(self, op, inputs, output, backward_fn):
        """Record an application of a primitive.

        :param op: a name of the primitive
        :param inputs: a tuple of input tensors
        :param output: the output tensor
        :param backward_fn: a function mapping the output gradient
                            to a tuple of input gradients
        """
        self._positions[id(output)] = len(self._nodes)
        self._nodes.append(GraphNode(op, inputs, output, backward_fn))

    def backward(self, root):
        """Compute gradients of a scalar root.

        Gradients are accumulated into the grad attribute of every
        leaf tensor that requires a gradient. Repeated calls without
        zeroing the gradients add up.

        :param root: a scalar tensor recorded on this graph
        :raise GraphError: if the root is invalid
        """
        if root.size != 1:
            raise GraphError(
                "Root of shape {} is not a scalar.".format(root.shape)
            )

        if root.is_leaf:
            if root.requires_grad:
                root._accumulate(np.ones_like(root.values))
            return

        position = self._positions.get(id(root), None)

        if position is None or self._nodes[position].output is not root:
            raise GraphError("Root is not recorded on this graph.")

        log.debug("Backward pass over %d nodes.", position + 1)
        grads = {id(root): np.ones_like(root.values)}

        for node in reversed(self._nodes[:position + 1]):
            grad = grads.pop(id(node.output), None)

            if grad is None:
                continue

            for tensor, input_grad in zip(node.inputs, node.backward(grad)):
                if input_grad is None or not tensor.requires_grad:
                    continue

                if tensor.is_leaf:
                    tensor._accumulate(input_grad)
                    continue

                key = id(tensor)

                if key in grads:
                    grads[key] = grads[key] + input_grad
                else:
                    grads[key] = input_grad


def backward(graph, root):
    """Compute gradients of a scalar root on the given graph.

    :param graph: a graph
    :param root: a scalar tensor
    """
    graph.backward(root)


def as_tensor(value):
    """Return a tensor for a tensor or a constant.

    :param value: a tensor or an array-like constant
    :return: a tensor
    """
    if isinstance(value, Tensor):
        return value

    return Tensor(value)


def _apply(op, inputs, values, backward_fn):
    output = Tensor._from_operation(values)
    graph = Graph.active()

    if graph is not None and any(t.requires_grad for t in inputs):
        output._requires_grad = True
        graph.record(op, inputs, output, backward_fn)

    return output


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(
            "Operation '{}' got incompatible shapes {} and {}.".format(
                op, a.shape, b.shape
            )
        )


def _check_ndim(op, a, ndim):
    if a.values.ndim != ndim:
        raise ShapeError(
            "Operation '{}' expects {} dimensions, not shape {}.".format(
                op, ndim, a.shape
            )
        )


def _check_scalar(op, a):
    if a.size != 1:
        raise ShapeError(
            "Operation '{}' expects a scalar, not shape {}.".format(
                op, a.shape
            )
        )


def matvec(matrix, vector):
    """Multiply a matrix with a vector.

    :param matrix: a tensor of the shape (m, n)
    :param vector: a tensor of the shape (n,)
    :return: a tensor of the shape (m,)
    """
    w, x = as_tensor(matrix), as_tensor(vector)
    _check_ndim("matvec", w, 2)
    _check_ndim("matvec", x, 1)

    if w.shape[1] != x.shape[0]:
        raise ShapeError(
            "Operation 'matvec' got incompatible shapes {} and {}.".format(
                w.shape, x.shape
            )
        )

    def backward_fn(g):
        return np.outer(g, x.values), w.values.T @ g

    return _apply("matvec", (w, x), w.values @ x.values, backward_fn)


def row(matrix, index):
    """Select a row of a matrix.

    :param matrix: a tensor of the shape (m, n)
    :param index: a row index
    :return: a tensor of the shape (n,)
    """
    w = as_tensor(matrix)
    _check_ndim("row", w, 2)

    def backward_fn(g):
        grad = np.zeros_like(w.values)
        grad[index] = g
        return (grad, )

    return _apply("row", (w, ), w.values[index].copy(), backward_fn)


def select(vector, index):
    """Select an element of a vector.

    :param vector: a tensor of the shape (n,)
    :param index: an element index
    :return: a scalar tensor
    """
    a = as_tensor(vector)
    _check_ndim("select", a, 1)

    def backward_fn(g):
        grad = np.zeros_like(a.values)
        grad[index] = g
        return (grad, )

    return _apply("select", (a, ), np.array(a.values[index]), backward_fn)


def add(a, b):
    """Add two tensors of the same shape."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("add", a, b)
    return _apply("add", (a, b), a.values + b.values, lambda g: (g, g))


def add_n(tensors):
    """Add a sequence of tensors of the same shape.

    The sum is accumulated in the order of the sequence.

    :param tensors: a non-empty sequence of tensors
    :return: a tensor
    """
    tensors = tuple(as_tensor(t) for t in tensors)

    if not tensors:
        raise ShapeError("Operation 'add_n' got no operands.")

    values = tensors[0].values.copy()

    for t in tensors[1:]:
        _check_same_shape("add_n", tensors[0], t)
        values = values + t.values

    return _apply(
        "add_n", tensors, values, lambda g: tuple(g for _ in tensors)
    )


def sub(a, b):
    """Subtract two tensors of the same shape."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("sub", a, b)
    return _apply("sub", (a, b), a.values - b.values, lambda g: (g, -g))


def mul(a, b):
    """Multiply two tensors of the same shape elementwise."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("mul", a, b)

    def backward_fn(g):
        return g * b.values, g * a.values

    return _apply("mul", (a, b), a.values * b.values, backward_fn)


def scale(a, factor):
    """Multiply a tensor by a constant real number."""
    a = as_tensor(a)
    factor = float(factor)
    return _apply("scale", (a, ), a.values * factor, lambda g: (g * factor, ))


def tanh(a):
    """Compute the hyperbolic tangent elementwise."""
    a = as_tensor(a)
    y = np.tanh(a.values)
    return _apply("tanh", (a, ), y, lambda g: (g * (1.0 - y * y), ))


def exp(a):
    """Compute the exponential elementwise."""
    a = as_tensor(a)
    y = np.exp(a.values)
    return _apply("exp", (a, ), y, lambda g: (g * y, ))


def ln(a):
    """Compute the natural logarithm elementwise.

    :raise NumericalError: if a value is not positive
    """
    a = as_tensor(a)

    if np.any(a.values <= 0):
        raise NumericalError("Operation 'ln' got a nonpositive value.")

    return _apply(
        "ln", (a, ), np.log(a.values), lambda g: (g / a.values, )
    )


def dot(a, b):
    """Compute the dot product of two vectors."""
    a, b = as_tensor(a), as_tensor(b)
    _check_ndim("dot", a, 1)
    _check_same_shape("dot", a, b)

    def backward_fn(g):
        return g * b.values, g * a.values

    return _apply("dot", (a, b), np.array(a.values @ b.values), backward_fn)


def sqdist(a, b):
    """Compute the squared Euclidean distance of two vectors."""
    a, b = as_tensor(a), as_tensor(b)
    _check_ndim("sqdist", a, 1)
    _check_same_shape("sqdist", a, b)
    diff = a.values - b.values

    def backward_fn(g):
        return 2.0 * g * diff, -2.0 * g * diff

    return _apply("sqdist", (a, b), np.array(diff @ diff), backward_fn)


def norm(a):
    """Compute the Euclidean norm of a vector."""
    a = as_tensor(a)
    _check_ndim("norm", a, 1)
    n = np.sqrt(a.values @ a.values)

    def backward_fn(g):
        if n == 0:
            return (np.zeros_like(a.values), )

        return (g * a.values / n, )

    return _apply("norm", (a, ), np.array(n), backward_fn)


def normalize(a):
    """Scale a vector to the unit Euclidean norm.

    :raise DegenerateDirectionError: if the norm is below 1e-12
    """
    a = as_tensor(a)
    _check_ndim("normalize", a, 1)
    n = np.sqrt(a.values @ a.values)

    if n < MIN_DIRECTION_NORM:
        raise DegenerateDirectionError(
            "Vector of norm {!r} has no direction.".format(float(n))
        )

    y = a.values / n

    def backward_fn(g):
        return ((g - y * (y @ g)) / n, )

    return _apply("normalize", (a, ), y, backward_fn)


def _log_softmax_values(x):
    shift = x - np.max(x)
    return shift - np.log(np.sum(np.exp(shift)))


def log_softmax(a):
    """Compute the log-softmax of a vector."""
    a = as_tensor(a)
    _check_ndim("log_softmax", a, 1)
    y = _log_softmax_values(a.values)

    def backward_fn(g):
        return (g - np.exp(y) * np.sum(g), )

    return _apply("log_softmax", (a, ), y, backward_fn)


def log_softmax_select(a, index):
    """Compute one element of the log-softmax of a vector.

    :param a: a tensor of the shape (n,)
    :param index: an element index
    :return: a scalar tensor
    """
    a = as_tensor(a)
    _check_ndim("log_softmax_select", a, 1)
    y = _log_softmax_values(a.values)

    def backward_fn(g):
        grad = -g * np.exp(y)
        grad[index] += g
        return (grad, )

    return _apply(
        "log_softmax_select", (a, ), np.array(y[index]), backward_fn
    )


def clip(a, lo, hi):
    """Clip values to the interval [lo, hi].

    The gradient is one inside the closed interval and zero outside.
    """
    a = as_tensor(a)
    inside = (a.values >= lo) & (a.values <= hi)

    return _apply(
        "clip",
        (a, ),
        np.clip(a.values, lo, hi),
        lambda g: (g * inside, )
    )


def minimum(a, b):
    """Compute the elementwise minimum, ties go to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("minimum", a, b)
    first = a.values <= b.values

    def backward_fn(g):
        return g * first, g * ~first

    return _apply(
        "minimum", (a, b), np.where(first, a.values, b.values), backward_fn
    )


def maximum(a, b):
    """Compute the elementwise maximum, ties go to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("maximum", a, b)
    first = a.values >= b.values

    def backward_fn(g):
        return g * first, g * ~first

    return _apply(
        "maximum", (a, b), np.where(first, a.values, b.values), backward_fn
    )


def total(a):
    """Sum all values of a tensor to a scalar."""
    a = as_tensor(a)

    return _apply(
        "total",
        (a, ),
        np.array(np.sum(a.values)),
        lambda g: (np.full_like(a.values, g), )
    )


def mean(tensors):
    """Compute the mean of a non-empty sequence of tensors."""
    tensors = list(tensors)
    return scale(add_n(tensors), 1.0 / len(tensors))


def finite_difference(func, array, step=1e-5):
    """Estimate the gradient of a scalar function by central differences.

    The array is perturbed in place and restored afterwards.

    :param func: a function returning a float
    :param array: a float64 array the function reads
    :param step: a perturbation step
    :return: an array of the shape of the given array
    """
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    flat_grad = grad.reshape(-1)

    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = func()
        flat[i] = original - step
        lower = func()
        flat[i] = original
        flat_grad[i] = (upper - lower) / (2.0 * step)

    return grad
