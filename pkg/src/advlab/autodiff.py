"""Dense tensors with reverse-mode automatic differentiation.

Every value is a `Tensor` wrapping a float32 or float64 numpy array in
row-major NCHW layout. Ops build a computation graph; `backward()` on a
scalar root materializes the tape (a topological ordering of the graph)
and accumulates gradients into every reachable node, so shared
subexpressions receive the sum of their path gradients.

Conventions fixed for the whole artifact:
  * float32 for training, float64 for gradient checks / oracle runs;
  * subgradient 0 at the kinks of relu and abs;
  * reductions use a fixed summation order, so identical inputs give
    bit-identical outputs.
"""

from __future__ import annotations

import numpy as np

# min |input| seen at relu/leaky_relu/abs during a traced forward; used by
# gradient checks to reject sample points too close to a kink.
_kink_trace: list | None = None


class ShapeMismatch(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class Tensor:
    """A node in the computation graph: value, gradient slot, parents."""

    __slots__ = ("data", "grad", "parents", "_backward")

    def __init__(self, data, dtype=None, parents=(), backward=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def detach(self) -> "Tensor":
        """A leaf sharing this tensor's data; gradients stop here."""
        return Tensor(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def backward(self):
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _topo_order(root: Tensor) -> list:
    """Topological ordering of the graph under `root` (parents first)."""
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


def backward(root: Tensor):
    """Populate `.grad` of every node reachable from the scalar `root`.

    Gradients accumulate at shared nodes; each call starts from fresh
    zero slots, so consecutive calls do not mix.
    """
    if root.data.size != 1:
        raise ValueError(f"backward() needs a scalar root, got shape {root.data.shape}")
    order = _topo_order(root)
    for node in order:
        node.grad = np.zeros_like(node.data)
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, parents=(a, b))

    def rule(g):
        a.grad += _unbroadcast(g, a.data.shape)
        b.grad += _unbroadcast(g, b.data.shape)

    out._backward = rule
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, parents=(a, b))

    def rule(g):
        a.grad += _unbroadcast(g, a.data.shape)
        b.grad -= _unbroadcast(g, b.data.shape)

    out._backward = rule
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, parents=(a, b))

    def rule(g):
        a.grad += _unbroadcast(g * b.data, a.data.shape)
        b.grad += _unbroadcast(g * a.data, b.data.shape)

    out._backward = rule
    return out


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * a.data.dtype.type(s), parents=(a,))

    def rule(g):
        a.grad += g * a.data.dtype.type(s)

    out._backward = rule
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product; backbone of the dense layer."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b))

    def rule(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    out._backward = rule
    return out


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map x @ w + b for x of shape (batch, in)."""
    return add(matmul(x, w), b)


def relu(x: Tensor) -> Tensor:
    if _kink_trace is not None and x.data.size:
        _kink_trace.append(float(np.min(np.abs(x.data))))
    out = Tensor(np.maximum(x.data, 0), parents=(x,))

    def rule(g):
        x.grad += g * (x.data > 0)

    out._backward = rule
    return out


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    if _kink_trace is not None and x.data.size:
        _kink_trace.append(float(np.min(np.abs(x.data))))
    a = x.data.dtype.type(alpha)
    out = Tensor(np.where(x.data > 0, x.data, x.data * a), parents=(x,))

    def rule(g):
        x.grad += g * np.where(x.data > 0, x.data.dtype.type(1), a)

    out._backward = rule
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y, parents=(x,))

    def rule(g):
        x.grad += g * (1 - y * y)

    out._backward = rule
    return out


def abs_(x: Tensor) -> Tensor:
    if _kink_trace is not None and x.data.size:
        _kink_trace.append(float(np.min(np.abs(x.data))))
    out = Tensor(np.abs(x.data), parents=(x,))

    def rule(g):
        x.grad += g * np.sign(x.data)

    out._backward = rule
    return out


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), parents=(x,))

    def rule(g):
        if axis is None:
            x.grad += g
        elif keepdims:
            x.grad += np.broadcast_to(g, x.data.shape)
        else:
            x.grad += np.broadcast_to(np.expand_dims(g, axis), x.data.shape)

    out._backward = rule
    return out


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.data.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def l1_norm(x: Tensor) -> Tensor:
    """Sum of absolute values; subgradient sign(x) with sign(0)=0."""
    return sum_(abs_(x))


def ordered_sum(x: Tensor) -> Tensor:
    """Sum of a 1-D tensor in value-sorted order.

    The canonical order makes the result invariant, bit for bit, under
    any permutation of the input; the gradient is all ones either way.
    """
    if x.data.ndim != 1:
        raise ShapeMismatch(f"ordered_sum needs a 1-D tensor, got {x.shape}")
    out = Tensor(np.sort(x.data).sum(), parents=(x,))

    def rule(g):
        x.grad += g

    out._backward = rule
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), parents=(x,))

    def rule(g):
        x.grad += g.reshape(x.data.shape)

    out._backward = rule
    return out


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tensors)
    offsets = np.cumsum([0] + [t.data.shape[axis] for t in tensors])

    def rule(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t.grad += g[tuple(idx)]

    out._backward = rule
    return out


def _conv_out_hw(h, w, kh, kw, stride, padding):
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeMismatch(
            f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    return (hp - kh) // stride + 1, (wp - kw) // stride + 1


def _im2col(xp, kh, kw, stride, ho, wo):
    """Gather sliding windows of padded input xp into (B, C*kh*kw, ho*wo)."""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, ho, wo), xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * (ho - 1) + 1:stride,
                                  j:j + stride * (wo - 1) + 1:stride]
    return cols.reshape(b, c * kh * kw, ho * wo)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with an (Cout,Cin,kh,kw) kernel.

    float64 tensors take a sequential-accumulation path whose summation
    order (cin, ki, kj) matches a direct nested-loop convolution exactly;
    float32 takes the fast im2col/GEMM path.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeMismatch(
            f"conv2d needs 4-D input and kernel, got {x.shape} and {kernel.shape}")
    b, cin, h, w = x.data.shape
    cout, kcin, kh, kw = kernel.data.shape
    if cin != kcin:
        raise ShapeMismatch(
            f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: stride={stride}, padding={padding} out of range")
    ho, wo = _conv_out_hw(h, w, kh, kw, stride, padding)

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data

    k2 = kernel.data.reshape(cout, cin * kh * kw)
    if x.data.dtype == np.float64 or kernel.data.dtype == np.float64:
        # sequential accumulation over k = (cin, ki, kj), exact vs the
        # nested-loop definition
        cols = _im2col(xp, kh, kw, stride, ho, wo)
        y = np.zeros((b, cout, ho * wo), np.float64)
        for kk in range(cols.shape[1]):
            y += k2[:, kk][None, :, None] * cols[:, kk][:, None, :]
    else:
        cols = _im2col(xp, kh, kw, stride, ho, wo)
        y = np.matmul(k2[None], cols)
    out = Tensor(y.reshape(b, cout, ho, wo), parents=(x, kernel))

    def rule(g):
        g2 = g.reshape(b, cout, ho * wo)
        # kernel grad: contract over batch and output pixels
        gk = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
        kernel.grad += gk.reshape(kernel.data.shape)
        # input grad: scatter per kernel offset into the padded frame
        gxp = np.zeros_like(xp)
        gcols = np.matmul(k2.T[None], g2).reshape(b, cin, kh, kw, ho, wo)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * (ho - 1) + 1:stride,
                    j:j + stride * (wo - 1) + 1:stride] += gcols[:, :, i, j]
        if padding:
            x.grad += gxp[:, :, padding:padding + h, padding:padding + w]
        else:
            x.grad += gxp

    out._backward = rule
    return out


def nearest_upsample2x(x: Tensor) -> Tensor:
    """Duplicate each pixel into a 2x2 block."""
    if x.data.ndim != 4:
        raise ShapeMismatch(f"nearest_upsample2x needs NCHW input, got {x.shape}")
    y = x.data.repeat(2, axis=2).repeat(2, axis=3)
    out = Tensor(y, parents=(x,))

    def rule(g):
        b, c, h2, w2 = g.shape
        x.grad += g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))

    out._backward = rule
    return out


def avgpool2x(x: Tensor) -> Tensor:
    """Average over non-overlapping 2x2 blocks; needs even spatial dims."""
    b, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeMismatch(f"avgpool2x needs even H,W, got {x.shape}")
    y = x.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    out = Tensor(y, parents=(x,))

    def rule(g):
        q = (g * g.dtype.type(0.25))[:, :, :, None, :, None]
        x.grad += np.broadcast_to(q, (b, c, h // 2, 2, w // 2, 2)).reshape(x.data.shape)

    out._backward = rule
    return out


def gradient_check(f, point, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps a Tensor to a scalar Tensor. Runs in float64. The error at
    coordinate i is |a_i - n_i| / max(1, |a_i|, |n_i|).
    """
    base = np.asarray(point.data if isinstance(point, Tensor) else point,
                      dtype=np.float64).copy()
    leaf = Tensor(base)
    out = f(leaf)
    if out.data.size != 1:
        raise ValueError("gradient_check needs a scalar-valued program")
    backward(out)
    analytic = leaf.grad.copy()

    worst = 0.0
    flat = base.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        fp = float(f(Tensor(base.copy())).data)
        flat[i] = keep - eps
        fm = float(f(Tensor(base.copy())).data)
        flat[i] = keep
        numeric = (fp - fm) / (2 * eps)
        a = float(analytic.reshape(-1)[i])
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst
