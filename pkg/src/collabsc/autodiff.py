"""Reverse-mode automatic differentiation over dense float64 arrays.

The operator set is exactly what the clustering networks need: dense and
strided-convolution linear algebra, row softmax and row l2 normalization,
and the reductions used by the losses. There is no broadcasting beyond the
row-vector bias add, no mixed precision, and no graph rewriting.

A forward pass builds an implicit DAG: every op output records its parent
tensors and a closure computing parent gradients. ``backward`` topologically
sorts the DAG and walks it in exact reverse order, accumulating gradients
into every tensor that (transitively) requires them.
"""

from __future__ import annotations

import math

import numpy as np


class AutodiffError(ValueError):
    """Structural misuse of the engine (unknown op, non-scalar loss, ...)."""


class ShapeError(AutodiffError):
    """Operand shapes do not conform to an op's contract."""


class Tensor:
    """Dense float64 array with optional gradient tracking.

    ``requires_grad`` on a leaf marks a trainable parameter; on an op output
    it means some ancestor is trainable and the backward pass must flow
    through this node.
    """

    __slots__ = ("values", "requires_grad", "grad", "op_kind", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad=False, op_kind="leaf", parents=(), backward_fn=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op_kind = op_kind
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.shape != ():
            raise AutodiffError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.values)

    def detach(self) -> "Tensor":
        """Constant copy, cut off from the graph."""
        return Tensor(self.values.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op_kind!r}, requires_grad={self.requires_grad})"


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def parameter(values) -> Tensor:
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


def _make(values, parents, kind, backward_fn) -> Tensor:
    if not any(p.requires_grad for p in parents):
        return Tensor(values, False, kind)
    return Tensor(values, True, kind, parents, backward_fn)


def _check_2d(t: Tensor, kind: str) -> None:
    if t.ndim != 2:
        raise ShapeError(f"{kind}: expected a 2-d operand, got shape {t.shape}")


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes ordered so every input precedes its consumers (iterative DFS)."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dT into ``grad`` of every tracked tensor under loss.

    The loss must be scalar. Gradients accumulate across calls; callers zero
    parameter grads between steps.
    """
    if loss.values.shape != ():
        raise AutodiffError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = topological_order(loss)
    if loss.grad is None:
        loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        if node._backward_fn is None or node.grad is None:
            continue
        parent_grads = node._backward_fn(node.grad)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = pg
            else:
                parent.grad = parent.grad + pg


# ---------------------------------------------------------------------------
# elementwise / linear algebra ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_2d(a, "matmul")
    _check_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def bwd(g):
        return g @ bv.T, av.T @ g

    return _make(av @ bv, (a, b), "matmul", bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Same-shape add, or row-vector bias add of shape (m,) / (1, m)."""
    if a.shape == b.shape:
        def bwd(g):
            return g, g
        return _make(a.values + b.values, (a, b), "add", bwd)
    if a.ndim == 2 and b.shape in ((a.shape[1],), (1, a.shape[1])):
        b_shape = b.shape

        def bwd(g):
            return g, g.sum(axis=0).reshape(b_shape)

        return _make(a.values + b.values, (a, b), "add", bwd)
    raise ShapeError(f"add: shapes {a.shape} and {b.shape} are not addable")


def subtract(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"subtract: shapes differ, {a.shape} vs {b.shape}")

    def bwd(g):
        return g, -g

    return _make(a.values - b.values, (a, b), "subtract", bwd)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"elementwise-multiply: shapes differ, {a.shape} vs {b.shape}")
    av, bv = a.values, b.values

    def bwd(g):
        return g * bv, g * av

    return _make(av * bv, (a, b), "elementwise-multiply", bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0.0  # subgradient 0 at exactly 0

    def bwd(g):
        return (g * mask,)

    return _make(np.where(mask, x.values, 0.0), (x,), "relu", bwd)


def softmax_rows(x: Tensor) -> Tensor:
    _check_2d(x, "softmax-rows")
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return _make(s, (x,), "softmax-rows", bwd)


_L2_ZERO_GUARD = 1e-12
_L2_ZERO_ROW = 1e-30


def l2_normalize_rows(x: Tensor) -> Tensor:
    """Rows scaled to unit l2 norm; essentially-zero rows map to zero rows.

    Rows with norm > 1e-30 divide by their exact norm (unit output norm);
    only vanishing rows get the +1e-12 guard that keeps the op total.
    """
    _check_2d(x, "l2-normalize-rows")
    norms = np.sqrt((x.values * x.values).sum(axis=1, keepdims=True))
    denom = np.where(norms > _L2_ZERO_ROW, norms, norms + _L2_ZERO_GUARD)
    y = x.values / denom

    def bwd(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return ((g - y * dot) / denom,)

    return _make(y, (x,), "l2-normalize-rows", bwd)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape

    def bwd(g):
        return (g.reshape(old),)

    return _make(x.values.reshape(shape), (x,), "reshape", bwd)


def tensor_sum(x: Tensor) -> Tensor:
    shape = x.shape

    def bwd(g):
        return (np.full(shape, float(g)),)

    return _make(np.asarray(x.values.sum()), (x,), "sum", bwd)


def tensor_mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size

    def bwd(g):
        return (np.full(shape, float(g) / n),)

    return _make(np.asarray(x.values.mean()), (x,), "mean", bwd)


def frobenius_sq(x: Tensor) -> Tensor:
    """Sum of squared entries (squared Frobenius norm), a scalar."""
    xv = x.values

    def bwd(g):
        return (2.0 * float(g) * xv,)

    return _make(np.asarray((xv * xv).sum()), (x,), "frobenius-norm-squared", bwd)


def log(x: Tensor) -> Tensor:
    if (x.values <= 0.0).any():
        bad = float(x.values.min())
        raise AutodiffError(f"log: non-positive input (min value {bad}); clamp before log")
    xv = x.values

    def bwd(g):
        return (g / xv,)

    return _make(np.log(xv), (x,), "log", bwd)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        return (c * g,)

    return _make(c * x.values, (x,), "scalar-multiply", bwd)


def transpose(x: Tensor) -> Tensor:
    _check_2d(x, "transpose")

    def bwd(g):
        return (g.T,)

    return _make(x.values.T.copy(), (x,), "transpose", bwd)


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.values)  # subgradient 0 at exactly 0

    def bwd(g):
        return (g * sign,)

    return _make(np.abs(x.values), (x,), "abs", bwd)


# ---------------------------------------------------------------------------
# strided convolution and its adjoint
# ---------------------------------------------------------------------------

def same_padding(in_size: int, kernel: int, stride: int) -> tuple[int, int]:
    """Zero padding (lo, hi) giving output ceil(in/stride), TF-style."""
    out = -(-in_size // stride)
    total = max((out - 1) * stride + kernel - in_size, 0)
    lo = total // 2
    return lo, total - lo


def conv_output_size(in_size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-in_size // stride)
    if padding == "valid":
        if in_size < kernel:
            raise ShapeError(f"conv: kernel {kernel} larger than unpadded input {in_size}")
        return (in_size - kernel) // stride + 1
    raise AutodiffError(f"conv: unknown padding mode {padding!r}")


def _pads(in_hw, kernel, stride, padding):
    if padding == "same":
        return same_padding(in_hw[0], kernel, stride), same_padding(in_hw[1], kernel, stride)
    return (0, 0), (0, 0)


def _im2col(x, kernel, stride, pads, out_hw):
    (plo_h, phi_h), (plo_w, phi_w) = pads
    n, c = x.shape[0], x.shape[1]
    oh, ow = out_hw
    xp = np.pad(x, ((0, 0), (0, 0), (plo_h, phi_h), (plo_w, phi_w)))
    cols = np.empty((n, c, kernel, kernel, oh, ow), dtype=np.float64)
    for ki in range(kernel):
        for kj in range(kernel):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride]
    return cols


def _col2im(cols, in_hw, kernel, stride, pads, out_hw):
    (plo_h, phi_h), (plo_w, phi_w) = pads
    n, c = cols.shape[0], cols.shape[1]
    oh, ow = out_hw
    xp = np.zeros((n, c, in_hw[0] + plo_h + phi_h, in_hw[1] + plo_w + phi_w), dtype=np.float64)
    for ki in range(kernel):
        for kj in range(kernel):
            xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += cols[:, :, ki, kj]
    return xp[:, :, plo_h:plo_h + in_hw[0], plo_w:plo_w + in_hw[1]]


def _conv_forward(x, w, stride, pads, out_hw):
    n = x.shape[0]
    co, ci, kernel = w.shape[0], w.shape[1], w.shape[2]
    oh, ow = out_hw
    cols = _im2col(x, kernel, stride, pads, out_hw)
    mat = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, ci * kernel * kernel)
    out = mat @ w.reshape(co, -1).T
    return out.reshape(n, oh, ow, co).transpose(0, 3, 1, 2)


def _conv_dweight(x, grad_out, stride, pads, out_hw, kernel):
    n, ci = x.shape[0], x.shape[1]
    co = grad_out.shape[1]
    oh, ow = out_hw
    cols = _im2col(x, kernel, stride, pads, out_hw)
    mat = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, ci * kernel * kernel)
    gmat = grad_out.transpose(0, 2, 3, 1).reshape(n * oh * ow, co)
    return (gmat.T @ mat).reshape(co, ci, kernel, kernel)


def _conv_dinput(grad_out, w, stride, pads, in_hw):
    n = grad_out.shape[0]
    co, ci, kernel = w.shape[0], w.shape[1], w.shape[2]
    oh, ow = grad_out.shape[2], grad_out.shape[3]
    gmat = grad_out.transpose(0, 2, 3, 1).reshape(n * oh * ow, co)
    dcols = (gmat @ w.reshape(co, -1)).reshape(n, oh, ow, ci, kernel, kernel)
    dcols = dcols.transpose(0, 3, 4, 5, 1, 2)
    return _col2im(dcols, in_hw, kernel, stride, pads, (oh, ow))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: str = "same") -> Tensor:
    """Strided 2-d convolution; x is (N, C, H, W), w is (Cout, Cin, f, f)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input channels {x.shape[1]} != kernel channels {w.shape[1]}")
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: only square kernels supported, got {w.shape}")
    kernel, stride = int(w.shape[2]), int(stride)
    in_hw = (x.shape[2], x.shape[3])
    out_hw = (conv_output_size(in_hw[0], kernel, stride, padding),
              conv_output_size(in_hw[1], kernel, stride, padding))
    pads = _pads(in_hw, kernel, stride, padding)
    out = _conv_forward(x.values, w.values, stride, pads, out_hw)
    parents = [x, w]
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv2d: bias shape {b.shape} != ({w.shape[0]},)")
        out = out + b.values[None, :, None, None]
        parents.append(b)
    xv, wv = x.values, w.values

    def bwd(g):
        dx = _conv_dinput(g, wv, stride, pads, in_hw)
        dw = _conv_dweight(xv, g, stride, pads, out_hw, kernel)
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    return _make(out, tuple(parents), "conv2d-strided", bwd)


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
                     padding: str = "same", output_hw: tuple[int, int] | None = None) -> Tensor:
    """Adjoint of `conv2d`: x is (N, Cin, H, W), w is (Cin, Cout, f, f).

    The output spatial size must be given explicitly (strided shape
    arithmetic is not invertible); it is validated by running the forward
    conv shape rule in reverse.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d-transpose: need 4-d input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"conv2d-transpose: input channels {x.shape[1]} != kernel channels {w.shape[0]}")
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d-transpose: only square kernels supported, got {w.shape}")
    if output_hw is None:
        output_hw = (x.shape[2] * stride, x.shape[3] * stride)
    kernel, stride = int(w.shape[2]), int(stride)
    out_hw = (int(output_hw[0]), int(output_hw[1]))
    check = (conv_output_size(out_hw[0], kernel, stride, padding),
             conv_output_size(out_hw[1], kernel, stride, padding))
    if check != (x.shape[2], x.shape[3]):
        raise ShapeError(
            f"conv2d-transpose: output size {out_hw} maps to {check} under the forward "
            f"shape rule, but the input is {(x.shape[2], x.shape[3])}")
    pads = _pads(out_hw, kernel, stride, padding)
    out = _conv_dinput(x.values, w.values, stride, pads, out_hw)
    parents = [x, w]
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"conv2d-transpose: bias shape {b.shape} != ({w.shape[1]},)")
        out = out + b.values[None, :, None, None]
        parents.append(b)
    xv, wv = x.values, w.values
    x_hw = (x.shape[2], x.shape[3])

    def bwd(g):
        dx = _conv_forward(g, wv, stride, pads, x_hw)
        dw = _conv_dweight(g, xv, stride, pads, x_hw, kernel)
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    return _make(out, tuple(parents), "conv2d-transpose-strided", bwd)


# ---------------------------------------------------------------------------
# op registry and gradient checking
# ---------------------------------------------------------------------------

OP_KINDS = {
    "matmul": matmul,
    "add": add,
    "subtract": subtract,
    "elementwise-multiply": multiply,
    "relu": relu,
    "softmax-rows": softmax_rows,
    "l2-normalize-rows": l2_normalize_rows,
    "conv2d-strided": conv2d,
    "conv2d-transpose-strided": conv2d_transpose,
    "reshape": reshape,
    "sum": tensor_sum,
    "mean": tensor_mean,
    "frobenius-norm-squared": frobenius_sq,
    "log": log,
    "scalar-multiply": scale,
    "transpose": transpose,
    "abs": absolute,
}


def forward_op(kind: str, inputs: list[Tensor], **attrs) -> Tensor:
    """Dispatch by op-kind name; attrs carry stride/padding/shape/scalar."""
    fn = OP_KINDS.get(kind)
    if fn is None:
        raise AutodiffError(f"unknown op kind {kind!r}; known kinds: {sorted(OP_KINDS)}")
    return fn(*inputs, **attrs)


def zero_grads(params) -> None:
    for p in (params.values() if isinstance(params, dict) else params):
        p.grad = None


def grad_check(loss_fn, params, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must rebuild the forward graph from the *current* values of
    ``params`` and return a scalar Tensor. Relative error per coordinate is
    |analytic - numeric| / max(1, |analytic|). Parameter grads are left
    zeroed on exit.
    """
    if eps <= 0:
        raise ValueError("grad_check needs eps > 0")
    params = list(params)
    zero_grads(params)
    loss = loss_fn()
    backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else np.array(p.grad, dtype=np.float64)
                for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.values.reshape(-1)
        aflat = np.asarray(a).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = loss_fn().item()
            flat[i] = orig - eps
            f_minus = loss_fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]))
            if err > worst:
                worst = err
    zero_grads(params)
    return worst
