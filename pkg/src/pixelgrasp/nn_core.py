"""Minimal tensor engine with reverse-mode automatic differentiation.

Just enough machinery to express and train the encoder-decoder grasp
network on CPU: conv2d (im2col + BLAS matmul), relu/linear, 2x2 maxpool,
nearest x2 upsampling, channel concat, MSE, Adam, and a finite-difference
gradient checker.

Tensors carry float32 data by default; the gradient checker alone
promotes everything to float64. Accumulation order is fixed (row-major /
BLAS), so identical inputs give bitwise identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import NonScalarOutput, OddSpatialDims, ShapeMismatch


class Tensor:
    """A node in the autodiff graph: ndarray data plus a gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"<Tensor{tag} shape={self.data.shape}>"

    def item(self) -> float:
        return float(self.data.reshape(()))

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad = self.grad + g

    def backward(self):
        """Reverse-mode sweep from this (scalar) tensor."""
        if self.data.size != 1:
            raise NonScalarOutput(f"backward from shape {self.data.shape}")
        topo, seen = [], set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            topo.append(node)

        visit(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.requires_grad:
                node._backward(node.grad)

    # Only the arithmetic the loss combination needs.
    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.data.dtype))
        if other.data.shape != self.data.shape:
            raise ShapeMismatch(f"add {self.data.shape} vs {other.data.shape}")
        out = Tensor(self.data + other.data, parents=(self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g)
            if other.requires_grad:
                other._accumulate(g)

        out._backward = bwd
        return out

    def __mul__(self, scalar):
        s = float(scalar)
        out = Tensor(self.data * s, parents=(self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * s)

        out._backward = bwd
        return out

    __rmul__ = __mul__


def parameter(data, name=None) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


# --------------------------------------------------------------------------
# Convolution
# --------------------------------------------------------------------------

def _conv_geometry(x_shape, k_shape, stride, padding):
    b, cin, h, w = x_shape
    cout, kcin, kh, kw = k_shape
    if kcin != cin:
        raise ShapeMismatch(f"kernel expects {kcin} input channels, tensor has {cin}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeMismatch("'same' padding requires odd kernel extents")
        ph, pw = kh // 2, kw // 2
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ShapeMismatch(f"unknown padding {padding!r}")
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (w + 2 * pw - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeMismatch(f"kernel {kh}x{kw} larger than padded input {h}x{w}")
    return ph, pw, oh, ow


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of (B, Cin, H, W) with (Cout, Cin, KH, KW).

    Computed as a sum over kernel offsets of channel contractions on a
    channels-last copy (one BLAS matmul per tap); the (i, j)-major
    accumulation order is fixed, so results are reproducible.
    """
    b, cin, h, w = x.data.shape
    cout, _, kh, kw = kernel.data.shape
    ph, pw, oh, ow = _conv_geometry(x.data.shape, kernel.data.shape, stride, padding)
    if bias is not None and bias.data.shape != (cout,):
        raise ShapeMismatch(f"bias shape {bias.data.shape}, expected ({cout},)")

    xt = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))
    xp = np.pad(xt, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if ph or pw else xt
    acc = np.zeros((b, oh, ow, cout), dtype=np.result_type(x.data.dtype, kernel.data.dtype))
    for i in range(kh):
        for j in range(kw):
            v = xp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :]
            acc += v @ np.ascontiguousarray(kernel.data[:, :, i, j].T)
    if bias is not None:
        acc += bias.data
    out = acc.transpose(0, 3, 1, 2)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    result = Tensor(out, parents=parents)

    def bwd(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        if kernel.requires_grad:
            dk = np.empty_like(kernel.data)
            for i in range(kh):
                for j in range(kw):
                    v = xp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :]
                    dk[:, :, i, j] = np.tensordot(gt, v, axes=([0, 1, 2], [0, 1, 2]))
            kernel._accumulate(dk)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += \
                        gt @ kernel.data[:, :, i, j]
            dx = dxp[:, ph:ph + h, pw:pw + w, :] if (ph or pw) else dxp
            x._accumulate(dx.transpose(0, 3, 1, 2))

    result._backward = bwd
    return result


# --------------------------------------------------------------------------
# Elementwise and structural ops
# --------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), parents=(x,))

    def bwd(g):
        if x.requires_grad:
            # subgradient at 0 defined as 0
            x._accumulate(g * (x.data > 0))

    out._backward = bwd
    return out


def linear(x: Tensor) -> Tensor:
    """Identity activation (the last layer's activation)."""
    out = Tensor(x.data, parents=(x,))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g)

    out._backward = bwd
    return out


def maxpool2(x: Tensor) -> Tensor:
    """2x2 non-overlapping max; gradient routes to the first (row-major)
    maximal element of each block."""
    b, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise OddSpatialDims(f"spatial dims {h}x{w} not divisible by 2")
    blocks = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5) \
                   .reshape(b, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = Tensor(np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0], parents=(x,))

    def bwd(g):
        if not x.requires_grad:
            return
        db = np.zeros_like(blocks)
        np.put_along_axis(db, arg[..., None], g[..., None], axis=-1)
        dx = db.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        x._accumulate(dx)

    out._backward = bwd
    return out


def upsample_nearest2(x: Tensor) -> Tensor:
    """Replicate each pixel 2x2; gradient sums each 2x2 block."""
    b, c, h, w = x.data.shape
    out = Tensor(np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3), parents=(x,))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)))

    out._backward = bwd
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ShapeMismatch(f"concat {a.data.shape} vs {b.data.shape}")
    split = a.data.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1), parents=(a, b))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g[:, :split])
        if b.requires_grad:
            b._accumulate(g[:, split:])

    out._backward = bwd
    return out


def mse(a: Tensor, b: Tensor) -> Tensor:
    """(1/n) * sum((a - b)^2) over all n elements, as a scalar tensor."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"mse {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    n = diff.size
    out = Tensor(np.asarray((diff * diff).sum() / n, dtype=a.data.dtype), parents=(a, b))

    def bwd(g):
        scale = 2.0 * float(g) / n
        if a.requires_grad:
            a._accumulate(scale * diff)
        if b.requires_grad:
            b._accumulate(-scale * diff)

    out._backward = bwd
    return out


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: OptimizerState) -> None:
    """Standard Adam update with bias correction; mutates params in place."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(grads) != len(params):
        raise ShapeMismatch(f"{len(grads)} gradients for {len(params)} parameters")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} vs parameter {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data = (p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)


# --------------------------------------------------------------------------
# Gradient checking
# --------------------------------------------------------------------------

def grad_check(fn, params: list[Tensor], eps: float = 1e-4) -> float:
    """Compare reverse-mode gradients against central finite differences.

    fn must rebuild the graph from the given parameter tensors and return
    a scalar Tensor. Everything runs in float64 here; the params passed in
    are left untouched. Returns max over all parameter elements of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    p64 = [Tensor(p.data.astype(np.float64), requires_grad=True, name=p.name) for p in params]
    out = fn(p64)
    if out.data.size != 1:
        raise NonScalarOutput(f"grad_check needs a scalar output, got shape {out.data.shape}")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in p64]

    worst = 0.0
    for pi, p in enumerate(p64):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn(p64).item()
            flat[i] = orig - eps
            f_minus = fn(p64).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[pi].reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
