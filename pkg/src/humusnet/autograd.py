"""Tensor operations with reverse-mode differentiation.

Tensors are ``torch.Tensor`` objects; torch's tape records the graph and
``backward`` walks it.  The functions here pin down the exact op set the
network uses, with the argument conventions and shape checks the rest of the
package relies on (for example ``linear`` takes its weight as ``[Din, Dout]``).

Complex images are complex-dtype tensors; ``.real`` and ``.imag`` give the two
equally-shaped real parts.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Sequence

import torch
import torch.nn.functional as F
from torch import nn

LEAKY_SLOPE = 0.2
LN_EPS = 1e-5


class DimensionError(ValueError):
    """An operand has the wrong extent along some axis."""


class ContractError(RuntimeError):
    """An operation was called outside its documented preconditions."""


ComplexTensor = torch.Tensor


def _check_axis(name: str, axis: str, got: int, want: int) -> None:
    if got != want:
        raise DimensionError(f"{name}: axis '{axis}' has extent {got}, expected {want}")


def conv2d(
    input: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> torch.Tensor:
    """2-D cross-correlation of a ``[B, Cin, H, W]`` batch."""
    if input.ndim != 4:
        raise DimensionError(f"conv2d: input must be rank 4 (B,C,H,W), got rank {input.ndim}")
    cout, cin, kh, kw = weight.shape
    _check_axis("conv2d", "Cin", input.shape[1], cin)
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if padding < 0:
        raise ContractError("conv2d: padding must be non-negative")
    # output extent is floor((size + 2p - k) / stride) + 1, so a 3x3 stride-2
    # conv with padding 1 halves an even extent
    for axis, size, k in (("H", input.shape[2], kh), ("W", input.shape[3], kw)):
        if size + 2 * padding - k < 0:
            raise DimensionError(
                f"conv2d: axis '{axis}' extent {size} is smaller than kernel {k} "
                f"with padding {padding}"
            )
    if bias is not None:
        _check_axis("conv2d", "bias", bias.shape[0], cout)
    return F.conv2d(input, weight, bias, stride=stride, padding=padding)


def conv_transpose2d(
    input: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride: int = 2,
) -> torch.Tensor:
    """Transposed convolution with ``weight`` of shape ``[Cin, Cout, k, k]``.

    With ``k == stride`` each input pixel is painted onto a disjoint
    ``k x k`` output tile, so ``H' = stride * H``.
    """
    if input.ndim != 4:
        raise DimensionError(f"conv_transpose2d: input must be rank 4, got rank {input.ndim}")
    _check_axis("conv_transpose2d", "Cin", input.shape[1], weight.shape[0])
    if bias is not None:
        _check_axis("conv_transpose2d", "bias", bias.shape[0], weight.shape[1])
    return F.conv_transpose2d(input, weight, bias, stride=stride)


def linear(input: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Affine map over the trailing axis; ``weight`` is ``[Din, Dout]``."""
    _check_axis("linear", "Din", input.shape[-1], weight.shape[0])
    out = input @ weight
    if bias is not None:
        _check_axis("linear", "Dout", bias.shape[0], weight.shape[1])
        out = out + bias
    return out


def layer_norm(
    input: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, eps: float = LN_EPS
) -> torch.Tensor:
    _check_axis("layer_norm", "D", input.shape[-1], gamma.shape[0])
    return F.layer_norm(input, (input.shape[-1],), gamma, beta, eps)


def softmax(input: torch.Tensor) -> torch.Tensor:
    """Softmax over the trailing axis (max-subtracted)."""
    shifted = input - input.amax(dim=-1, keepdim=True).detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=-1, keepdim=True)


def activation(input: torch.Tensor, kind: str, slope: float = LEAKY_SLOPE) -> torch.Tensor:
    """Elementwise nonlinearity: ``"gelu"`` (tanh form) or ``"leaky_relu"``."""
    if kind == "gelu":
        return F.gelu(input, approximate="tanh")
    if kind == "leaky_relu":
        if not 0.0 < slope < 1.0:
            raise ContractError(f"leaky_relu slope must lie in (0, 1), got {slope}")
        return F.leaky_relu(input, slope)
    raise ContractError(f"unknown activation {kind!r}")


def backward(loss: torch.Tensor) -> None:
    """Populate ``.grad`` on every reachable leaf; gradients accumulate."""
    if loss.numel() != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.reshape(()).backward()


@contextlib.contextmanager
def precision(dtype: torch.dtype = torch.float64) -> Iterator[None]:
    """Temporarily switch the default dtype (64-bit verification mode)."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(dtype)
    try:
        yield
    finally:
        torch.set_default_dtype(previous)


RETRY_ABOVE = 1e-5  # errors above this are re-probed at h / 10 and 10 h


def finite_diff_check(
    f: Callable[..., torch.Tensor],
    inputs: Sequence[torch.Tensor],
    h: float = 1e-5,
    max_per_tensor: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between backprop and central differences.

    Roundoff in the numeric derivative is about ``eps * |f| / h``; keep ``f``
    of order one or smaller (a mean rather than a sum) so that structurally
    zero gradients stay under the ``1e-8`` denominator floor.  Elements that
    disagree at ``h`` are probed again at ``h / 10`` and ``10 h`` and keep the
    smallest error: the first steps inside a kink of a piecewise-linear
    activation, the second rescues gradients near the floor from roundoff.

    ``f(*inputs)`` must return a scalar.  Plain tensors are copied to 64-bit
    leaves; ``nn.Parameter`` inputs are used in place and must already be
    64-bit (call ``module.double()`` first), so ``f`` may close over a module
    and ignore its arguments.  ``max_per_tensor`` caps the number of probed
    elements per tensor (chosen at random with ``seed``).
    """
    leaves = []
    for t in inputs:
        if isinstance(t, nn.Parameter):
            if t.dtype != torch.float64:
                raise ContractError("finite_diff_check: parameters must be float64")
            leaves.append(t)
        else:
            leaves.append(t.detach().to(torch.float64).clone().requires_grad_(True))

    for t in leaves:
        t.grad = None
    backward(f(*leaves))
    analytic = [
        (t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)) for t in leaves
    ]

    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    with torch.no_grad():
        for t, g in zip(leaves, analytic):
            flat = t.view(-1)
            n = flat.numel()
            if max_per_tensor is not None and n > max_per_tensor:
                idx = torch.randperm(n, generator=gen)[:max_per_tensor].tolist()
            else:
                idx = range(n)
            gflat = g.reshape(-1)
            for i in idx:
                a = gflat[i].item()
                err = _rel_error(a, _central(f, leaves, flat, i, h))
                if err > RETRY_ABOVE:
                    # h / 10 steps inside a nearby leaky-ReLU kink, 10 h drowns
                    # roundoff on gradients close to the floor; a wrong
                    # gradient disagrees at every step size
                    for step in (h / 10, 10 * h):
                        err = min(err, _rel_error(a, _central(f, leaves, flat, i, step)))
                worst = max(worst, err)
    return worst


def _central(f, leaves, flat, i, h):
    orig = flat[i].item()
    flat[i] = orig + h
    fp = f(*leaves).item()
    flat[i] = orig - h
    fm = f(*leaves).item()
    flat[i] = orig
    return (fp - fm) / (2 * h)


def _rel_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


# Parameterized layers built on the ops above.


class Linear(nn.Module):
    """``y = x @ W + b`` with ``W`` stored as ``[Din, Dout]``, truncated-normal(0.02) init."""

    def __init__(self, din: int, dout: int, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(din, dout))
        nn.init.trunc_normal_(self.weight, std=0.02, a=-0.04, b=0.04)
        self.bias = nn.Parameter(torch.zeros(dout)) if bias else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, dim: int, eps: float = LN_EPS):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(dim))
        self.beta = nn.Parameter(torch.zeros(dim))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Conv2d(nn.Module):
    """Odd-kernel convolution with 'same' padding (``stride`` may shrink the output)."""

    def __init__(self, cin: int, cout: int, kernel_size: int = 3, stride: int = 1):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(cout, cin, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.empty(cout))
        bound = 1.0 / math.sqrt(cin * kernel_size * kernel_size)
        nn.init.uniform_(self.weight, -bound, bound)
        nn.init.uniform_(self.bias, -bound, bound)
        self.stride = stride
        self.padding = kernel_size // 2

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def zero_(self) -> "Conv2d":
        with torch.no_grad():
            self.weight.zero_()
            self.bias.zero_()
        return self


class ConvTranspose2d(nn.Module):
    """Stride-2, kernel-2 transposed convolution (exact x2 upsampling)."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(cin, cout, 2, 2))
        self.bias = nn.Parameter(torch.empty(cout))
        bound = 1.0 / math.sqrt(cin * 4)
        nn.init.uniform_(self.weight, -bound, bound)
        nn.init.uniform_(self.bias, -bound, bound)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv_transpose2d(x, self.weight, self.bias, stride=2)
