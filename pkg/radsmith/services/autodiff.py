"""Minimal reverse-mode autodiff over NCHW numpy arrays.

Each op returns a Tensor that remembers its parents and a closure mapping
the output gradient onto them. `backward(loss)` orders the recorded
operations topologically, runs the closures in reverse and then drops the
tape. Layers, losses, Adam and a central-difference checker live here too.
"""
import logging
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from radsmith.core.errors import ArgumentError
from radsmith.models.schemas import GradCheckReport
from radsmith.services.imagecore import resample, resize_matrix
from radsmith.services.metrics import C1, C2, SSIM_WINDOW, gaussian_window_1d

logger = logging.getLogger(__name__)

_DTYPES = {"float64": np.float64, "float32": np.float32}
_default_dtype = np.float64
_grad_enabled = True


def set_default_dtype(name: str) -> None:
    """Select float64 (tests, gradient checks) or float32 (faster training)"""
    global _default_dtype
    if name not in _DTYPES:
        raise ArgumentError(f"unsupported dtype '{name}'")
    _default_dtype = _DTYPES[name]


def get_default_dtype():
    return _default_dtype


@contextmanager
def no_grad():
    """Run forward passes without recording the tape"""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """Array with an optional gradient accumulator"""

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None,
                 copy: bool = True):
        dtype = dtype or _default_dtype
        self.data = np.array(data, dtype=dtype, copy=True) if copy else np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = np.zeros_like(self.data) if requires_grad else None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = ""

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str,
          backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result, recording it on the tape when any parent needs gradients"""
    out = Tensor(data, dtype=data.dtype, copy=False)
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g.astype(t.data.dtype, copy=False)


def _reduce_to(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    # only the (N, C, 1, 1) over (N, C, H, W) case is supported
    for big, small in ((a.shape, b.shape), (b.shape, a.shape)):
        if len(big) == 4 and len(small) == 4 and small[:2] == big[:2] and small[2:] == (1, 1):
            return
    raise ArgumentError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# Graph
# ---------------------------------------------------------------------------

class Graph:
    """Topologically ordered operation records reachable from an output"""

    def __init__(self, order: List[Tensor]):
        self.order = order

    @classmethod
    def from_output(cls, output: Tensor) -> "Graph":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def run(self, output: Tensor) -> None:
        output.grad = np.ones_like(output.data)
        for node in reversed(self.order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def release(self) -> None:
        for node in self.order:
            if node._parents:
                node._parents = ()
                node._backward = None


def backward(loss: Tensor) -> None:
    """Accumulate dloss/dp into every tensor with requires_grad"""
    if loss.data.ndim != 0:
        raise ArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = Graph.from_output(loss)
    # interior nodes start from zero each pass
    for node in graph.order:
        if node._parents:
            node.grad = None
    graph.run(loss)
    graph.release()


# ---------------------------------------------------------------------------
# Elementwise ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def _backward(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", _backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")

    def _backward(g):
        _accumulate(a, _reduce_to(g * b.data, a.shape))
        _accumulate(b, _reduce_to(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", _backward)


def scale(x: Tensor, factor: float) -> Tensor:
    def _backward(g):
        _accumulate(x, g * factor)

    return _make(x.data * factor, (x,), "scale", _backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def _backward(g):
        _accumulate(x, g * mask)

    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), "relu", _backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0

    def _backward(g):
        _accumulate(x, np.where(mask, g, slope * g))

    return _make(np.where(mask, x.data, slope * x.data), (x,), "leaky_relu", _backward)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)

    def _backward(g):
        _accumulate(x, g * s * (1 - s))

    return _make(s, (x,), "sigmoid", _backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout; the identity when not training or p == 0"""
    if not 0.0 <= p < 1.0:
        raise ArgumentError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def _backward(g):
        _accumulate(x, g * mask)

    return _make(x.data * mask, (x,), "dropout", _backward)


# ---------------------------------------------------------------------------
# Structural ops
# ---------------------------------------------------------------------------

def _check_nchw(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ArgumentError(f"{op} expects an NCHW tensor, got shape {x.shape}")


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1,
           padding: Optional[int] = None) -> Tensor:
    """Zero-padded 2-D correlation; padding defaults to (k - 1) / 2"""
    _check_nchw(x, "conv2d")
    if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
        raise ArgumentError(f"conv2d weight must be (Cout, Cin, k, k) with odd k, got {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ArgumentError(f"conv2d expects {w.shape[1]} input channels, got {x.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ArgumentError(f"conv2d bias must have shape ({w.shape[0]},), got {b.shape}")
    if stride < 1:
        raise ArgumentError(f"stride must be >= 1, got {stride}")

    k = w.shape[2]
    pad = (k - 1) // 2 if padding is None else padding
    n, c, h, wd = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[np.newaxis, :, np.newaxis, np.newaxis]
    out = np.ascontiguousarray(out)
    ho, wo = out.shape[2:]

    def _backward(g):
        if w.requires_grad:
            _accumulate(w, np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3])))
        if b is not None and b.requires_grad:
            _accumulate(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.tensordot(g, w.data, axes=([1], [0]))  # (N, Ho, Wo, C, k, k)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                        dcols[..., i, j].transpose(0, 3, 1, 2)
            _accumulate(x, dxp[:, :, pad:pad + h, pad:pad + wd])

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, "conv2d", _backward)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """(N, F) @ (O, F)^T + b"""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ArgumentError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def _backward(g):
        _accumulate(w, g.T @ x.data)
        if b is not None:
            _accumulate(b, g.sum(axis=0))
        _accumulate(x, g @ w.data)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, "linear", _backward)


def flatten(x: Tensor) -> Tensor:
    shape = x.shape

    def _backward(g):
        _accumulate(x, g.reshape(shape))

    return _make(x.data.reshape(shape[0], -1), (x,), "flatten", _backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, shape (N, C, 1, 1)"""
    _check_nchw(x, "global_avg_pool")
    h, w = x.shape[2:]
    if h < 1 or w < 1:
        raise ArgumentError("global_avg_pool needs H, W >= 1")

    def _backward(g):
        _accumulate(x, np.broadcast_to(g / (h * w), x.shape))

    return _make(x.data.mean(axis=(2, 3), keepdims=True), (x,), "global_avg_pool", _backward)


def _shuffle(data: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = data.shape
    out_c = c // (r * r)
    return data.reshape(n, out_c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, out_c, h * r, w * r)


def _unshuffle(data: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = data.shape
    return data.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space: (N, C*r^2, H, W) -> (N, C, rH, rW)"""
    _check_nchw(x, "pixel_shuffle")
    if r < 1 or x.shape[1] % (r * r):
        raise ArgumentError(f"pixel_shuffle: {x.shape[1]} channels not divisible by r^2 = {r * r}")

    def _backward(g):
        _accumulate(x, _unshuffle(g, r))

    return _make(np.ascontiguousarray(_shuffle(x.data, r)), (x,), "pixel_shuffle", _backward)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Space-to-depth, the inverse of pixel_shuffle"""
    _check_nchw(x, "pixel_unshuffle")
    if r < 1 or x.shape[2] % r or x.shape[3] % r:
        raise ArgumentError(f"pixel_unshuffle: spatial size {x.shape[2:]} not divisible by {r}")

    def _backward(g):
        _accumulate(x, _shuffle(g, r))

    return _make(np.ascontiguousarray(_unshuffle(x.data, r)), (x,), "pixel_unshuffle", _backward)


def resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Differentiable bicubic resampling (same operator as the image pipeline)"""
    _check_nchw(x, "resize")
    h, w = x.shape[2:]
    wh = resize_matrix(h, out_h)
    ww = resize_matrix(w, out_w)
    out = resample(x.data, out_h, out_w).astype(x.dtype, copy=False)

    def _backward(g):
        _accumulate(x, np.matmul(np.matmul(wh.T, g), ww))

    return _make(out, (x,), "resize", _backward)


def mean(x: Tensor) -> Tensor:
    def _backward(g):
        _accumulate(x, np.broadcast_to(g / x.data.size, x.shape))

    return _make(np.asarray(x.data.mean()), (x,), "mean", _backward)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """sum(x * weights) with constant weights"""
    def _backward(g):
        _accumulate(x, g * weights)

    return _make(np.asarray((x.data * weights).sum()), (x,), "weighted_sum", _backward)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ArgumentError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference"""
    _check_same(pred, target, "l1_loss")
    diff = pred.data - target.data
    n = diff.size

    def _backward(g):
        s = np.sign(diff) * (g / n)
        _accumulate(pred, s)
        _accumulate(target, -s)

    return _make(np.asarray(np.abs(diff).mean()), (pred, target), "l1_loss", _backward)


def _window_mean(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Separable weighted mean over valid positions of the last two axes"""
    k = w.size
    rows = sliding_window_view(a, k, axis=-2) @ w
    return sliding_window_view(rows, k, axis=-1) @ w


def _window_mean_adjoint(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    k = w.size
    padded = np.pad(g, [(0, 0)] * (g.ndim - 2) + [(k - 1, k - 1), (k - 1, k - 1)])
    return _window_mean(padded, w[::-1])


def _ssim_terms(x: np.ndarray, y: np.ndarray, w: np.ndarray):
    mx, my = _window_mean(x, w), _window_mean(y, w)
    exx, eyy, exy = _window_mean(x * x, w), _window_mean(y * y, w), _window_mean(x * y, w)
    a1 = 2.0 * mx * my + C1
    a2 = 2.0 * (exy - mx * my) + C2
    b1 = mx * mx + my * my + C1
    b2 = (exx - mx * mx) + (eyy - my * my) + C2
    return mx, my, a1, a2, b1, b2


def _ssim_mean_grad(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """d mean(SSIM map) / dx"""
    mx, my, a1, a2, b1, b2 = _ssim_terms(x, y, w)
    den = b1 * b2
    s = a1 * a2 / den
    d_mx = 2.0 * my * (a2 - a1) / den - s * 2.0 * mx * (b2 - b1) / den
    d_exx = -s / b2
    d_exy = 2.0 * a1 / den
    m = s.size
    return (_window_mean_adjoint(d_mx, w) + 2.0 * x * _window_mean_adjoint(d_exx, w)
            + y * _window_mean_adjoint(d_exy, w)) / m


def ssim_loss(pred: Tensor, target: Tensor, window: int = SSIM_WINDOW) -> Tensor:
    """1 - SSIM with the metric's Gaussian window, averaged over valid positions of every map"""
    _check_same(pred, target, "ssim_loss")
    _check_nchw(pred, "ssim_loss")
    if min(pred.shape[2:]) < window:
        raise ArgumentError(f"ssim_loss needs H, W >= {window}, got {pred.shape[2:]}")
    x, y = pred.data, target.data
    w = gaussian_window_1d(window).astype(x.dtype)
    _, _, a1, a2, b1, b2 = _ssim_terms(x, y, w)
    value = 1.0 - (a1 * a2 / (b1 * b2)).mean()

    def _backward(g):
        if pred.requires_grad:
            _accumulate(pred, -g * _ssim_mean_grad(x, y, w))
        if target.requires_grad:
            _accumulate(target, -g * _ssim_mean_grad(y, x, w))

    return _make(np.asarray(value, dtype=x.dtype), (pred, target), "ssim_loss", _backward)


def bce_with_logits(logit: Tensor, label: Union[float, np.ndarray, Tensor]) -> Tensor:
    """Mean binary cross-entropy on logits, log-sum-exp stabilized"""
    t = label.data if isinstance(label, Tensor) else np.broadcast_to(np.asarray(label, dtype=logit.dtype), logit.shape)
    if t.shape != logit.shape:
        raise ArgumentError(f"bce_with_logits: shape mismatch {logit.shape} vs {t.shape}")
    z = logit.data
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def _backward(g):
        _accumulate(logit, g * (expit(z) - t) / n)

    return _make(np.asarray(loss.mean()), (logit,), "bce_with_logits", _backward)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Module:
    """Container that registers Tensor parameters and child modules by attribute name"""

    def __init__(self):
        object.__setattr__(self, "_parameters", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> None:
        setattr(self, name, module)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._parameters.items():
            yield prefix + name, p
        for name, module in self._modules.items():
            yield from module.named_parameters(prefix + name + ".")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self) -> "Module":
        object.__setattr__(self, "training", True)
        for module in self._modules.values():
            module.train()
        return self

    def eval(self) -> "Module":
        object.__setattr__(self, "training", False)
        for module in self._modules.values():
            module.eval()
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError("Subclasses of Module must implement a forward method.")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    """k x k convolution with fan-in scaled uniform init, or exact zeros"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, zero_init: bool = False):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        fan_in = in_channels * kernel_size * kernel_size
        if zero_init:
            weight, bias = np.zeros(shape), np.zeros(out_channels)
        else:
            weight, bias = _uniform(rng, shape, fan_in), _uniform(rng, (out_channels,), fan_in)
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(bias, requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, zero_init: bool = False):
        super().__init__()
        if zero_init:
            weight, bias = np.zeros((out_features, in_features)), np.zeros(out_features)
        else:
            weight = _uniform(rng, (out_features, in_features), in_features)
            bias = _uniform(rng, (out_features,), in_features)
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(bias, requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Moments for one parameter group"""
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """Bias-corrected Adam update, then zero the gradients; lr == 0 leaves params untouched"""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    if state.lr != 0.0:
        c1 = 1.0 - state.beta1 ** state.step
        c2 = 1.0 - state.beta2 ** state.step
        for p, m, v in zip(params, state.m, state.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            p.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    for p in params:
        p.zero_grad()


@dataclass
class ParamGroup:
    name: str
    params: List[Tensor]
    state: AdamState


class Adam:
    """Adam over named parameter groups, each with its own learning rate"""

    def __init__(self, groups: Dict[str, Tuple[Sequence[Tensor], float]],
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.groups = [
            ParamGroup(name, list(params), AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps))
            for name, (params, lr) in groups.items()
        ]

    def step(self) -> None:
        for group in self.groups:
            adam_step(group.params, group.state)

    def zero_grad(self) -> None:
        for group in self.groups:
            for p in group.params:
                p.zero_grad()

    def lrs(self) -> Dict[str, float]:
        return {group.name: group.state.lr for group in self.groups}


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def grad_check(op: Callable[..., Tensor], inputs: Sequence[Tensor], tol: float = 1e-4, eps: float = 1e-3,
               max_elements: Optional[int] = None, rng: Optional[np.random.Generator] = None,
               name: str = "op") -> GradCheckReport:
    """Compare analytic gradients against central differences.

    Non-scalar outputs are reduced with a fixed random projection. The error
    per input is ||analytic - numeric|| / (||analytic|| + ||numeric||).
    """
    rng = rng or np.random.default_rng(0)
    out = op(*inputs)
    projection = None if out.ndim == 0 else rng.standard_normal(out.shape)

    def objective() -> Tensor:
        result = op(*inputs)
        return result if projection is None else weighted_sum(result, projection)

    for t in inputs:
        if t.requires_grad:
            t.zero_grad()
    backward(objective())
    analytic = [None if t.grad is None else t.grad.copy() for t in inputs]

    per_input: Dict[str, float] = {}
    for index, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        flat = t.data.reshape(-1)
        candidates = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            candidates = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        numeric = np.zeros(candidates.size)
        with no_grad():
            for j, pos in enumerate(candidates):
                original = flat[pos]
                flat[pos] = original + eps
                plus = objective().item()
                flat[pos] = original - eps
                minus = objective().item()
                flat[pos] = original
                numeric[j] = (plus - minus) / (2.0 * eps)
        exact = analytic[index].reshape(-1)[candidates]
        denom = np.linalg.norm(exact) + np.linalg.norm(numeric)
        error = 0.0 if denom == 0.0 else float(np.linalg.norm(exact - numeric) / denom)
        per_input[t.name or f"input{index}"] = error

    max_error = max(per_input.values()) if per_input else 0.0
    report = GradCheckReport(name=name, max_rel_error=max_error, tol=tol, per_input=per_input)
    logger.debug("grad_check %s: max rel err %.3e", name, max_error)
    return report
