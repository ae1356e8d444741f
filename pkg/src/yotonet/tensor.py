"""Tape-based reverse-mode autodiff over float64 numpy arrays.

A :class:`Tape` records one closure per primitive op.  ``backward``
walks the records in reverse, popping the upstream gradient for each
output node and handing the pieces to the inputs.  Leaves are either
plain :class:`Tensor` values (gradients discarded unless some earlier
record consumes them) or :class:`Parameter` values, whose ``grad``
buffers accumulate across backward calls until ``zero_grad``.

Everything is float64.  Mixed precision buys nothing at these model
sizes and makes the finite-difference gradient checks needlessly loose.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

_ids = itertools.count()


class Tensor:
    """A dense float64 array registered with the autodiff id space."""

    __slots__ = ("data", "nid")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.nid = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Parameter(Tensor):
    """Trainable leaf with a persistent gradient buffer and a name path.

    Names are dotted paths such as ``"moe.expert3.W1"`` so checkpoints,
    adapter targeting, and debugging all address weights the same way.
    Gradients accumulate across backward calls; call :meth:`zero_grad`
    between optimization steps.
    """

    __slots__ = ("grad", "name")

    def __init__(self, data, name: str):
        super().__init__(data)
        self.grad = np.zeros_like(self.data)
        self.name = name

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class Tape:
    """Wengert list: one (output id, inputs, backward closure) per op."""

    def __init__(self):
        self.records = []

    def record(self, out: Tensor, inputs, backward_fn) -> Tensor:
        self.records.append((out.nid, tuple(inputs), backward_fn))
        return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable Parameter.grad.

    Args:
        tape: The tape that recorded the forward computation.
        loss: A scalar (single-element) tensor produced on that tape.

    Raises:
        ContractError: If ``loss`` is not a single-element tensor.
    """
    if loss.data.size != 1:
        raise ContractError(
            f"backward needs a scalar loss, got shape {loss.data.shape}"
        )
    grads: dict[int, np.ndarray] = {loss.nid: np.ones_like(loss.data)}
    for out_nid, inputs, backward_fn in reversed(tape.records):
        g = grads.pop(out_nid, None)
        if g is None:
            continue
        for inp, ig in zip(inputs, backward_fn(g)):
            if ig is None:
                continue
            if isinstance(inp, Parameter):
                inp.grad += ig
            elif inp.nid in grads:
                grads[inp.nid] = grads[inp.nid] + ig
            else:
                grads[inp.nid] = ig


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` back down to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return tape.record(out, (a, b), back)


def sub(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def back(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return tape.record(out, (a, b), back)


def mul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    ad, bd = a.data, b.data
    out = Tensor(ad * bd)

    def back(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return tape.record(out, (a, b), back)


def scale(tape: Tape, x: Tensor, c: float) -> Tensor:
    """Multiply by a python float (no gradient for the scalar)."""
    c = float(c)
    out = Tensor(x.data * c)
    return tape.record(out, (x,), lambda g: (g * c,))


def matmul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")
    ad, bd = a.data, b.data
    out = Tensor(ad @ bd)

    def back(g):
        return g @ bd.T, ad.T @ g

    return tape.record(out, (a, b), back)


def linear(tape: Tape, x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight (+ bias)`` for 2-d ``x``.

    Args:
        x: [batch, n_in].
        weight: [n_in, n_out].
        bias: [n_out] or None.

    Raises:
        ShapeError: On mismatched inner dimensions, naming both shapes.
    """
    if x.data.ndim != 2 or x.data.shape[1] != weight.data.shape[0]:
        raise ShapeError(
            f"linear: input {x.data.shape} incompatible with weight {weight.data.shape}"
        )
    xd, wd = x.data, weight.data
    y = xd @ wd
    if bias is None:
        out = Tensor(y)
        return tape.record(out, (x, weight), lambda g: (g @ wd.T, xd.T @ g))
    out = Tensor(y + bias.data)

    def back(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return tape.record(out, (x, weight, bias), back)


def conv1d_dilated(tape: Tape, x: Tensor, kernel: Tensor, dilation: int = 1) -> Tensor:
    """Dilated 1-d convolution with zero "same" padding.

    Args:
        x: [batch, c_in, length].
        kernel: [c_out, c_in, k] with k odd.
        dilation: Spacing between taps, >= 1.

    Returns:
        [batch, c_out, length]; output length always equals input length.

    Raises:
        ConfigError: If k is even ("same" padding would be asymmetric) or
            dilation < 1.
    """
    k = kernel.data.shape[2]
    if k % 2 == 0:
        raise ConfigError(f"conv1d_dilated: kernel size {k} must be odd")
    if dilation < 1:
        raise ConfigError(f"conv1d_dilated: dilation {dilation} must be >= 1")
    if x.data.ndim != 3 or x.data.shape[1] != kernel.data.shape[1]:
        raise ShapeError(
            f"conv1d_dilated: input {x.data.shape} vs kernel {kernel.data.shape}"
        )
    length = x.data.shape[2]
    pad = (k - 1) * dilation // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    # taps[j] is the input window aligned with kernel position j
    taps = np.stack([xp[:, :, j * dilation : j * dilation + length] for j in range(k)])
    kd = kernel.data
    out = Tensor(np.einsum("ocj,jbcl->bol", kd, taps))

    def back(g):
        gk = np.einsum("bol,jbcl->ocj", g, taps)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j * dilation : j * dilation + length] += np.einsum(
                "bol,oc->bcl", g, kd[:, :, j]
            )
        return gxp[:, :, pad : pad + length], gk

    return tape.record(out, (x, kernel), back)


def relu(tape: Tape, x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    return tape.record(out, (x,), lambda g: (g * mask,))


def sigmoid(tape: Tape, x: Tensor) -> Tensor:
    xd = x.data
    s = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))),
                 np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))
    out = Tensor(s)
    return tape.record(out, (x,), lambda g: (g * s * (1.0 - s),))


def softmax(tape: Tape, x: Tensor) -> Tensor:
    """Row softmax over the last axis, max-subtracted for stability."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return tape.record(out, (x,), back)


def pool_mean(tape: Tape, x: Tensor) -> Tensor:
    """Mean over the token axis: [batch, T, d] -> [batch, d].

    Raises:
        ContractError: If T == 0 (mean of an empty sequence).
    """
    if x.data.ndim != 3:
        raise ShapeError(f"pool_mean expects [batch, T, d], got {x.data.shape}")
    t = x.data.shape[1]
    if t == 0:
        raise ContractError("pool_mean: empty token sequence (T == 0)")
    out = Tensor(x.data.mean(axis=1))

    def back(g):
        return (np.broadcast_to(g[:, None, :] / t, x.data.shape).copy(),)

    return tape.record(out, (x,), back)


def pool_attention(tape: Tape, x: Tensor, w: Tensor) -> Tensor:
    """Attention-weighted pooling: a = softmax(x @ w), out = sum_t a_t x_t.

    Args:
        x: [batch, T, d] token sequence.
        w: [d] learned scoring vector.

    Returns:
        [batch, d]; each row is a convex combination of that row's tokens.
    """
    xd, wd = x.data, w.data
    s = xd @ wd
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    a = e / e.sum(axis=1, keepdims=True)
    out = Tensor(np.einsum("bt,btd->bd", a, xd))

    def back(g):
        ga = np.einsum("bd,btd->bt", g, xd)
        gs = a * (ga - (ga * a).sum(axis=1, keepdims=True))
        gx = a[:, :, None] * g[:, None, :] + gs[:, :, None] * wd[None, None, :]
        gw = np.einsum("bt,btd->d", gs, xd)
        return gx, gw

    return tape.record(out, (x, w), back)


def avg_pool1d(tape: Tape, x: Tensor, stride: int) -> Tensor:
    """Non-overlapping mean pooling along the last axis of [B, C, L]."""
    b, c, length = x.data.shape
    if stride < 1 or length % stride != 0:
        raise ConfigError(f"avg_pool1d: length {length} not divisible by stride {stride}")
    out = Tensor(x.data.reshape(b, c, length // stride, stride).mean(axis=3))

    def back(g):
        return (np.repeat(g, stride, axis=2) / stride,)

    return tape.record(out, (x,), back)


def mean_axis(tape: Tape, x: Tensor, axis: int) -> Tensor:
    n = x.data.shape[axis]
    out = Tensor(x.data.mean(axis=axis))

    def back(g):
        return (np.broadcast_to(np.expand_dims(g / n, axis), x.data.shape).copy(),)

    return tape.record(out, (x,), back)


def sum_all(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())
    return tape.record(out, (x,), lambda g: (np.broadcast_to(g, x.data.shape).copy(),))


def mean_all(tape: Tape, x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(x.data.mean())
    return tape.record(
        out, (x,), lambda g: (np.broadcast_to(g / n, x.data.shape).copy(),)
    )


def reshape(tape: Tape, x: Tensor, shape) -> Tensor:
    orig = x.data.shape
    out = Tensor(x.data.reshape(shape))
    return tape.record(out, (x,), lambda g: (g.reshape(orig),))


def transpose(tape: Tape, x: Tensor, axes) -> Tensor:
    inv = tuple(np.argsort(axes))
    out = Tensor(x.data.transpose(axes))
    return tape.record(out, (x,), lambda g: (g.transpose(inv),))


def concat(tape: Tape, parts, axis: int = 0) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return tape.record(out, tuple(parts), back)


def take_rows(tape: Tape, x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows along axis 0; backward scatters (duplicates add)."""
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(x.data[idx])

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return tape.record(out, (x,), back)


def scatter_rows(tape: Tape, vals: Tensor, idx: np.ndarray, n_rows: int) -> Tensor:
    """Place ``vals`` at rows ``idx`` of a zero tensor with n_rows rows."""
    idx = np.asarray(idx, dtype=np.intp)
    buf = np.zeros((n_rows,) + vals.data.shape[1:])
    buf[idx] = vals.data
    out = Tensor(buf)
    return tape.record(out, (vals,), lambda g: (g[idx],))


def select_column(tape: Tape, x: Tensor, col: int) -> Tensor:
    """Column slice [B, N] -> [B]."""
    out = Tensor(x.data[:, col].copy())

    def back(g):
        gx = np.zeros_like(x.data)
        gx[:, col] = g
        return (gx,)

    return tape.record(out, (x,), back)


def topk_mask(tape: Tape, p: Tensor, k: int) -> Tensor:
    """Hard 0/1 mask of the k largest entries per row (last axis).

    Ties are broken toward the lowest index.  The mask is a constant in
    the backward pass (straight-through: no gradient flows through the
    selection itself).

    Raises:
        ConfigError: If k < 1 or k > row length.
    """
    n = p.data.shape[-1]
    if k < 1 or k > n:
        raise ConfigError(f"topk_mask: k={k} outside 1..{n}")
    rows = p.data.reshape(-1, n)
    mask = np.zeros_like(rows)
    # stable argsort on the negated row keeps original order among equal
    # values, so the lowest index wins ties
    order = np.argsort(-rows, axis=1, kind="stable")[:, :k]
    np.put_along_axis(mask, order, 1.0, axis=1)
    out = Tensor(mask.reshape(p.data.shape))
    return tape.record(out, (p,), lambda g: (None,))


def routed_fractions(tape: Tape, p: Tensor, mask: Tensor, k: int) -> Tensor:
    """Per-expert routed fraction with a straight-through backward.

    Forward counts the hard assignments: f_i = sum_b mask[b, i] / (B * k),
    which always sums to 1 exactly.  Backward treats f as the batch mean
    of the soft probabilities, d f_i / d p[b, i] = 1/B, so the balance
    loss can still shape the gate while the forward stays hard.
    """
    bsz = p.data.shape[0]
    f = mask.data.sum(axis=0) / (bsz * k)
    out = Tensor(f)

    def back(g):
        return np.broadcast_to(g / bsz, p.data.shape).copy(), None

    return tape.record(out, (p, mask), back)
