"""Dense float64 tensors with a recording tape for reverse-mode gradients.

Only the primitives needed by the three classifiers are provided. Operations
record themselves on the innermost active :class:`Tape` of the current thread
when at least one input requires a gradient; outside a tape they are plain
numpy computations, which is how evaluation runs.

    >>> W = Tensor(np.eye(2), requires_grad=True)
    >>> with Tape() as tape:
    ...     y = sum_all(dense(Tensor([1.0, 2.0]), W, Tensor(np.zeros(2))))
    >>> backward(tape, y, [W])[0]
    array([[1., 1.],
           [2., 2.]])
"""

from __future__ import annotations

import math
import struct
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BoundsError, ConfigError, NumericError, ShapeError, UsageError

__all__ = [
    "Tensor", "Tape", "ParamSet", "backward", "grad_check",
    "embed_lookup", "conv1d", "conv1d_bank", "relu", "max_over_time", "concat",
    "unstack", "dense", "lstm_cell", "blend", "mul_const", "dropout",
    "dropout_mask", "softmax", "softmax_xent", "sum_all", "pick",
    "glorot_uniform", "sigmoid",
]

_local = threading.local()


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive applications.

    Used as a context manager; nesting is allowed and the innermost tape wins.
    A tape can be consumed by exactly one :func:`backward` call.
    """

    def __init__(self):
        self.entries: list[tuple[tuple[Tensor, ...], tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self.entries)


def _current_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(outputs, inputs, backward_fn):
    """Attach a backward rule. ``backward_fn`` maps output grads to input grads."""
    tape = _current_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return
    for out in outputs:
        out.requires_grad = True
    tape.entries.append((tuple(outputs), tuple(inputs), backward_fn))


def backward(tape: Tape, loss: Tensor, wrt: Sequence[Tensor]):
    """Reverse accumulation over ``tape`` starting from scalar ``loss``.

    Returns one gradient array per tensor in ``wrt`` (zeros when the tensor
    did not influence the loss). Intermediate tensors may be requested too.
    """
    if tape.consumed:
        raise UsageError("backward called twice on the same tape")
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape.consumed = True
    keep = {id(t) for t in wrt}
    grads = {id(loss): np.ones_like(loss.data)}
    for outputs, inputs, fn in reversed(tape.entries):
        out_grads = []
        live = False
        for out in outputs:
            key = id(out)
            g = grads.get(key) if key in keep else grads.pop(key, None)
            if g is not None:
                live = True
            out_grads.append(g)
        if not live:
            continue
        out_grads = [np.zeros_like(o.data) if g is None else g
                     for o, g in zip(outputs, out_grads)]
        in_grads = fn(out_grads[0] if len(outputs) == 1 else out_grads)
        for t, g in zip(inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
    return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def embed_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise BoundsError(f"embedding id out of range [0, {V})")
    out = Tensor(table.data[ids])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    _record((out,), (table,), bwd)
    return out


def _pad_amounts(w, padding):
    if padding == "valid":
        return 0, 0
    if padding == "same":
        left = (w - 1) // 2
        return left, w - 1 - left
    raise ConfigError(f"unknown padding {padding!r}")


def conv1d(x: Tensor, W: Tensor, b: Tensor, padding="valid") -> Tensor:
    """Convolve over the time axis with kernels spanning the full feature axis.

    ``x`` is (L, D) or (B, L, D); ``W`` is (w, D, F). Output is (B, L', F)
    with L' = L - w + 1 for ``valid`` and L for ``same``.
    """
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    w, D, F = W.shape
    if xd.shape[2] != D:
        raise ShapeError(f"conv input feature dim {xd.shape[2]} != kernel dim {D}")
    B, L, _ = xd.shape
    left, right = _pad_amounts(w, padding)
    if padding == "valid" and w > L:
        raise ShapeError(f"window {w} longer than sequence {L} in valid mode")
    xp = np.pad(xd, ((0, 0), (left, right), (0, 0))) if left or right else xd
    Lp = xp.shape[1]
    Lo = Lp - w + 1
    # (B, Lo, D, w) -> (B, Lo, w, D)
    cols = sliding_window_view(xp, w, axis=1).transpose(0, 1, 3, 2).reshape(B * Lo, w * D)
    Wm = W.data.reshape(w * D, F)
    y = (cols @ Wm + b.data).reshape(B, Lo, F)
    out = Tensor(y[0] if squeeze else y)

    def bwd(g):
        g2 = (g[None] if squeeze else g).reshape(B * Lo, F)
        gW = (cols.T @ g2).reshape(w, D, F)
        gb = g2.sum(axis=0)
        gx = None
        if x.requires_grad:
            dcols = (g2 @ Wm.T).reshape(B, Lo, w, D)
            gxp = np.zeros((B, Lp, D))
            for i in range(w):
                gxp[:, i:i + Lo, :] += dcols[:, :, i, :]
            gx = gxp[:, left:Lp - right, :] if (left or right) else gxp
            if squeeze:
                gx = gx[0]
        return gx, gW, gb

    _record((out,), (x, W, b), bwd)
    return out


def conv1d_bank(x: Tensor, filters: Sequence[tuple[Tensor, Tensor]], padding="valid"):
    """Apply one kernel bank per window size; returns a list of feature maps."""
    return [conv1d(x, W, b, padding) for W, b in filters]


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    _record((out,), (x,), lambda g: (g * mask,))
    return out


def sigmoid(z):
    # branch-free stable form
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def max_over_time(x: Tensor) -> Tensor:
    """Max over the second-to-last axis. Ties send the gradient to the first index."""
    axis = x.data.ndim - 2
    if x.shape[axis] < 1:
        raise ShapeError("max_over_time on an empty sequence")
    idx = np.argmax(x.data, axis=axis)
    out = Tensor(np.take_along_axis(x.data, np.expand_dims(idx, axis), axis).squeeze(axis))

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (gx,)

    _record((out,), (x,), bwd)
    return out


def concat(xs: Sequence[Tensor], axis=-1) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in xs], axis=axis))
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=axis))

    _record((out,), tuple(xs), bwd)
    return out


def unstack(x: Tensor, axis=1) -> list[Tensor]:
    """Split along ``axis`` into a list of tensors with that axis removed."""
    outs = [Tensor(a) for a in np.moveaxis(x.data, axis, 0)]

    def bwd(gs):
        if len(outs) == 1:
            gs = [gs]
        return (np.stack(gs, axis=axis),)

    _record(outs, (x,), bwd)
    return outs


def dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    A, Bn = W.shape
    if x.shape[-1] != A or b.shape != (Bn,):
        raise ShapeError(f"dense: x{x.shape} W{W.shape} b{b.shape}")
    out = Tensor(x.data @ W.data + b.data)

    def bwd(g):
        x2 = x.data.reshape(-1, A)
        g2 = g.reshape(-1, Bn)
        gx = g @ W.data.T if x.requires_grad else None
        return gx, x2.T @ g2, g2.sum(axis=0)

    _record((out,), (x, W, b), bwd)
    return out


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, Wx: Tensor, Wh: Tensor, b: Tensor):
    """One LSTM step with gate layout [input, forget, output, candidate].

    Returns ``(h_t, c_t)``; works on (D,) or batched (B, D) inputs.
    """
    H = h_prev.shape[-1]
    if Wx.shape != (x.shape[-1], 4 * H) or Wh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm_cell: x{x.shape} h{h_prev.shape} Wx{Wx.shape} Wh{Wh.shape} b{b.shape}")
    z = x.data @ Wx.data + h_prev.data @ Wh.data + b.data
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    o = sigmoid(z[..., 2 * H:3 * H])
    gg = np.tanh(z[..., 3 * H:])
    c = f * c_prev.data + i * gg
    tc = np.tanh(c)
    h_out = Tensor(o * tc)
    c_out = Tensor(c)

    def bwd(gs):
        gh, gc = gs
        dc = gc + gh * o * (1.0 - tc * tc)
        do = gh * tc
        di = dc * gg
        df = dc * c_prev.data
        dg = dc * i
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            do * o * (1.0 - o),
            dg * (1.0 - gg * gg),
        ], axis=-1)
        dz2 = dz.reshape(-1, 4 * H)
        gWx = x.data.reshape(-1, x.shape[-1]).T @ dz2
        gWh = h_prev.data.reshape(-1, H).T @ dz2
        gx = dz @ Wx.data.T if x.requires_grad else None
        ghp = dz @ Wh.data.T if h_prev.requires_grad else None
        return gx, ghp, dc * f, gWx, gWh, dz2.sum(axis=0)

    _record((h_out, c_out), (x, h_prev, c_prev, Wx, Wh, b), bwd)
    return h_out, c_out


def blend(mask, a: Tensor, b: Tensor) -> Tensor:
    """Select ``a`` where ``mask`` is true, else ``b`` (broadcast, exact copy)."""
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, a.data, b.data))

    def bwd(g):
        return np.where(mask, g, 0.0), np.where(mask, 0.0, g)

    _record((out,), (a, b), bwd)
    return out


def mul_const(x: Tensor, m) -> Tensor:
    """Elementwise product with a constant (non-differentiated) array."""
    m = np.asarray(m, dtype=np.float64)
    out = Tensor(x.data * m)
    if out.shape != x.shape:
        raise ShapeError(f"mask {m.shape} would broadcast input {x.shape}")
    _record((out,), (x,), lambda g: (g * m,))
    return out


def _check_rate(rate):
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability ``rate``, else 1/(1-rate)."""
    _check_rate(rate)
    keep = 1.0 - rate
    if rate == 0.0:
        return np.ones(shape)
    return (rng.random(shape) < keep) / keep


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    _check_rate(rate)
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise UsageError("train-mode dropout needs a random generator")
    return mul_const(x, dropout_mask(x.shape, rate, rng))


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: Tensor, labels):
    """Mean cross-entropy over the batch. Returns ``(probabilities, loss)``.

    ``logits`` may be a single row (C,) with an integer label.
    """
    single = logits.data.ndim == 1
    z = logits.data[None] if single else logits.data
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logsum[:, None]
    p = np.exp(logp)
    loss = Tensor(-logp[np.arange(n), y].mean())

    def bwd(g):
        d = p.copy()
        d[np.arange(n), y] -= 1.0
        d *= g / n
        return (d[0] if single else d,)

    _record((loss,), (logits,), bwd)
    return (p[0] if single else p), loss


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())
    _record((out,), (x,), lambda g: (np.full_like(x.data, float(g)),))
    return out


def pick(x: Tensor, idx) -> Tensor:
    """Row-wise gather ``x[r, idx[r]]`` from a (B, C) tensor."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(x.shape[0])
    out = Tensor(x.data[rows, idx])

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    _record((out,), (x,), bwd)
    return out


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


_MAGIC = b"ADLN1"


class ParamSet(dict):
    """Named trainable tensors. Insertion order is the canonical order."""

    def add(self, name, value):
        if name in self:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self[name] = t
        return t

    def gradients(self, tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
        names = list(self)
        grads = backward(tape, loss, [self[n] for n in names])
        return dict(zip(names, grads))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.items()}

    def restore(self, arrays: dict[str, np.ndarray]):
        for k, v in arrays.items():
            self[k].data[...] = v

    def num_parameters(self):
        return sum(t.data.size for t in self.values())

    def to_bytes(self) -> bytes:
        parts = [_MAGIC]
        for name, t in self.items():
            raw = name.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
            parts.append(struct.pack("<I", t.data.ndim))
            parts.append(struct.pack(f"<{t.data.ndim}Q", *t.data.shape))
            parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ParamSet":
        if buf[:len(_MAGIC)] != _MAGIC:
            raise UsageError("not a parameter container (bad magic)")
        ps = cls()
        pos = len(_MAGIC)
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            ps.add(name, data.astype(np.float64))
        return ps

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ParamSet":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def grad_check(f: Callable[[ParamSet], Tensor], params: ParamSet, eps=1e-5,
               analytic: dict[str, np.ndarray] | None = None,
               names: Iterable[str] | None = None) -> float:
    """Max relative error between the tape gradient of ``f`` and central differences.

    The relative error of a coordinate is |a - n| / max(|a|, |n|, 1e-8).
    ``analytic`` replaces the tape gradient (used to test the harness itself).
    """
    if eps <= 0:
        raise ConfigError("eps must be positive")
    if analytic is None:
        with Tape() as tape:
            loss = f(params)
        if not np.isfinite(loss.data).all():
            raise NumericError("objective is not finite")
        analytic = params.gradients(tape, loss)
    worst = 0.0
    for name in (names if names is not None else list(params)):
        p = params[name].data
        a = analytic[name]
        flat = p.reshape(-1)
        af = a.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = float(f(params).data)
            flat[j] = orig - eps
            fm = float(f(params).data)
            flat[j] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError(f"objective not finite while perturbing {name}[{j}]")
            num = (fp - fm) / (2 * eps)
            err = abs(af[j] - num) / max(abs(af[j]), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
