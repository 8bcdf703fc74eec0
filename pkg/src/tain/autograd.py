"""Dense N-D tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array (float32 by default, float64 for
gradient verification) and every differentiable operation appends its
backward rule to a per-thread tape (:class:`Graph`).  Calling
:func:`backward` on a scalar loss replays the tape in exact reverse
execution order, accumulating gradients by summation into ``.grad`` of
every participating tensor that has ``requires_grad`` set.  A tape can
be swept once; a second sweep without a fresh forward pass raises
:class:`~tain.errors.GraphError`.

Layout conventions: row-major, channels-last ``(h, w, c)`` for images
and feature maps.  Elementwise operations accept operands of exactly
equal shape or a scalar; any other shape adaptation must go through an
explicit op (``broadcast_to``, ``reshape``, ``concat``, ...), which
keeps shape bugs loud.

Tensors are treated as immutable once created, except for gradient
accumulation during a sweep and in-place parameter updates performed by
an optimizer between graphs.  A graph and its tensors belong to one
thread; independent graphs may run on separate threads.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import GraphError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)

_state = threading.local()


def _default_dtype():
    return getattr(_state, "dtype", np.float32)


def set_default_dtype(dtype) -> None:
    """Set the dtype used for newly created leaf tensors on this thread."""
    dtype = np.dtype(dtype).type
    if dtype not in _FLOAT_DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _state.dtype = dtype


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily switch the default leaf dtype (float64 mode for checks)."""
    prev = _default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


def _recording() -> bool:
    return getattr(_state, "recording", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / measurement)."""
    prev = _recording()
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = prev


class Graph:
    """Ordered record of executed operations for one reverse sweep."""

    __slots__ = ("nodes", "consumed")

    def __init__(self):
        self.nodes = []
        self.consumed = False


def _live_tape() -> Graph:
    tape = getattr(_state, "tape", None)
    if tape is None or tape.consumed:
        tape = Graph()
        _state.tape = tape
    return tape


class Tensor:
    """N-D float array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.type != _default_dtype():
            # leaves take the thread default; op results pass dtype explicitly
            arr = arr.astype(_default_dtype())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def grad(self):
        """Accumulated gradient; exactly zero for tensors the last sweep
        never reached."""
        if self._grad is None and self.requires_grad:
            self._grad = np.zeros_like(self.data)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars and ndarrays are wrapped
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __abs__(self):
        return absolute(self)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _accum(t: Tensor, g) -> None:
    if t._grad is None:
        t._grad = np.zeros_like(t.data)
    t._grad += g


def _make(out_data, *parents: Tensor) -> tuple[Tensor, bool]:
    rg = _recording() and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=rg, dtype=out_data.dtype)
    return out, rg


def _record(out: Tensor, fn) -> None:
    tape = _live_tape()
    tape.nodes.append(fn)
    out._tape = tape


def backward(loss: Tensor) -> None:
    """Run one reverse sweep from a scalar loss over its recorded graph."""
    if not isinstance(loss, Tensor):
        raise GraphError("backward expects a Tensor loss")
    if loss.data.size != 1:
        raise GraphError(f"loss must be scalar, got shape {tuple(loss.shape)}")
    tape = loss._tape
    if tape is None:
        raise GraphError("loss was not produced by a recorded forward pass")
    if tape.consumed:
        raise GraphError("graph already swept once; run a new forward pass first")
    tape.consumed = True
    loss._grad = np.ones_like(loss.data)
    for fn in reversed(tape.nodes):
        fn()


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape == b.data.shape:
        return
    if a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise ShapeError(
        f"{op}: operands must have identical shapes or be scalar, "
        f"got {tuple(a.shape)} and {tuple(b.shape)}"
    )


def _reduce_to(g, t: Tensor):
    # gradient of a scalar operand used against an array: sum everything
    if t.data.ndim == 0 and np.ndim(g) != 0:
        return np.sum(g)
    return g


def add(a, b) -> Tensor:
    a = _wrap(a, like=b if isinstance(b, Tensor) else None)
    b = _wrap(b, like=a)
    _binary_shapes(a, b, "add")
    out, rg = _make(a.data + b.data, a, b)
    if rg:
        def fn():
            g = out._grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, _reduce_to(g, a))
            if b.requires_grad:
                _accum(b, _reduce_to(g, b))
        _record(out, fn)
    return out


def sub(a, b) -> Tensor:
    a = _wrap(a, like=b if isinstance(b, Tensor) else None)
    b = _wrap(b, like=a)
    _binary_shapes(a, b, "sub")
    out, rg = _make(a.data - b.data, a, b)
    if rg:
        def fn():
            g = out._grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, _reduce_to(g, a))
            if b.requires_grad:
                _accum(b, _reduce_to(-g, b))
        _record(out, fn)
    return out


def mul(a, b) -> Tensor:
    a = _wrap(a, like=b if isinstance(b, Tensor) else None)
    b = _wrap(b, like=a)
    _binary_shapes(a, b, "mul")
    out, rg = _make(a.data * b.data, a, b)
    if rg:
        a_data, b_data = a.data, b.data
        def fn():
            g = out._grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, _reduce_to(g * b_data, a))
            if b.requires_grad:
                _accum(b, _reduce_to(g * a_data, b))
        _record(out, fn)
    return out


def relu(x) -> Tensor:
    x = _wrap(x)
    out, rg = _make(np.maximum(x.data, 0), x)
    if rg:
        mask = x.data > 0
        def fn():
            g = out._grad
            if g is None:
                return
            _accum(x, g * mask)
        _record(out, fn)
    return out


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    d = x.data
    # two-branch form avoids overflow in exp for large |x|
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    y = y.astype(d.dtype, copy=False)
    out, rg = _make(y, x)
    if rg:
        def fn():
            g = out._grad
            if g is None:
                return
            _accum(x, g * y * (1.0 - y))
        _record(out, fn)
    return out


def absolute(x) -> Tensor:
    x = _wrap(x)
    out, rg = _make(np.abs(x.data), x)
    if rg:
        sgn = np.sign(x.data)
        def fn():
            g = out._grad
            if g is None:
                return
            _accum(x, g * sgn)
        _record(out, fn)
    return out


def mean(x) -> Tensor:
    x = _wrap(x)
    out, rg = _make(np.asarray(x.data.mean(), dtype=x.data.dtype), x)
    if rg:
        n = x.data.size
        def fn():
            g = out._grad
            if g is None:
                return
            _accum(x, np.full_like(x.data, g / n))
        _record(out, fn)
    return out


def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy's own shadowing
    x = _wrap(x)
    out, rg = _make(np.asarray(x.data.sum(), dtype=x.data.dtype), x)
    if rg:
        def fn():
            g = out._grad
            if g is None:
                return
            _accum(x, np.full_like(x.data, g))
        _record(out, fn)
    return out


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {tuple(a.shape)} @ {tuple(b.shape)}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {tuple(a.shape)} @ {tuple(b.shape)}"
        )
    out, rg = _make(a.data @ b.data, a, b)
    if rg:
        a_data, b_data = a.data, b.data
        def fn():
            g = out._grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, g @ b_data.T)
            if b.requires_grad:
                _accum(b, a_data.T @ g)
        _record(out, fn)
    return out


def transpose(x) -> Tensor:
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {tuple(x.shape)}")
    out, rg = _make(np.ascontiguousarray(x.data.T), x)
    if rg:
        def fn():
            g = out._grad
            if g is None:
                return
            _accum(x, g.T)
        _record(out, fn)
    return out


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    shape = tuple(int(s) for s in shape)
    out, rg = _make(x.data.reshape(shape), x)
    if rg:
        orig = x.data.shape
        def fn():
            g = out._grad
            if g is None:
                return
            _accum(x, g.reshape(orig))
        _record(out, fn)
    return out


def concat(tensors, axis: int) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty sequence")
    nd = ts[0].data.ndim
    if not 0 <= axis < nd:
        raise ShapeError(f"concat: axis {axis} invalid for {nd}-D tensors")
    ref = list(ts[0].data.shape)
    for t in ts[1:]:
        s = list(t.data.shape)
        if len(s) != nd or any(s[i] != ref[i] for i in range(nd) if i != axis):
            raise ShapeError(
                f"concat: shapes {tuple(ref)} and {tuple(t.shape)} differ off axis {axis}"
            )
    out, rg = _make(np.concatenate([t.data for t in ts], axis=axis), *ts)
    if rg:
        sizes = [t.data.shape[axis] for t in ts]
        offsets = np.cumsum([0] + sizes)
        def fn():
            g = out._grad
            if g is None:
                return
            for t, start, stop in zip(ts, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * nd
                    sl[axis] = slice(start, stop)
                    _accum(t, g[tuple(sl)])
        _record(out, fn)
    return out


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis; backward re-embeds into zeros."""
    x = _wrap(x)
    nd = x.data.ndim
    if not 0 <= axis < nd:
        raise ShapeError(f"slice_axis: axis {axis} invalid for {nd}-D tensor")
    extent = x.data.shape[axis]
    if not (0 <= start < stop <= extent):
        raise ShapeError(f"slice_axis: [{start}:{stop}] invalid for extent {extent}")
    sl = [slice(None)] * nd
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out, rg = _make(np.ascontiguousarray(x.data[sl]), x)
    if rg:
        def fn():
            g = out._grad
            if g is None:
                return
            full = np.zeros_like(x.data)
            full[sl] = g
            _accum(x, full)
        _record(out, fn)
    return out


def broadcast_to(x, shape) -> Tensor:
    """Explicitly expand size-1 axes; backward sums over the expansions."""
    x = _wrap(x)
    shape = tuple(int(s) for s in shape)
    src = x.data.shape
    if len(src) != len(shape):
        raise ShapeError(f"broadcast_to: rank mismatch {src} -> {shape}")
    expanded = []
    for ax, (s, t) in enumerate(zip(src, shape)):
        if s == t:
            continue
        if s == 1:
            expanded.append(ax)
        else:
            raise ShapeError(f"broadcast_to: axis {ax} has extent {s}, cannot reach {t}")
    out, rg = _make(np.ascontiguousarray(np.broadcast_to(x.data, shape)), x)
    if rg:
        axes = tuple(expanded)
        def fn():
            g = out._grad
            if g is None:
                return
            _accum(x, g.sum(axis=axes, keepdims=True) if axes else g)
        _record(out, fn)
    return out


def l2_normalize(x, axis: int, eps: float = 1e-12) -> Tensor:
    """Scale slices along ``axis`` to unit Euclidean norm.

    Slices with norm below ``eps`` come out as exact zeros.
    """
    x = _wrap(x)
    if not 0 <= axis < x.data.ndim:
        raise ShapeError(f"l2_normalize: axis {axis} invalid for {tuple(x.shape)}")
    norms = np.sqrt(np.square(x.data).sum(axis=axis, keepdims=True))
    degenerate = norms < eps
    safe = np.where(degenerate, 1.0, norms).astype(x.data.dtype)
    y = np.where(degenerate, 0.0, x.data / safe).astype(x.data.dtype)
    out, rg = _make(y, x)
    if rg:
        def fn():
            g = out._grad
            if g is None:
                return
            inner = (g * y).sum(axis=axis, keepdims=True)
            dx = (g - y * inner) / safe
            dx = np.where(degenerate, 0.0, dx).astype(x.data.dtype)
            _accum(x, dx)
        _record(out, fn)
    return out


def softmax(x, axis: int) -> Tensor:
    """Numerically stabilized softmax along ``axis``; rejects non-finite input."""
    x = _wrap(x)
    if not 0 <= axis < x.data.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for {tuple(x.shape)}")
    if not np.isfinite(x.data).all():
        raise ValueError("softmax: input contains non-finite values")
    # one working buffer: shift, exponentiate, and normalize in place so a
    # large attention matrix costs a single extra copy
    y = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)
    out, rg = _make(y, x)
    if rg:
        def fn():
            g = out._grad
            if g is None:
                return
            inner = (g * y).sum(axis=axis, keepdims=True)
            _accum(x, y * (g - inner))
        _record(out, fn)
    return out


def reduce_max(x, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along ``axis``; gradient routes to the first maximizer."""
    x = _wrap(x)
    if not 0 <= axis < x.data.ndim:
        raise ShapeError(f"reduce_max: axis {axis} invalid for {tuple(x.shape)}")
    m = x.data.max(axis=axis, keepdims=True)
    out_data = m if keepdims else np.squeeze(m, axis=axis)
    out, rg = _make(out_data, x)
    if rg:
        idx = np.argmax(x.data, axis=axis)  # first max wins ties
        def fn():
            g = out._grad
            if g is None:
                return
            gk = g if keepdims else np.expand_dims(g, axis)
            dx = np.zeros_like(x.data)
            np.put_along_axis(dx, np.expand_dims(idx, axis), gk, axis)
            _accum(x, dx)
        _record(out, fn)
    return out


def take_rows(x, idx) -> Tensor:
    """Gather rows of a 2-D tensor; backward scatter-adds into the source."""
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ShapeError(f"take_rows expects a 2-D tensor, got {tuple(x.shape)}")
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("take_rows: index must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise ShapeError("take_rows: index out of range")
    out, rg = _make(x.data[idx], x)
    if rg:
        def fn():
            g = out._grad
            if g is None:
                return
            dx = np.zeros_like(x.data)
            np.add.at(dx, idx, g)
            _accum(x, dx)
        _record(out, fn)
    return out


def global_avg_pool(x) -> Tensor:
    """Spatial mean of an ``(h, w, c)`` map, kept as ``(1, 1, c)``."""
    x = _wrap(x)
    if x.data.ndim != 3:
        raise ShapeError(f"global_avg_pool expects (h, w, c), got {tuple(x.shape)}")
    out, rg = _make(x.data.mean(axis=(0, 1), keepdims=True), x)
    if rg:
        n = x.data.shape[0] * x.data.shape[1]
        def fn():
            g = out._grad
            if g is None:
                return
            _accum(x, np.broadcast_to(g / n, x.data.shape))
        _record(out, fn)
    return out


# ---------------------------------------------------------------------------
# convolution and pixel shuffling


def conv2d(x, weight, bias, padding: int = 0) -> Tensor:
    """2-D convolution (stride 1) over an ``(h, w, cin)`` input.

    ``weight`` is ``(k, k, cin, cout)`` with odd ``k``; realized as an
    im2col patch gather followed by one matrix multiply.
    """
    x, weight, bias = _wrap(x), _wrap(weight), _wrap(bias)
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d: input must be (h, w, c), got {tuple(x.shape)}")
    if weight.data.ndim != 4 or weight.data.shape[0] != weight.data.shape[1]:
        raise ShapeError(f"conv2d: weight must be (k, k, cin, cout), got {tuple(weight.shape)}")
    k = weight.data.shape[0]
    if k % 2 == 0:
        raise ShapeError(f"conv2d: kernel size {k} must be odd")
    if padding < 0:
        raise ShapeError(f"conv2d: padding {padding} must be non-negative")
    h, w, cin = x.data.shape
    if weight.data.shape[2] != cin:
        raise ShapeError(
            f"conv2d: input has {cin} channels but weight expects {weight.data.shape[2]}"
        )
    cout = weight.data.shape[3]
    if bias.data.shape != (cout,):
        raise ShapeError(
            f"conv2d: bias shape {tuple(bias.shape)} does not match {cout} output channels"
        )
    ho = h + 2 * padding - k + 1
    wo = w + 2 * padding - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d: kernel {k} with padding {padding} exceeds input {h}x{w}"
        )

    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(0, 1))
    # (ho, wo, cin, k, k) -> rows laid out as (ki, kj, cin) to match weight flattening
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(ho * wo, k * k * cin)
    wf = weight.data.reshape(k * k * cin, cout)
    out_data = (cols @ wf + bias.data).reshape(ho, wo, cout)
    out, rg = _make(out_data, x, weight, bias)
    if rg:
        def fn():
            g = out._grad
            if g is None:
                return
            gm = g.reshape(ho * wo, cout)
            if weight.requires_grad:
                _accum(weight, (cols.T @ gm).reshape(weight.data.shape))
            if bias.requires_grad:
                _accum(bias, gm.sum(axis=0))
            if x.requires_grad:
                dcols = (gm @ wf.T).reshape(ho, wo, k, k, cin)
                dxp = np.zeros((h + 2 * padding, w + 2 * padding, cin), dtype=x.data.dtype)
                for ki in range(k):
                    for kj in range(k):
                        dxp[ki:ki + ho, kj:kj + wo, :] += dcols[:, :, ki, kj, :]
                dx = dxp[padding:padding + h, padding:padding + w, :] if padding else dxp
                _accum(x, dx)
        _record(out, fn)
    return out


def _check_divides(s: int, extent: int, name: str, op: str) -> None:
    if extent % s != 0:
        raise ShapeError(f"{op}: factor s={s} does not divide {name}={extent}")


def pixel_unshuffle(x, s: int) -> Tensor:
    """Rearrange ``(h, w, c)`` to ``(h/s, w/s, c*s*s)``; pure permutation.

    Output channel index is ``ch*s*s + si*s + sj`` for sub-grid phase
    ``(si, sj)`` of source channel ``ch``.
    """
    x = _wrap(x)
    if x.data.ndim != 3:
        raise ShapeError(f"pixel_unshuffle expects (h, w, c), got {tuple(x.shape)}")
    if s < 1:
        raise ShapeError(f"pixel_unshuffle: s={s} must be >= 1")
    h, w, c = x.data.shape
    _check_divides(s, h, "height", "pixel_unshuffle")
    _check_divides(s, w, "width", "pixel_unshuffle")
    ho, wo = h // s, w // s
    y = (
        x.data.reshape(ho, s, wo, s, c)
        .transpose(0, 2, 4, 1, 3)
        .reshape(ho, wo, c * s * s)
    )
    out, rg = _make(np.ascontiguousarray(y), x)
    if rg:
        def fn():
            g = out._grad
            if g is None:
                return
            dx = (
                g.reshape(ho, wo, c, s, s)
                .transpose(0, 3, 1, 4, 2)
                .reshape(h, w, c)
            )
            _accum(x, dx)
        _record(out, fn)
    return out


def pixel_shuffle(x, s: int) -> Tensor:
    """Inverse of :func:`pixel_unshuffle`: ``(h, w, c)`` to ``(h*s, w*s, c/s²)``."""
    x = _wrap(x)
    if x.data.ndim != 3:
        raise ShapeError(f"pixel_shuffle expects (h, w, c), got {tuple(x.shape)}")
    if s < 1:
        raise ShapeError(f"pixel_shuffle: s={s} must be >= 1")
    h, w, c = x.data.shape
    if c % (s * s) != 0:
        raise ShapeError(f"pixel_shuffle: factor s={s} squared does not divide channels={c}")
    co = c // (s * s)
    y = (
        x.data.reshape(h, w, co, s, s)
        .transpose(0, 3, 1, 4, 2)
        .reshape(h * s, w * s, co)
    )
    out, rg = _make(np.ascontiguousarray(y), x)
    if rg:
        def fn():
            g = out._grad
            if g is None:
                return
            dx = (
                g.reshape(h, s, w, s, co)
                .transpose(0, 2, 4, 1, 3)
                .reshape(h, w, c)
            )
            _accum(x, dx)
        _record(out, fn)
    return out
