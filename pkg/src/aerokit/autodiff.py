"""Minimal dense-tensor reverse-mode autodiff.

Float32 numpy arrays plus an explicit tape: operators append records in
creation order (which is already a topological order), and backward walks the
records once in reverse, accumulating gradients into ``Tensor.grad``. Only the
operators the latent probe and the toy rollout generator need are provided;
there is no broadcasting beyond bias addition. Convolution follows the
cross-correlation (no kernel flip) convention.

A tape and its tensors belong to one thread; independent tapes are safe
concurrently. Ops run outside any tape compute values without recording, so
frozen-model inference carries no tape overhead.
"""

from __future__ import annotations

import json
import threading
from functools import lru_cache

import numpy as np

_local = threading.local()


def _active_tape():
    return getattr(_local, "tape", None)


class Tensor:
    """Contiguous float32 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        data = np.asarray(data, dtype=np.float32)
        if data.ndim and not data.flags["C_CONTIGUOUS"]:
            data = np.ascontiguousarray(data)
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered op record; context manager activates it for the current thread."""

    def __init__(self):
        self._nodes = []  # (output, inputs, backward_fn)
        self._used = False

    def __enter__(self):
        if _active_tape() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = None
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss):
        """Accumulate d(loss)/d(tensor) into ``.grad`` for tensors on the tape.

        Visits each node exactly once in reverse creation order; outputs not
        upstream of ``loss`` keep ``None`` (zero) gradients. Leaf grads are
        added to, not reset: zeroing between steps is the optimizer's job,
        which is what lets minibatch gradients accumulate across clip tapes.
        """
        if self._used:
            raise RuntimeError("tape already backpropagated")
        self._used = True
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, inputs, backward_fn in reversed(self._nodes):
            if out.grad is None:
                continue
            for t, g in zip(inputs, backward_fn(out.grad)):
                if g is None:
                    continue
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g


def _emit(data, inputs, make_backward):
    """Build the op output; record on the active tape when gradients are needed.

    ``make_backward(needs)`` receives per-input need flags and returns the
    backward closure, letting ops skip work for frozen inputs.
    """
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        needs = tuple(t.requires_grad for t in inputs)
        tape._nodes.append((out, inputs, make_backward(needs)))
    return out


def _check_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def add(a, b):
    """Elementwise sum; also accepts a trailing-axis bias for b."""
    if a.data.shape != b.data.shape:
        if b.data.shape != a.data.shape[-1:]:
            raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
        lead = tuple(range(a.data.ndim - 1))

        def make_backward(needs):
            def backward(g):
                return (g if needs[0] else None, g.sum(axis=lead) if needs[1] else None)

            return backward

        return _emit(a.data + b.data, (a, b), make_backward)

    def make_backward(needs):
        def backward(g):
            return (g if needs[0] else None, g if needs[1] else None)

        return backward

    return _emit(a.data + b.data, (a, b), make_backward)


def sub(a, b):
    _check_same_shape(a, b, "sub")

    def make_backward(needs):
        def backward(g):
            return (g if needs[0] else None, -g if needs[1] else None)

        return backward

    return _emit(a.data - b.data, (a, b), make_backward)


def mul(a, b):
    _check_same_shape(a, b, "mul")
    a_data, b_data = a.data, b.data

    def make_backward(needs):
        def backward(g):
            return (g * b_data if needs[0] else None, g * a_data if needs[1] else None)

        return backward

    return _emit(a.data * b.data, (a, b), make_backward)


def scale(a, s):
    """Multiply by a python scalar."""
    s = float(s)

    def make_backward(needs):
        def backward(g):
            return (g * np.float32(s),)

        return backward

    return _emit(a.data * np.float32(s), (a,), make_backward)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible {a.data.shape} @ {b.data.shape}")
    a_data, b_data = a.data, b.data

    def make_backward(needs):
        def backward(g):
            da = g @ b_data.T if needs[0] else None
            db = a_data.T @ g if needs[1] else None
            return (da, db)

        return backward

    return _emit(a.data @ b.data, (a, b), make_backward)


def linear(x, w, b):
    """x (N,D) @ w (D,M) + b (M,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"linear: incompatible {x.data.shape} @ {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ValueError(f"linear: bias shape {b.data.shape} vs M={w.data.shape[1]}")
    x_data, w_data = x.data, w.data

    def make_backward(needs):
        def backward(g):
            dx = g @ w_data.T if needs[0] else None
            dw = x_data.T @ g if needs[1] else None
            db = g.sum(axis=0) if needs[2] else None
            return (dx, dw, db)

        return backward

    return _emit(x.data @ w.data + b.data, (x, w, b), make_backward)


def relu(x):
    mask = x.data > 0

    def make_backward(needs):
        def backward(g):
            return (g * mask,)

        return backward

    return _emit(np.where(mask, x.data, np.float32(0.0)), (x,), make_backward)


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(x, shape):
    shape = tuple(shape)
    old = x.data.shape

    def make_backward(needs):
        def backward(g):
            return (g.reshape(old),)

        return backward

    return _emit(x.data.reshape(shape), (x,), make_backward)


def transpose(x, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def make_backward(needs):
        def backward(g):
            return (np.ascontiguousarray(g.transpose(inverse)),)

        return backward

    return _emit(np.ascontiguousarray(x.data.transpose(axes)), (x,), make_backward)


def concat(tensors, axis=0):
    tensors = tuple(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def make_backward(needs):
        def backward(g):
            pieces = np.split(g, splits, axis=axis)
            return tuple(p if need else None for p, need in zip(pieces, needs))

        return backward

    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tensors, make_backward)


def stack(tensors, axis=0):
    tensors = tuple(tensors)

    def make_backward(needs):
        def backward(g):
            pieces = np.moveaxis(g, axis, 0)
            return tuple(
                pieces[i].copy() if need else None for i, need in enumerate(needs)
            )

        return backward

    return _emit(np.stack([t.data for t in tensors], axis=axis), tensors, make_backward)


def narrow(x, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    nd = x.data.ndim
    if not 0 <= axis < nd:
        raise ValueError(f"narrow: axis {axis} out of range for ndim {nd}")
    if start < 0 or length < 1 or start + length > x.data.shape[axis]:
        raise ValueError(
            f"narrow: window [{start}, {start + length}) exceeds size {x.data.shape[axis]}"
        )
    sl = tuple(
        slice(start, start + length) if d == axis else slice(None) for d in range(nd)
    )
    in_shape = x.data.shape

    def make_backward(needs):
        def backward(g):
            dx = np.zeros(in_shape, dtype=np.float32)
            dx[sl] = g
            return (dx,)

        return backward

    return _emit(np.ascontiguousarray(x.data[sl]), (x,), make_backward)


def mean(x):
    """Full reduction to a scalar."""
    n = x.data.size
    shape = x.data.shape

    def make_backward(needs):
        def backward(g):
            return (np.full(shape, g.reshape(()) / n, dtype=np.float32),)

        return backward

    return _emit(np.float32(x.data.mean()), (x,), make_backward)


# ---------------------------------------------------------------------------
# convolution


@lru_cache(maxsize=32)
def _conv3d_geometry(in_shape, k_shape, stride, pad):
    """Gather indices mapping the zero-padded input to im2col rows.

    Rows index output positions (t,h,w); columns index (c_in, kt, kh, kw).
    """
    C_in, T, H, W = in_shape
    kt, kh, kw = k_shape
    st, sh, sw = stride
    pt, ph, pw = pad
    Tp, Hp, Wp = T + 2 * pt, H + 2 * ph, W + 2 * pw
    To = (Tp - kt) // st + 1
    Ho = (Hp - kh) // sh + 1
    Wo = (Wp - kw) // sw + 1
    if To < 1 or Ho < 1 or Wo < 1:
        raise ValueError(f"conv3d: kernel {k_shape} too large for padded input {(Tp, Hp, Wp)}")
    base_t, base_h, base_w = np.meshgrid(
        np.arange(To) * st, np.arange(Ho) * sh, np.arange(Wo) * sw, indexing="ij"
    )
    off_c, off_t, off_h, off_w = np.meshgrid(
        np.arange(C_in), np.arange(kt), np.arange(kh), np.arange(kw), indexing="ij"
    )
    tt = base_t[..., None, None, None, None] + off_t[None, None, None]
    hh = base_h[..., None, None, None, None] + off_h[None, None, None]
    ww = base_w[..., None, None, None, None] + off_w[None, None, None]
    cc = np.broadcast_to(off_c[None, None, None], tt.shape)
    flat = ((cc * Tp + tt) * Hp + hh) * Wp + ww
    idx = np.ascontiguousarray(flat.reshape(To * Ho * Wo, C_in * kt * kh * kw))
    return idx, (To, Ho, Wo), (Tp, Hp, Wp)


def _as_triple(v):
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"expected int or 3-tuple, got {v!r}")
    return t


def conv3d(x, w, b=None, stride=1, pad=0):
    """3D cross-correlation: x (C_in,T,H,W) * w (C_out,C_in,kt,kh,kw) + b (C_out,).

    Zero padding; differentiable w.r.t. x, w, and b.
    """
    stride = _as_triple(stride)
    pad = _as_triple(pad)
    if x.data.ndim != 4 or w.data.ndim != 5:
        raise ValueError(f"conv3d: need x 4-d and w 5-d, got {x.data.shape}, {w.data.shape}")
    C_out, C_in = w.data.shape[:2]
    if x.data.shape[0] != C_in:
        raise ValueError(f"conv3d: x has {x.data.shape[0]} channels, kernel expects {C_in}")
    if b is not None and b.data.shape != (C_out,):
        raise ValueError(f"conv3d: bias shape {b.data.shape}, expected {(C_out,)}")

    idx, out_dims, padded = _conv3d_geometry(x.data.shape, w.data.shape[2:], stride, pad)
    To, Ho, Wo = out_dims
    pt, ph, pw = pad
    T, H, W = x.data.shape[1:]

    if pad == (0, 0, 0):
        xp = x.data
    else:
        xp = np.pad(x.data, ((0, 0), (pt, pt), (ph, ph), (pw, pw)))
    cols = xp.reshape(-1)[idx]  # (P, Q)
    w2d = w.data.reshape(C_out, -1)
    out = cols @ w2d.T
    if b is not None:
        out += b.data
    y = np.ascontiguousarray(out.T.reshape(C_out, To, Ho, Wo))

    inputs = (x, w) if b is None else (x, w, b)
    xp_size = xp.size
    w_shape = w.data.shape

    def make_backward(needs):
        # keep the padded input (small) rather than the im2col matrix (large)
        saved_xp = xp if needs[1] else None
        saved_w2d = w2d if needs[0] else None

        def backward(g):
            dout = g.reshape(C_out, -1).T  # (P, C_out)
            dx = dw = db = None
            if needs[0]:
                dcols = dout @ saved_w2d  # (P, Q)
                dxp = np.bincount(
                    idx.ravel(), weights=dcols.ravel().astype(np.float64), minlength=xp_size
                ).astype(np.float32)
                dxp = dxp.reshape(C_in, *padded)
                dx = np.ascontiguousarray(dxp[:, pt : pt + T, ph : ph + H, pw : pw + W])
            if needs[1]:
                cols_b = saved_xp.reshape(-1)[idx]
                dw = (dout.T @ cols_b).reshape(w_shape)
            if len(needs) == 3 and needs[2]:
                db = dout.sum(axis=0)
            grads = (dx, dw) if b is None else (dx, dw, db)
            return grads

        return backward

    return _emit(y, inputs, make_backward)


def global_spatial_pool(x):
    """Mean over the two spatial axes: (C,T,H,W) -> (C,T)."""
    if x.data.ndim != 4:
        raise ValueError(f"global_spatial_pool: need 4-d input, got {x.data.shape}")
    C, T, H, W = x.data.shape

    def make_backward(needs):
        def backward(g):
            return (np.broadcast_to(g[:, :, None, None] / (H * W), (C, T, H, W)).astype(np.float32),)

        return backward

    return _emit(x.data.mean(axis=(2, 3)), (x,), make_backward)


# ---------------------------------------------------------------------------
# losses


def softmax_cross_entropy(logits, labels):
    """Mean over rows of -log softmax(logits)[label]; logits (N,K), labels (N,) ints."""
    if logits.data.ndim != 2:
        raise ValueError(f"softmax_cross_entropy: logits must be 2-d, got {logits.data.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    N, K = logits.data.shape
    if labels.shape != (N,):
        raise ValueError(f"softmax_cross_entropy: labels shape {labels.shape}, expected ({N},)")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"softmax_cross_entropy: label out of [0, {K})")

    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    expz = np.exp(z)
    denom = expz.sum(axis=1)
    probs = expz / denom[:, None]
    nll = np.log(denom) - z[np.arange(N), labels]
    loss = np.float32(nll.mean())

    def make_backward(needs):
        def backward(g):
            dlogits = probs.copy()
            dlogits[np.arange(N), labels] -= 1.0
            dlogits *= float(g.reshape(())) / N
            return (dlogits.astype(np.float32),)

        return backward

    return _emit(loss, (logits,), make_backward)


# ---------------------------------------------------------------------------
# optimizer


def adamw_step(param, grad, state, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """One decoupled-weight-decay Adam update, in place; returns the state.

    state is a dict with keys m, v (moment buffers) and t (step count);
    pass {} to initialize.
    """
    if not state:
        state["m"] = np.zeros_like(param)
        state["v"] = np.zeros_like(param)
        state["t"] = 0
    if grad.shape != param.shape:
        raise ValueError(f"adamw_step: grad shape {grad.shape} vs param {param.shape}")
    b1, b2 = betas
    state["t"] += 1
    t = state["t"]
    m, v = state["m"], state["v"]
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    param -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * param)
    return state


class AdamW:
    """Stateful wrapper over :func:`adamw_step` for a named parameter dict."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = dict(params)  # name -> Tensor
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = {name: {} for name in self.params}

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            adamw_step(
                p.data, p.grad, self.state[name], self.lr, self.betas, self.eps, self.weight_decay
            )

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# checkpoints: JSON header line + concatenated little-endian float32 blobs


def save_checkpoint(path, tensors, config=None):
    """Write named float32 arrays with a JSON header; bit-exact round trip."""
    names = list(tensors)
    arrays = {}
    for name in names:
        t = tensors[name]
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        arrays[name] = np.asarray(arr, dtype="<f4")  # asarray keeps 0-d shapes
    header = {
        "format": "aerokit-ckpt-v1",
        "config": config or {},
        "tensors": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name in names:
            fh.write(arrays[name].tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (dict name -> float32 array, config dict)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ValueError(f"{path}: not an aerokit checkpoint: {e}") from e
        if header.get("format") != "aerokit-ckpt-v1":
            raise ValueError(f"{path}: unknown checkpoint format {header.get('format')!r}")
        blob = fh.read()
    tensors = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(blob):
            raise ValueError(f"{path}: truncated checkpoint at tensor {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape).copy()
        offset = end
    return tensors, header.get("config", {})
