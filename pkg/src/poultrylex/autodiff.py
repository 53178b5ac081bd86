"""Dense f64 tensors with tape-based reverse-mode differentiation.

Forward ops record onto the innermost active ``Tape``; ``tape.backward``
walks the record in exact reverse order and accumulates d(loss)/d(leaf)
into every ``requires_grad`` tensor.  Outside a tape, ops are plain
numpy evaluation (eval mode).

Everything is float64: desk scale makes precision cheaper than speed and
keeps finite-difference gradient checks tight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward_fn: object  # grad_out -> tuple of input grads (None where unused)


@dataclass
class Tape:
    """Ordered op record; one backward per forward unless reset."""

    _nodes: list[_Node] = field(default_factory=list)
    _consumed: bool = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
        self._nodes.append(_Node(out, inputs, backward_fn))

    def reset(self) -> None:
        self._nodes.clear()
        self._consumed = False

    def backward(self, loss: Tensor) -> None:
        """Populate grads of every requires_grad tensor reachable from loss."""
        if loss.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        if self._consumed:
            raise RuntimeError("tape already consumed by a backward pass; reset() first")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward_fn(g)
            for t, gi in zip(node.inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                t.grad = gi if t.grad is None else t.grad + gi


_TAPE_STACK: list[Tape] = []


def _active() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = _active()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over the axes numpy broadcast when producing it."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------- arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}") from None
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scalar_mul(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(data, (a, b), backward)


# ------------------------------------------------------------ shape movement


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose: need >= 2 dims, got shape {a.shape}")
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inverse = tuple(np.argsort(axes))
    return _make(
        np.transpose(a.data, axes),
        (a,),
        lambda g: (np.transpose(g, inverse),),
    )


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} on axis {axis}") from None
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        data,
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(a.data[index], (a,), backward)


# ------------------------------------------------------------- nonlinearities


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax(a: Tensor) -> Tensor:
    """Row-stochastic softmax over the last axis, overflow-safe."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return _make(y, (a,), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: train-time scaling by 1/(1-p), identity in eval."""
    if not train or p == 0.0:
        return a
    if not (0.0 <= p < 1.0):
        raise ShapeError(f"dropout: p must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _make(a.data * keep, (a,), lambda g: (g * keep,))


# -------------------------------------------------------------- reductions


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, a.shape).copy(),)

    return _make(data, (a,), backward)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return scalar_mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def amax(a: Tensor, axis: int) -> Tensor:
    """Max along an axis; gradient routes to the first argmax."""
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    data = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _make(data, (a,), backward)


# ----------------------------------------------------------------- lookups


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding_lookup: id out of range [0, {table.shape[0]}), "
            f"got min {ids.min()} max {ids.max()}"
        )

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(table.data[ids], (table,), backward)


# -------------------------------------------------------------------- loss


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer class targets."""
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.ndim != 1 or logits.shape[0] != targets.shape[0]:
        raise ShapeError(
            f"cross_entropy: expected (B, C) logits with (B,) targets, "
            f"got {logits.shape} and {targets.shape}"
        )
    n = logits.shape[0]
    m = logits.data.max(axis=-1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1)) + m[:, 0]
    picked = logits.data[np.arange(n), targets]
    data = np.asarray((lse - picked).mean())

    def backward(g):
        p = np.exp(shifted)
        p /= p.sum(axis=-1, keepdims=True)
        p[np.arange(n), targets] -= 1.0
        return (g * p / n,)

    return _make(data, (logits,), backward)


# --------------------------------------------------------------- gradcheck


@dataclass
class GradcheckReport:
    per_input: list[float]
    max_rel_err: float

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def gradcheck(f, inputs: list[Tensor], eps: float = 1e-5, floor: float = 1e-5) -> GradcheckReport:
    """Compare analytic grads of scalar f(*inputs) to central differences.

    Relative error uses max(|analytic|, |numeric|, floor) as denominator;
    the floor absorbs finite-difference noise where both grads are ~0.
    """
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        out = f(*inputs)
        tape.backward(out)
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs
    ]

    per_input = []
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f(*inputs).data)
            flat[i] = orig - eps
            f_minus = float(f(*inputs).data)
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * eps)
        a_flat = a.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a_flat), np.abs(numeric)), floor)
        err = float((np.abs(a_flat - numeric) / denom).max()) if flat.size else 0.0
        per_input.append(err)
    return GradcheckReport(per_input=per_input, max_rel_err=max(per_input, default=0.0))


# -------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"PLXCKPT1\n"
CHECKPOINT_VERSION = 1


def checkpoint_save(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Versioned binary checkpoint: JSON header plus raw f64 buffers.

    The byte stream is fully deterministic (arrays sorted by name, header
    keys sorted), so identical parameters produce identical files and
    round-trips are bit-exact.
    """
    entries = []
    offset = 0
    names = sorted(arrays)
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        entries.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes}
        )
        offset += arr.nbytes
    header = {
        "format_version": CHECKPOINT_VERSION,
        "meta": meta,
        "arrays": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(arrays[name], dtype=np.float64).tobytes())


def checkpoint_load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    blob_len = int.from_bytes(raw[pos : pos + 8], "little")
    pos += 8
    header = json.loads(raw[pos : pos + blob_len].decode("utf-8"))
    pos += blob_len
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')!r}")
    arrays = {}
    for entry in header["arrays"]:
        start = pos + entry["offset"]
        buf = raw[start : start + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(buf, dtype=np.float64).reshape(entry["shape"]).copy()
    return arrays, header["meta"]
