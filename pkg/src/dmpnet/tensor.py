"""Dense tensors and the reverse-mode gradient tape.

A :class:`Tensor` wraps a contiguous numpy array. Operations in
:mod:`dmpnet.ops` record themselves on the innermost active :class:`Tape`
whenever one of their inputs requires a gradient; :func:`backward` replays
that record list in strict reverse order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

FLOAT_TYPES = (np.float32, np.float64)


class Tensor:
    """A dense float array with optional participation in gradient recording.

    ``data`` is always a C-contiguous float32 or float64 array. Rank is not
    fixed here; the image ops expect ``(n, c, h, w)`` and validate it.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype.type in FLOAT_TYPES else np.float32
        arr = np.asarray(arr, dtype=dtype, order="C")
        if arr.dtype.type not in FLOAT_TYPES:
            raise TypeError(f"tensor dtype must be float32 or float64, got {arr.dtype}")
        if any(d < 1 for d in arr.shape):
            raise ValueError(f"all tensor extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    # arithmetic sugar; the named ops in dmpnet.ops are the canonical API
    def __add__(self, other):
        from dmpnet import ops

        return ops.add(self, other)

    def __mul__(self, other):
        from dmpnet import ops

        return ops.mul(self, other)


def _not_scalar(shape):
    raise ValueError(f"item() needs a single-element tensor, got shape {shape}")


def zeros(shape, dtype=np.float32, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Record:
    op: str
    inputs: tuple
    output: Tensor
    vjp: VJP


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; ops executed inside the block are recorded
    when any input requires a gradient. Tapes nest; only the innermost one
    records.
    """

    _stack: list = []

    def __init__(self):
        self.records: list[Record] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = Tape._stack.pop()
        assert popped is self, "tape stack corrupted"

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()


def active_tape() -> Optional[Tape]:
    return Tape._stack[-1] if Tape._stack else None


def record(op: str, output: Tensor, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    """Attach ``output`` to the active tape if any input needs a gradient."""
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        tape.records.append(Record(op, tuple(inputs), output, vjp))
    return output


def backward(loss: Tensor, tape: Tape, leaves: Optional[Sequence[Tensor]] = None):
    """Propagate d(loss)/d(.) through ``tape`` in reverse recording order.

    Every leaf tensor seen on the tape with ``requires_grad`` gets ``.grad``
    set (overwritten). If ``leaves`` is given, those tensors also get a grad
    (zeros when they are not on the loss path) and the list of gradients is
    returned in the same order.
    """
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(r.output) for r in tape.records}
    leaf_map: dict[int, Tensor] = {}

    for rec in reversed(tape.records):
        g_out = grads.pop(id(rec.output), None)
        if g_out is None:
            continue
        in_grads = rec.vjp(g_out)
        for t, g in zip(rec.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            if g.shape != t.shape:
                raise RuntimeError(f"{rec.op}: gradient shape {g.shape} != input shape {t.shape}")
            key = id(t)
            if key not in produced:
                leaf_map[key] = t
            prev = grads.get(key)
            grads[key] = g if prev is None else prev + g

    if id(loss) not in produced and loss.requires_grad:
        leaf_map[id(loss)] = loss
    for key, t in leaf_map.items():
        t.grad = np.ascontiguousarray(grads.get(key, np.zeros_like(t.data)), dtype=t.dtype)
    if leaves is None:
        return None
    out = []
    for t in leaves:
        if id(t) not in leaf_map:
            t.grad = np.zeros_like(t.data)
        out.append(t.grad)
    return out
