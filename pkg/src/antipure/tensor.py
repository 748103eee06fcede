"""Dense float64 tensors with a tape-based reverse-mode gradient engine.

Every operation is a pure function of its inputs. Recording happens when an
input tensor is bound to a GradientTape (via `tape.watch` or as the output of
an already-recorded op); with no tape attached the ops are plain numpy calls.
Tapes are cheap and meant to be rebuilt per optimization step.
"""

from __future__ import annotations

import warnings
from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


class Tensor:
    """Immutable-by-convention wrapper around a float64 ndarray.

    Mutating `.data` in place (e.g. an SGD update) is allowed only when no
    live tape references the tensor.
    """

    __slots__ = ("data", "tape")

    def __init__(self, data, tape: "GradientTape | None" = None):
        if isinstance(data, Tensor):
            raise TypeError("wrapping a Tensor in a Tensor would drop its tape; "
                            "use as_tensor or .copy()")
        arr = np.asarray(data, dtype=np.float64)
        # NaN poisons the sum; +/-inf survives or turns into NaN. One fast pass.
        if arr.size and not np.isfinite(arr.sum()):
            raise ValueError("tensor contains non-finite values")
        self.data = arr
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        taped = ", taped" if self.tape is not None else ""
        return f"Tensor(shape={self.data.shape}{taped})"

    # Arithmetic sugar; constants (floats/ndarrays) are never differentiated.
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
        return neg(self)


class GradientTape:
    """Append-only record of primitive ops, replayed backward for gradients."""

    __slots__ = ("_nodes", "_watched")

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[tuple[Tensor, Callable[[Array], Array]], ...]]] = []
        self._watched: dict[int, Tensor] = {}

    def watch(self, t: Tensor) -> Tensor:
        """Mark `t` as a leaf whose gradient may be requested."""
        if t.tape is not None and t.tape is not self:
            raise ValueError("tensor is already bound to a different tape")
        t.tape = self
        self._watched[id(t)] = t
        return t

    def watched(self, t: Tensor) -> bool:
        return id(t) in self._watched

    def __len__(self) -> int:
        return len(self._nodes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _merge_tapes(*tensors) -> GradientTape | None:
    tape = None
    for t in tensors:
        if isinstance(t, Tensor) and t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ValueError("operands were recorded on different tapes")
    return tape


def _record(tape, out_data, parents_vjps) -> Tensor:
    """Wrap `out_data`, appending a node for the taped parents (if any)."""
    out = Tensor(out_data, tape)
    if tape is not None:
        pairs = tuple((p, vjp) for p, vjp in parents_vjps
                      if isinstance(p, Tensor) and p.tape is tape)
        tape._nodes.append((out, pairs))
    return out


def _accumulate(loss: Tensor, tape: GradientTape) -> dict[int, Array]:
    """One reverse sweep; returns gradients keyed by id(tensor)."""
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for out, pairs in reversed(tape._nodes):
        g = grads.get(id(out))
        if g is None:
            continue
        for parent, vjp in pairs:
            contrib = vjp(g)
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + contrib
            else:
                grads[pid] = contrib
    return grads


def backward(loss: Tensor, tape: GradientTape, leaf: Tensor) -> Tensor:
    """Gradient of a scalar `loss` with respect to one watched `leaf`.

    A leaf the loss never touched gets a zero gradient; a leaf that was never
    watched on this tape also gets zeros, plus a warning since that is almost
    always a caller bug.
    """
    return gradients(loss, tape, [leaf])[0]


def gradients(loss: Tensor, tape: GradientTape, leaves: Sequence[Tensor]) -> list[Tensor]:
    """Gradients for several leaves from a single reverse sweep."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    if loss.tape is not None and loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    grads = _accumulate(loss, tape)
    out = []
    for leaf in leaves:
        if not tape.watched(leaf):
            warnings.warn("requested gradient for a tensor not watched on this tape",
                          stacklevel=2)
        g = grads.get(id(leaf))
        out.append(Tensor(np.zeros_like(leaf.data) if g is None else g))
    return out


# ---------------------------------------------------------------------------
# elementwise primitives

def _shapes_must_match(a: Array, b: Array, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    """Elementwise a + b; scalars and constant ndarrays broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape == () or b.data.shape == ():
        pass  # scalar broadcast
    else:
        _shapes_must_match(a.data, b.data, "add")
    tape = _merge_tapes(a, b)
    out_data = a.data + b.data

    def vjp_scalar(g, shape):
        return g if shape == g.shape else np.sum(g).reshape(shape)

    return _record(tape, out_data,
                   [(a, lambda g: vjp_scalar(g, a.data.shape)),
                    (b, lambda g: vjp_scalar(g, b.data.shape))])


def sub(a, b) -> Tensor:
    """Elementwise a - b."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != () and b.data.shape != ():
        _shapes_must_match(a.data, b.data, "sub")
    tape = _merge_tapes(a, b)

    def vjp_a(g):
        return g if a.data.shape == g.shape else np.sum(g).reshape(a.data.shape)

    def vjp_b(g):
        gn = -g
        return gn if b.data.shape == gn.shape else np.sum(gn).reshape(b.data.shape)

    return _record(tape, a.data - b.data, [(a, vjp_a), (b, vjp_b)])


def mul(a, b) -> Tensor:
    """Elementwise a * b; scalars broadcast, constant masks may broadcast up."""
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data
    if out_data.shape not in (a.data.shape, b.data.shape):
        raise ValueError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")
    tape = _merge_tapes(a, b)

    def vjp_factor(g, other: Array, shape):
        contrib = g * other
        if contrib.shape == shape:
            return contrib
        # reduce over the axes this factor was broadcast along
        extra = contrib.ndim - len(shape)
        if extra:
            contrib = contrib.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, n in enumerate(shape) if n == 1 and contrib.shape[i] != 1)
        if axes:
            contrib = contrib.sum(axis=axes, keepdims=True)
        return contrib.reshape(shape)

    return _record(tape, out_data,
                   [(a, lambda g: vjp_factor(g, b.data, a.data.shape)),
                    (b, lambda g: vjp_factor(g, a.data, b.data.shape))])


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(a.tape, -a.data, [(a, lambda g: -g)])


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    if not np.all(np.isfinite(out_data)):
        raise ValueError("exp overflow")
    return _record(a.tape, out_data, [(a, lambda g: g * out_data)])


def _stable_sigmoid(x: Array) -> Array:
    # exp of a non-positive argument never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    """Numerically stable logistic function."""
    a = as_tensor(a)
    out_data = _stable_sigmoid(a.data)
    return _record(a.tape, out_data, [(a, lambda g: g * out_data * (1.0 - out_data))])


def silu(a) -> Tensor:
    """x * sigmoid(x), the denoiser's smooth activation."""
    a = as_tensor(a)
    s = _stable_sigmoid(a.data)
    out_data = a.data * s
    return _record(a.tape, out_data, [(a, lambda g: g * (s + out_data * (1.0 - s)))])


# ---------------------------------------------------------------------------
# reductions and shape ops

def reduce_sum(a) -> Tensor:
    a = as_tensor(a)
    return _record(a.tape, np.sum(a.data),
                   [(a, lambda g: np.full(a.data.shape, float(g)))])


def reduce_mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _record(a.tape, np.mean(a.data),
                   [(a, lambda g: np.full(a.data.shape, float(g) / n))])


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    return _record(a.tape, a.data.reshape(shape),
                   [(a, lambda g: g.reshape(a.data.shape))])


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(a.tape, a.data.transpose(axes),
                   [(a, lambda g: g.transpose(inv))])


def concat(parts: Iterable, axis: int = 0) -> Tensor:
    """Concatenate tensors along `axis`."""
    parts = [as_tensor(p) for p in parts]
    tape = _merge_tapes(*parts)
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + [p.data.shape[axis] for p in parts])

    def make_vjp(i):
        sl = [slice(None)] * out_data.ndim
        sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        sl = tuple(sl)
        return lambda g: g[sl]

    return _record(tape, out_data, [(p, make_vjp(i)) for i, p in enumerate(parts)])
