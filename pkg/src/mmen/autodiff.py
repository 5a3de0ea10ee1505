"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the handful of operations the MLP stacks and losses need are provided.
Every operation is a method on :class:`Tape`; a tape created with
``record=False`` evaluates values only, which is what inference and the
finite-difference oracle use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "matmul",
    "affine",
    "relu",
    "log_softmax",
    "backward",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes do not agree."""


class Tensor:
    """A dense array of doubles with a lazily allocated gradient buffer."""

    __slots__ = ("values", "grad", "requires_grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"tensors are rank <= 2, got shape {arr.shape}")
        self.values = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.values.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"


@dataclass(frozen=True)
class _Record:
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered log of differentiable operations.

    Records are appended in execution order, so the list is already a
    topological order and backward just walks it in reverse.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.records: list[_Record] = []
        self._produced: set[int] = set()

    def __len__(self) -> int:
        return len(self.records)

    def _emit(self, values: np.ndarray, inputs: tuple, grad_fn) -> Tensor:
        out = Tensor.__new__(Tensor)
        out.values = values
        out.grad = None
        out.requires_grad = False
        out.name = None
        if self.record:
            self.records.append(_Record(inputs, out, grad_fn))
            self._produced.add(id(out))
        return out

    def owns(self, t: Tensor) -> bool:
        return id(t) in self._produced

    # -- operations -------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.values.ndim != 2 or b.values.ndim != 2:
            raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(
                f"matmul inner dimensions differ: {a.shape[0]}x{a.shape[1]} @ "
                f"{b.shape[0]}x{b.shape[1]}"
            )
        av, bv = a.values, b.values

        def grad_fn(g):
            return g @ bv.T, av.T @ g

        return self._emit(av @ bv, (a, b), grad_fn)

    def affine(self, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
        if x.values.ndim != 2 or w.values.ndim != 2 or b.values.ndim != 1:
            raise ShapeError(f"affine expects x[m,d], w[d,h], b[h]; got {x.shape}, {w.shape}, {b.shape}")
        if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
            raise ShapeError(
                f"affine shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}"
            )
        xv, wv = x.values, w.values

        def grad_fn(g):
            return g @ wv.T, xv.T @ g, g.sum(axis=0)

        return self._emit(xv @ wv + b.values, (x, w, b), grad_fn)

    def relu(self, x: Tensor) -> Tensor:
        mask = x.values > 0

        def grad_fn(g):
            return (g * mask,)

        return self._emit(np.where(mask, x.values, 0.0), (x,), grad_fn)

    def log_softmax(self, x: Tensor) -> Tensor:
        if x.values.ndim != 2 or x.shape[1] < 2:
            raise ShapeError(f"log_softmax needs [m, K>=2] input, got {x.shape}")
        shifted = x.values - x.values.max(axis=1, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        probs = np.exp(out)

        def grad_fn(g):
            return (g - probs * g.sum(axis=1, keepdims=True),)

        return self._emit(out, (x,), grad_fn)

    def exp(self, x: Tensor) -> Tensor:
        out = np.exp(x.values)

        def grad_fn(g):
            return (g * out,)

        return self._emit(out, (x,), grad_fn)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"mul needs equal shapes, got {a.shape} and {b.shape}")
        av, bv = a.values, b.values

        def grad_fn(g):
            return g * bv, g * av

        return self._emit(av * bv, (a, b), grad_fn)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"add needs equal shapes, got {a.shape} and {b.shape}")

        def grad_fn(g):
            return g, g

        return self._emit(a.values + b.values, (a, b), grad_fn)

    def scale(self, x: Tensor, c: float) -> Tensor:
        c = float(c)

        def grad_fn(g):
            return (g * c,)

        return self._emit(x.values * c, (x,), grad_fn)

    def sum(self, x: Tensor) -> Tensor:
        shape = x.shape

        def grad_fn(g):
            return (np.broadcast_to(g, shape).copy(),)

        return self._emit(np.array(x.values.sum()), (x,), grad_fn)

    def grad_reverse(self, x: Tensor, coeff: float) -> Tensor:
        """Identity forward; backward multiplies the gradient by ``-coeff``."""
        c = -float(coeff)

        def grad_fn(g):
            return (g * c,)

        return self._emit(x.values.copy(), (x,), grad_fn)

    # -- reverse pass -----------------------------------------------------

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.record:
            raise RuntimeError("tape was created with record=False")
        if not self.owns(loss):
            raise ValueError("loss was not produced on this tape")
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        for rec in reversed(self.records):
            g = pending.pop(id(rec.output), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                key = id(inp)
                if key in self._produced:
                    if key in pending:
                        pending[key] = pending[key] + gi
                    else:
                        pending[key] = gi
                elif inp.requires_grad:
                    inp._accumulate(gi)


def _tape(tape: Optional[Tape]) -> Tape:
    return tape if tape is not None else Tape(record=False)


def matmul(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    return _tape(tape).matmul(a, b)


def affine(x: Tensor, w: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    return _tape(tape).affine(x, w, b)


def relu(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    return _tape(tape).relu(x)


def log_softmax(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    return _tape(tape).log_softmax(x)


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def grad_check(
    f: Callable[[Tape], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
) -> float:
    """Compare reverse-mode gradients of ``f`` with central differences.

    ``f`` receives a tape and must return a scalar tensor built on it. The
    parameters are perturbed in place and restored afterwards.

    Returns the maximum over all parameter entries of
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h={h} outside [1e-7, 1e-3]")
    saved = [(p.requires_grad, p.grad) for p in params]
    for p in params:
        p.requires_grad = True
        p.grad = None
    tape = Tape()
    tape.backward(f(tape))
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.values) for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.values.reshape(-1)
        a_flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(Tape(record=False)).item()
            flat[i] = orig - h
            down = f(Tape(record=False)).item()
            flat[i] = orig
            num = (up - down) / (2.0 * h)
            err = abs(a_flat[i] - num) / max(1.0, abs(a_flat[i]), abs(num))
            worst = max(worst, err)
    for p, (rg, g) in zip(params, saved):
        p.requires_grad = rg
        p.grad = g
    return worst
