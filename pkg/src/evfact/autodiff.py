"""Reverse-mode automatic differentiation over dense float64 tensors.

A fresh :class:`Tape` is built for every training example: the recurrent
models unroll into a different graph per sentence, so nothing is compiled
or cached. The primitive set is exactly what the sequence and tree
recurrences plus the regression head need: an affine map, concatenation,
elementwise sigmoid/tanh/ReLU, the Hadamard product, elementwise sums, a
sum-reduction, and the robust regression loss.

Tapes are topologically ordered by construction; :func:`backward` replays
the entries once, in reverse. Tensors flagged non-trainable (frozen word
embeddings) never receive a gradient. A tape and its tensors belong to a
single thread; independent tapes are independent.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, NumericError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "AdamState",
    "backward",
    "adam_step",
    "grad_check",
    "grad_check_report",
    "GradCheckReport",
]


class Tensor:
    """A dense float64 array plus an optional same-shape gradient buffer."""

    __slots__ = ("values", "grad", "trainable", "name", "uid", "_tape_id", "_node")

    _uids = itertools.count()

    def __init__(self, values, trainable: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.trainable = trainable
        self.name = name
        self.uid = next(Tensor._uids)
        self._tape_id = -1
        self._node = -1

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self):
        label = self.name or "tensor"
        return f"Tensor({label}, shape={self.values.shape}, trainable={self.trainable})"


def _flat_op(fn, *arrays):
    # elementwise kernels take 1-D contiguous buffers
    flats = [np.ascontiguousarray(a).reshape(-1) for a in arrays]
    return fn(*flats).reshape(arrays[0].shape)


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Entries are tuples ``(kind, input node-ids, output node-id, saved)``
    where ``saved`` holds whatever the forward pass must keep for the
    backward sweep. Inputs of entry k are always produced by an entry
    before k or are leaves, so a single reverse sweep suffices.
    """

    _ids = itertools.count()

    def __init__(self):
        self.tape_id = next(Tape._ids)
        self.entries: list[tuple] = []
        self.nodes: list[Tensor] = []
        self._produced: list[bool] = []

    # -- graph bookkeeping -------------------------------------------------

    def _admit(self, t: Tensor) -> int:
        """Register a tensor on this tape (as a leaf if it is new here)."""
        if t._tape_id != self.tape_id:
            t._tape_id = self.tape_id
            t._node = len(self.nodes)
            self.nodes.append(t)
            self._produced.append(False)
        return t._node

    def leaf(self, values, trainable: bool = False, name: str | None = None) -> Tensor:
        t = Tensor(values, trainable=trainable, name=name)
        self._admit(t)
        return t

    def _record(self, kind, inputs, out_values, saved=None) -> Tensor:
        in_ids = tuple(self._admit(t) for t in inputs)
        out = Tensor(out_values)
        out_id = self._admit(out)
        self._produced[out_id] = True
        self.entries.append((kind, in_ids, out_id, saved))
        return out

    def trainable_leaves(self) -> list[Tensor]:
        return [
            t
            for i, t in enumerate(self.nodes)
            if t.trainable and not self._produced[i]
        ]

    def relu_input_values(self) -> list[np.ndarray]:
        """Saved ReLU pre-activations, in tape order (for kink detection)."""
        return [saved for kind, _, _, saved in self.entries if kind == "relu"]

    # -- primitives ----------------------------------------------------------

    def affine(self, w: Tensor, x: Tensor, b: Tensor) -> Tensor:
        wv, xv, bv = w.values, x.values, b.values
        if (
            wv.ndim != 2
            or xv.ndim != 1
            or bv.ndim != 1
            or wv.shape[1] != xv.shape[0]
            or wv.shape[0] != bv.shape[0]
        ):
            raise ShapeError(
                f"affine: W{wv.shape} @ x{xv.shape} + b{bv.shape} does not conform"
            )
        return self._record("affine", (w, x, b), wv @ xv + bv)

    def concat(self, parts: Sequence[Tensor]) -> Tensor:
        if not parts:
            raise ShapeError("concat: needs at least one input")
        for p in parts:
            if p.values.ndim != 1:
                raise ShapeError(f"concat: inputs must be vectors, got {p.values.shape}")
        out = np.concatenate([p.values for p in parts])
        sizes = tuple(p.values.shape[0] for p in parts)
        return self._record("concat", tuple(parts), out, sizes)

    def sigmoid(self, x: Tensor) -> Tensor:
        out = _flat_op(kernels.sigmoid, x.values)
        return self._record("sigmoid", (x,), out, out)

    def tanh(self, x: Tensor) -> Tensor:
        out = np.tanh(x.values)
        return self._record("tanh", (x,), out, out)

    def relu(self, x: Tensor) -> Tensor:
        out = _flat_op(kernels.relu, x.values)
        return self._record("relu", (x,), out, x.values)

    def hadamard(self, a: Tensor, b: Tensor) -> Tensor:
        if a.values.shape != b.values.shape:
            raise ShapeError(
                f"hadamard: shapes {a.values.shape} and {b.values.shape} differ"
            )
        return self._record("hadamard", (a, b), a.values * b.values)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.values.shape != b.values.shape:
            raise ShapeError(f"add: shapes {a.values.shape} and {b.values.shape} differ")
        return self._record("add", (a, b), a.values + b.values)

    def add_n(self, xs: Sequence[Tensor]) -> Tensor:
        """Elementwise sum over a set; left-to-right accumulation order."""
        if not xs:
            raise ShapeError("add_n: needs at least one input")
        shape = xs[0].values.shape
        for x in xs:
            if x.values.shape != shape:
                raise ShapeError(
                    f"add_n: shapes {shape} and {x.values.shape} differ"
                )
        out = xs[0].values.copy()
        for x in xs[1:]:
            out += x.values
        return self._record("add_n", tuple(xs), out)

    def sum(self, x: Tensor) -> Tensor:
        return self._record("sum", (x,), np.asarray(np.sum(x.values)), x.values.shape)

    def huber(self, pred: Tensor, gold: float) -> Tensor:
        """Robust regression loss: quadratic within one unit of error, linear beyond."""
        if pred.values.size != 1:
            raise ShapeError(f"huber: prediction must be scalar, got {pred.values.shape}")
        gold = float(gold)
        pv = float(pred.values.reshape(-1)[0])
        if not (math.isfinite(pv) and math.isfinite(gold)):
            raise NumericError(f"huber: non-finite input (pred={pv}, gold={gold})")
        err = pv - gold
        val = 0.5 * err * err if abs(err) <= 1.0 else abs(err) - 0.5
        return self._record("huber", (pred,), np.asarray(val), err)

    _PRIMITIVES = frozenset(
        {"affine", "concat", "sigmoid", "tanh", "relu", "hadamard",
         "add", "add_n", "sum", "huber"}
    )

    def apply(self, kind: str, *inputs, **kwargs) -> Tensor:
        """Apply a primitive by kind name (generic dispatch entry point)."""
        if kind not in self._PRIMITIVES:
            raise ContractError(f"unknown primitive kind {kind!r}")
        return getattr(self, kind)(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# backward sweep
# ---------------------------------------------------------------------------

def _bwd_affine(g, saved, ins):
    wv, xv, _ = ins
    return np.outer(g, xv), wv.T @ g, g.copy()


def _bwd_concat(g, sizes, ins):
    grads, offset = [], 0
    for size in sizes:
        grads.append(g[offset : offset + size].copy())
        offset += size
    return tuple(grads)


def _bwd_sigmoid(g, out, ins):
    return (_flat_op(kernels.sigmoid_grad, g, out),)


def _bwd_tanh(g, out, ins):
    return (_flat_op(kernels.tanh_grad, g, out),)


def _bwd_relu(g, x_in, ins):
    return (_flat_op(kernels.relu_grad, g, x_in),)


def _bwd_hadamard(g, saved, ins):
    av, bv = ins
    return g * bv, g * av


def _bwd_add(g, saved, ins):
    return g.copy(), g.copy()


def _bwd_add_n(g, saved, ins):
    return tuple(g.copy() for _ in ins)


def _bwd_sum(g, shape, ins):
    return (np.full(shape, float(g)),)


def _bwd_huber(g, err, ins):
    slope = err if abs(err) <= 1.0 else math.copysign(1.0, err)
    return (np.full(ins[0].shape, float(g) * slope),)


_BACKWARD = {
    "affine": _bwd_affine,
    "concat": _bwd_concat,
    "sigmoid": _bwd_sigmoid,
    "tanh": _bwd_tanh,
    "relu": _bwd_relu,
    "hadamard": _bwd_hadamard,
    "add": _bwd_add,
    "add_n": _bwd_add_n,
    "sum": _bwd_sum,
    "huber": _bwd_huber,
}


def backward(tape: Tape, loss: Tensor) -> None:
    """Fill ``grad`` on every trainable leaf reachable from ``loss``.

    Trainable leaves not reachable from the loss receive zeros; tensors
    flagged non-trainable are never touched. Gradients accumulate into any
    pre-existing ``grad`` buffers.
    """
    if loss._tape_id != tape.tape_id:
        raise ContractError("backward: loss was not produced on this tape")
    if loss.values.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.values.shape}")

    adjoints: list[np.ndarray | None] = [None] * len(tape.nodes)
    adjoints[loss._node] = np.ones_like(loss.values)

    for kind, in_ids, out_id, saved in reversed(tape.entries):
        g = adjoints[out_id]
        if g is None:
            continue
        ins = tuple(tape.nodes[i].values for i in in_ids)
        grads = _BACKWARD[kind](g, saved, ins)
        for node, grad in zip(in_ids, grads):
            if adjoints[node] is None:
                adjoints[node] = grad
            else:
                adjoints[node] += grad

    for node, tensor in enumerate(tape.nodes):
        if tape._produced[node] or not tensor.trainable:
            continue
        if tensor.grad is None:
            tensor.grad = np.zeros_like(tensor.values)
        adj = adjoints[node]
        if adj is not None:
            tensor.grad += adj


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamState:
    """Adam moment buffers keyed by parameter identity, plus the step count.

    The learning rate defaults to 1e-3; the decay rates and epsilon are the
    optimizer's canonical defaults.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._moments: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def moments(self, param: Tensor) -> tuple[np.ndarray, np.ndarray]:
        mv = self._moments.get(param.uid)
        if mv is None:
            mv = (np.zeros(param.values.size), np.zeros(param.values.size))
            self._moments[param.uid] = mv
        return mv


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place, then zero the grads."""
    state.t += 1
    for p in params:
        if p.grad is None:
            raise ContractError(f"adam_step: {p!r} has no gradient")
        m, v = state.moments(p)
        kernels.adam_update(
            p.values.reshape(-1), p.grad.reshape(-1), m, v,
            state.t, state.lr, state.beta1, state.beta2, state.eps,
        )
        p.grad.fill(0.0)


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------

class GradCheckReport:
    """Outcome of a central-difference gradient check.

    ``skipped`` lists (leaf index, coordinate) pairs where perturbing the
    coordinate drove some ReLU pre-activation across zero, making the
    central difference meaningless there.
    """

    def __init__(self, max_rel_error: float, checked: int,
                 skipped: list[tuple[int, int]]):
        self.max_rel_error = max_rel_error
        self.checked = checked
        self.skipped = skipped

    def __repr__(self):
        return (
            f"GradCheckReport(max_rel_error={self.max_rel_error:.3e}, "
            f"checked={self.checked}, skipped={len(self.skipped)})"
        )


def _relu_sign_crossing(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    for av, bv in zip(a, b):
        if np.any((av > 0.0) != (bv > 0.0)):
            return True
    return False


#: function under test: maps input arrays to (tape, scalar loss, leaves to
#: check); the leaves must align with the input arrays one to one.
CheckedFn = Callable[
    [Sequence[np.ndarray]], tuple[Tape, Tensor, Sequence[Tensor]]
]


def grad_check_report(
    fn: CheckedFn,
    points: Sequence[np.ndarray],
    eps: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients of ``fn`` against central differences.

    ``fn`` builds its own tape from the given input arrays and returns the
    tape, the scalar loss, and the trainable leaf tensors corresponding to
    the inputs. The relative error at a coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``; coordinates whose
    perturbation pushes a ReLU pre-activation across zero are skipped and
    reported.
    """
    if not (0.0 < eps <= 1e-3):
        raise ValueError(f"grad_check: eps must lie in (0, 1e-3], got {eps}")
    points = [np.asarray(p, dtype=np.float64) for p in points]

    tape, loss, leaves = fn(points)
    if len(leaves) != len(points):
        raise ContractError(
            f"grad_check: fn returned {len(leaves)} leaves for {len(points)} inputs"
        )
    backward(tape, loss)
    analytic = [leaf.grad.copy() for leaf in leaves]

    max_err = 0.0
    checked = 0
    skipped: list[tuple[int, int]] = []
    for li, point in enumerate(points):
        flat = point.reshape(-1)
        for ci in range(flat.size):
            # each run gets its own copies: fn may keep references
            plus = [p.copy() for p in points]
            plus[li].reshape(-1)[ci] = flat[ci] + eps
            tape_p, loss_p, _ = fn(plus)
            minus = [p.copy() for p in points]
            minus[li].reshape(-1)[ci] = flat[ci] - eps
            tape_m, loss_m, _ = fn(minus)
            if _relu_sign_crossing(
                tape_p.relu_input_values(), tape_m.relu_input_values()
            ):
                skipped.append((li, ci))
                continue
            numeric = (float(loss_p.values) - float(loss_m.values)) / (2.0 * eps)
            a = float(analytic[li].reshape(-1)[ci])
            err = abs(a - numeric) / max(1.0, abs(a))
            max_err = max(max_err, err)
            checked += 1
    return GradCheckReport(max_err, checked, skipped)


def grad_check(fn, points, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients."""
    return grad_check_report(fn, points, eps).max_rel_error
