"""Dense float64 numeric kernel with per-pass reverse-mode gradients.

All model math is expressed through the operations in this module.  Each
operation computes its result eagerly on numpy arrays and, when a
:class:`Tape` is supplied, records a closure that propagates gradients
backwards through that single step.  Replaying the closures in reverse
order of recording is a valid reverse topological traversal because the
forward pass builds the graph sequentially.

Vector operations generally also accept a 2-D array whose rows are
independent vectors; this is how mini-batches are expressed.
"""

from __future__ import annotations

import json
import struct
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CheckpointError,
    ContractViolation,
    DimensionError,
    NumericError,
)

NORM_EPS = 1e-12


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    ``trainable`` marks optimizer-visible leaves.  Outputs of recorded
    operations receive gradients regardless; leaves only when trainable,
    so frozen inputs never accumulate gradient work.
    """

    __slots__ = ("values", "grad", "name", "trainable", "_rg")

    def __init__(self, values, name: str | None = None, trainable: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.name = name
        self.trainable = trainable
        self._rg = trainable  # does gradient need to flow into this tensor?

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        return self.grad

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        label = self.name or "tensor"
        return f"Tensor({label}, shape={self.values.shape})"


class Tape:
    """Record of one forward pass, replayable exactly once for gradients.

    Also tracks which trainable tensors participated in the pass; the
    training loop uses this both for regularization scope and to restrict
    optimizer updates to touched parameters.
    """

    def __init__(self):
        self._steps: list = []
        self._touched: dict[int, Tensor] = {}
        self._consumed = False

    def record(self, step) -> None:
        self._steps.append(step)

    def touch(self, tensor: Tensor) -> None:
        if tensor.trainable:
            self._touched.setdefault(id(tensor), tensor)

    def touched_parameters(self) -> list[Tensor]:
        """Trainable tensors that participated, in first-touch order."""
        return list(self._touched.values())

    def backward(self, loss: Tensor) -> None:
        """Populate gradients of every participating tensor from ``loss``."""
        if self._consumed:
            raise ContractViolation("backward() may run only once per forward pass")
        self._consumed = True
        if loss.values.ndim != 0:
            raise ContractViolation("backward() expects a scalar loss")
        loss.ensure_grad()
        loss.grad = np.ones_like(loss.values)
        for step in reversed(self._steps):
            step()


def _record(tape: Tape | None, out: Tensor, inputs: Sequence[Tensor], backward) -> Tensor:
    """Attach ``backward`` to the tape if any input needs gradients."""
    if tape is None:
        return out
    for t in inputs:
        tape.touch(t)
    if not any(t._rg for t in inputs):
        return out
    out._rg = True
    out.ensure_grad()
    for t in inputs:
        if t._rg:
            t.ensure_grad()
    tape.record(backward)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# linear algebra


def linear(w: Tensor, b: Tensor | None, x: Tensor, tape: Tape | None = None) -> Tensor:
    """Affine map ``W x + b`` for a vector x, applied row-wise for 2-D x.

    ``b`` may be None for a pure linear layer.
    """
    wv, xv = w.values, x.values
    if wv.ndim != 2:
        raise DimensionError(f"weight must be 2-D, got shape {wv.shape}")
    out_dim, in_dim = wv.shape
    if xv.ndim == 1:
        if xv.shape[0] != in_dim:
            raise DimensionError(f"linear: weight {wv.shape} does not accept input {xv.shape}")
        yv = wv @ xv
    elif xv.ndim == 2:
        if xv.shape[1] != in_dim:
            raise DimensionError(f"linear: weight {wv.shape} does not accept input {xv.shape}")
        yv = xv @ wv.T
    else:
        raise DimensionError(f"linear input must be 1-D or 2-D, got shape {xv.shape}")
    if b is not None:
        if b.values.shape != (out_dim,):
            raise DimensionError(f"bias shape {b.values.shape} does not match output dim {out_dim}")
        yv = yv + b.values
    out = Tensor(yv)
    inputs = (w, b, x) if b is not None else (w, x)

    def backward():
        g = out.grad
        if xv.ndim == 1:
            if w._rg:
                w.grad += np.outer(g, xv)
            if b is not None and b._rg:
                b.grad += g
            if x._rg:
                x.grad += wv.T @ g
        else:
            if w._rg:
                w.grad += g.T @ xv
            if b is not None and b._rg:
                b.grad += g.sum(axis=0)
            if x._rg:
                x.grad += g @ wv

    return _record(tape, out, inputs, backward)


def matvec(x: Tensor, w: Tensor, tape: Tape | None = None) -> Tensor:
    """Row-wise dot products: ``[B, n] @ [n] -> [B]`` (or ``[n] @ [n] -> scalar``)."""
    xv, wv = x.values, w.values
    if xv.shape[-1] != wv.shape[0]:
        raise DimensionError(f"matvec: {xv.shape} incompatible with {wv.shape}")
    out = Tensor(xv @ wv)

    def backward():
        g = out.grad
        if x._rg:
            x.grad += np.multiply.outer(g, wv) if xv.ndim == 2 else g * wv
        if w._rg:
            w.grad += g @ xv if xv.ndim == 2 else g * xv

    return _record(tape, out, (x, w), backward)


def dot(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Inner product of two equal-length vectors."""
    av, bv = a.values, b.values
    if av.shape != bv.shape or av.ndim != 1:
        raise DimensionError(f"dot: incompatible shapes {av.shape} and {bv.shape}")
    out = Tensor(av @ bv)

    def backward():
        g = out.grad
        if a._rg:
            a.grad += g * bv
        if b._rg:
            b.grad += g * av

    return _record(tape, out, (a, b), backward)


# ---------------------------------------------------------------------------
# structural operations


def concat(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Concatenate along the last axis; the backward pass splits the gradient."""
    av, bv = a.values, b.values
    if av.ndim != bv.ndim or (av.ndim == 2 and av.shape[0] != bv.shape[0]):
        raise DimensionError(f"concat: incompatible shapes {av.shape} and {bv.shape}")
    axis = av.ndim - 1
    out = Tensor(np.concatenate([av, bv], axis=axis))
    split = av.shape[axis]

    def backward():
        g = out.grad
        ga, gb = (g[..., :split], g[..., split:])
        if a._rg:
            a.grad += ga
        if b._rg:
            b.grad += gb

    return _record(tape, out, (a, b), backward)


def mean_vectors(xs: Sequence[Tensor], tape: Tape | None = None) -> Tensor:
    """Element-wise mean of equally shaped tensors."""
    if len(xs) == 0:
        raise ContractViolation("mean_vectors requires at least one input")
    shape = xs[0].values.shape
    for x in xs:
        if x.values.shape != shape:
            raise DimensionError("mean_vectors inputs must share one shape")
    out = Tensor(sum(x.values for x in xs) / len(xs))
    inv = 1.0 / len(xs)

    def backward():
        g = out.grad * inv
        for x in xs:
            if x._rg:
                x.grad += g

    return _record(tape, out, tuple(xs), backward)


def weighted_sum(pairs: Sequence[tuple[float, Tensor]], tape: Tape | None = None) -> Tensor:
    """Sum of vectors scaled by plain-float weights."""
    if len(pairs) == 0:
        raise ContractViolation("weighted_sum requires at least one input")
    shape = pairs[0][1].values.shape
    acc = np.zeros(shape)
    for wgt, x in pairs:
        if x.values.shape != shape:
            raise DimensionError("weighted_sum inputs must share one shape")
        acc += float(wgt) * x.values
    out = Tensor(acc)

    def backward():
        g = out.grad
        for wgt, x in pairs:
            if x._rg:
                x.grad += float(wgt) * g

    return _record(tape, out, tuple(x for _, x in pairs), backward)


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Element-wise sum of two equally shaped tensors."""
    if a.values.shape != b.values.shape:
        raise DimensionError(f"add: incompatible shapes {a.values.shape} and {b.values.shape}")
    out = Tensor(a.values + b.values)

    def backward():
        g = out.grad
        if a._rg:
            a.grad += g
        if b._rg:
            b.grad += g

    return _record(tape, out, (a, b), backward)


def scale(x: Tensor, c: float, tape: Tape | None = None) -> Tensor:
    """Multiply by a plain-float constant."""
    c = float(c)
    out = Tensor(c * x.values)

    def backward():
        if x._rg:
            x.grad += c * out.grad

    return _record(tape, out, (x,), backward)


def gather_rows(x: Tensor, idx, tape: Tape | None = None) -> Tensor:
    """Select rows ``x[idx]``; the backward pass scatter-adds into ``x``.

    Repeated indices accumulate, which is what embedding lookups need.
    """
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(x.values[idx])

    def backward():
        if x._rg:
            np.add.at(x.grad, idx, out.grad)

    return _record(tape, out, (x,), backward)


def take_row(x: Tensor, i: int, tape: Tape | None = None) -> Tensor:
    """Extract row ``i`` of a 2-D tensor as a vector."""
    i = int(i)
    out = Tensor(x.values[i])

    def backward():
        if x._rg:
            x.grad[i] += out.grad

    return _record(tape, out, (x,), backward)


def mean_rows_stride(x: Tensor, stride: int, tape: Tape | None = None) -> Tensor:
    """Average each consecutive run of ``stride`` rows: ``[B*S, d] -> [B, d]``."""
    xv = x.values
    if xv.ndim != 2 or xv.shape[0] % stride != 0:
        raise DimensionError(f"mean_rows_stride: shape {xv.shape} not divisible by {stride}")
    groups = xv.shape[0] // stride
    out = Tensor(xv.reshape(groups, stride, xv.shape[1]).mean(axis=1))

    def backward():
        if x._rg:
            x.grad += np.repeat(out.grad, stride, axis=0) / stride

    return _record(tape, out, (x,), backward)


def sum_rows_stride(x: Tensor, stride: int, tape: Tape | None = None) -> Tensor:
    """Sum each consecutive run of ``stride`` rows: ``[B*S, d] -> [B, d]``."""
    xv = x.values
    if xv.ndim != 2 or xv.shape[0] % stride != 0:
        raise DimensionError(f"sum_rows_stride: shape {xv.shape} not divisible by {stride}")
    groups = xv.shape[0] // stride
    out = Tensor(xv.reshape(groups, stride, xv.shape[1]).sum(axis=1))

    def backward():
        if x._rg:
            x.grad += np.repeat(out.grad, stride, axis=0)

    return _record(tape, out, (x,), backward)


def segment_mean(x: Tensor, segment_ids, num_segments: int, tape: Tape | None = None) -> Tensor:
    """Mean of rows per segment id; every segment must receive >= 1 row."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    xv = x.values
    if xv.ndim != 2 or seg.shape != (xv.shape[0],):
        raise DimensionError("segment_mean: ids must map one per row of a 2-D input")
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    if np.any(counts == 0):
        raise ContractViolation("segment_mean: every segment needs at least one row")
    acc = np.zeros((num_segments, xv.shape[1]))
    np.add.at(acc, seg, xv)
    out = Tensor(acc / counts[:, None])

    def backward():
        if x._rg:
            x.grad += out.grad[seg] / counts[seg, None]

    return _record(tape, out, (x,), backward)


def mul_rows(x: Tensor, weights, tape: Tape | None = None) -> Tensor:
    """Scale each row of ``x`` by a plain-float weight (weights are constants)."""
    w = np.asarray(weights, dtype=np.float64)
    xv = x.values
    if xv.ndim != 2 or w.shape != (xv.shape[0],):
        raise DimensionError("mul_rows: need one weight per row")
    out = Tensor(xv * w[:, None])

    def backward():
        if x._rg:
            x.grad += out.grad * w[:, None]

    return _record(tape, out, (x,), backward)


# ---------------------------------------------------------------------------
# element-wise nonlinearities


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Element-wise max(0, x)."""
    mask = x.values > 0
    out = Tensor(np.where(mask, x.values, 0.0))

    def backward():
        if x._rg:
            x.grad += out.grad * mask

    return _record(tape, out, (x,), backward)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # evaluated piecewise to stay finite for large |v|
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Element-wise logistic function, output strictly inside (0, 1)."""
    yv = _sigmoid(np.atleast_1d(x.values)).reshape(x.values.shape)
    out = Tensor(yv)

    def backward():
        if x._rg:
            x.grad += out.grad * yv * (1.0 - yv)

    return _record(tape, out, (x,), backward)


def dropout(
    x: Tensor,
    ratio: float,
    rng: np.random.Generator,
    training: bool,
    tape: Tape | None = None,
) -> Tensor:
    """Inverted dropout: zero with probability ``ratio``, scale survivors.

    Identity at inference time and for ratio 0; the expected value of the
    output equals the input either way.
    """
    if not 0.0 <= ratio < 1.0:
        raise ContractViolation(f"dropout ratio must be in [0, 1), got {ratio}")
    if not training or ratio == 0.0:
        return x
    keep = rng.random(x.values.shape) >= ratio
    factor = 1.0 / (1.0 - ratio)
    out = Tensor(np.where(keep, x.values * factor, 0.0))

    def backward():
        if x._rg:
            x.grad += np.where(keep, out.grad * factor, 0.0)

    return _record(tape, out, (x,), backward)


def l2_normalize(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Scale to unit L2 norm; vectors with norm <= eps pass through unchanged.

    For 2-D input each row is normalized independently.
    """
    xv = x.values
    if xv.ndim == 1:
        n = float(np.linalg.norm(xv))
        if n <= NORM_EPS:
            out = Tensor(xv.copy())

            def backward():
                if x._rg:
                    x.grad += out.grad

        else:
            yv = xv / n
            out = Tensor(yv)

            def backward():
                if x._rg:
                    g = out.grad
                    x.grad += (g - yv * (yv @ g)) / n

        return _record(tape, out, (x,), backward)

    if xv.ndim != 2:
        raise DimensionError(f"l2_normalize expects 1-D or 2-D input, got {xv.shape}")
    norms = np.linalg.norm(xv, axis=1)
    live = norms > NORM_EPS
    safe = np.where(live, norms, 1.0)
    yv = np.where(live[:, None], xv / safe[:, None], xv)
    out = Tensor(yv)

    def backward():
        if x._rg:
            g = out.grad
            inner = np.sum(yv * g, axis=1, keepdims=True)
            gx = np.where(live[:, None], (g - yv * inner) / safe[:, None], g)
            x.grad += gx

    return _record(tape, out, (x,), backward)


# ---------------------------------------------------------------------------
# losses and reductions


def bpr_pair_loss(score_pos: Tensor, score_neg: Tensor, tape: Tape | None = None) -> Tensor:
    """Pairwise ranking loss ``-ln sigmoid(pos - neg)``, element-wise.

    Computed as ``log(1 + exp(neg - pos))`` via logaddexp for stability.
    """
    pv, nv = score_pos.values, score_neg.values
    if pv.shape != nv.shape:
        raise DimensionError(f"bpr_pair_loss: incompatible shapes {pv.shape} and {nv.shape}")
    delta = pv - nv
    out = Tensor(np.logaddexp(0.0, -delta))
    s = _sigmoid(np.atleast_1d(delta)).reshape(delta.shape)

    def backward():
        g = out.grad
        if score_pos._rg:
            score_pos.grad += g * (s - 1.0)
        if score_neg._rg:
            score_neg.grad += g * (1.0 - s)

    return _record(tape, out, (score_pos, score_neg), backward)


def mean_all(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Mean over all elements, producing a scalar."""
    out = Tensor(x.values.mean())
    inv = 1.0 / x.values.size

    def backward():
        if x._rg:
            x.grad += out.grad * inv

    return _record(tape, out, (x,), backward)


def sum_squares(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Sum of squared entries, producing a scalar."""
    out = Tensor(np.sum(x.values * x.values))

    def backward():
        if x._rg:
            x.grad += 2.0 * out.grad * x.values

    return _record(tape, out, (x,), backward)


def check_finite(x: Tensor, context: str = "") -> Tensor:
    """Raise :class:`NumericError` if the tensor holds NaN or Inf."""
    if not np.all(np.isfinite(x.values)):
        label = x.name or "tensor"
        raise NumericError(f"non-finite values in {label}{' (' + context + ')' if context else ''}")
    return x


# ---------------------------------------------------------------------------
# checkpoint blob


CHECKPOINT_DTYPE = "<f8"


def save_checkpoint(path, named_tensors: Iterable[tuple[str, Tensor]], meta: dict | None = None) -> None:
    """Write tensors as a JSON header line followed by raw little-endian floats."""
    items = [(name, t.values) for name, t in named_tensors]
    header = dict(meta or {})
    header["dtype"] = CHECKPOINT_DTYPE
    header["tensors"] = [{"name": name, "shape": list(v.shape)} for name, v in items]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, v in items:
            fh.write(np.ascontiguousarray(v, dtype=CHECKPOINT_DTYPE).tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint blob back into ``(meta, {name: array})``."""
    try:
        with open(path, "rb") as fh:
            raw_len = fh.read(8)
            if len(raw_len) != 8:
                raise CheckpointError(f"truncated checkpoint header in {path}")
            (hlen,) = struct.unpack("<Q", raw_len)
            try:
                header = json.loads(fh.read(hlen).decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise CheckpointError(f"malformed checkpoint header in {path}: {exc}") from exc
            if header.get("dtype") != CHECKPOINT_DTYPE:
                raise CheckpointError(f"unsupported checkpoint dtype {header.get('dtype')!r}")
            tensors: dict[str, np.ndarray] = {}
            for spec in header["tensors"]:
                shape = tuple(int(s) for s in spec["shape"])
                count = int(np.prod(shape)) if shape else 1
                buf = fh.read(count * 8)
                if len(buf) != count * 8:
                    raise CheckpointError(f"truncated payload for tensor {spec['name']!r}")
                tensors[spec["name"]] = np.frombuffer(buf, dtype=CHECKPOINT_DTYPE).reshape(shape).copy()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    meta = {k: v for k, v in header.items() if k not in ("dtype", "tensors")}
    return meta, tensors
