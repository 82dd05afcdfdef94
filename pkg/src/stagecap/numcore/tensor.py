"""Reverse-mode tape over float64 numpy arrays.

The op set covers exactly what the caption models need: affine maps, row
softmax / layer norm, GELU, row gathers, fused multi-head attention,
block pooling, dropout, and the two loss heads (row cross-entropy and
squared error). Forward values are materialized eagerly as nodes are
pushed onto the tape; `Graph.backward` walks the tape once in reverse
topological order, which is the construction order by definition.

Determinism: everything is float64 numpy with index-order reductions,
so identical inputs yield bit-identical outputs and gradients.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np
from scipy.special import erf

from ..errors import GraphError, ShapeError

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))

# Large-negative fill for attention masks; avoids inf-inf NaNs in the
# max-shift of the softmax while still zeroing masked weights.
MASK_FILL = -1e30


class Tensor:
    """A named float64 array; parameters set requires_grad=True.

    Data is written once at construction (or by the optimizer between
    graphs) and treated as immutable while any graph references it.
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Tensor(name={self.name!r}, shape={self.shape}, grad={self.requires_grad})"


class Var:
    """Handle to a node on a graph's tape."""

    __slots__ = ("graph", "index")

    def __init__(self, graph: "Graph", index: int):
        self.graph = graph
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.graph._nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


class _Node:
    __slots__ = ("op", "inputs", "value", "ctx")

    def __init__(self, op: str, inputs: tuple[int, ...], value: np.ndarray, ctx: dict):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.ctx = ctx


def _sum_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _row_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class Graph:
    """A single-use forward tape; build ops, then call `backward` once."""

    def __init__(self, *, training: bool = False, dropout_rng: np.random.Generator | None = None):
        self._nodes: list[_Node] = []
        self._param_index: dict[int, int] = {}
        self._param_refs: list[Tensor] = []
        self.training = training
        self._dropout_rng = dropout_rng

    # ------------------------------------------------------------------ #
    # node plumbing
    # ------------------------------------------------------------------ #

    def _push(self, op: str, inputs: tuple[int, ...], value: np.ndarray, **ctx) -> Var:
        self._nodes.append(_Node(op, inputs, value, ctx))
        return Var(self, len(self._nodes) - 1)

    def _val(self, v: Var) -> np.ndarray:
        if v.graph is not self:
            raise GraphError("op received a Var from a different graph")
        return v.value

    def param(self, tensor: Tensor) -> Var:
        """Register a Tensor leaf; repeated calls return the same node."""
        key = id(tensor)
        idx = self._param_index.get(key)
        if idx is not None:
            return Var(self, idx)
        var = self._push("leaf", (), tensor.data, tensor=tensor)
        self._param_index[key] = var.index
        self._param_refs.append(tensor)
        return var

    def input(self, array) -> Var:
        """A constant leaf (no gradient)."""
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim > 0:
            arr = np.ascontiguousarray(arr)
        return self._push("leaf", (), arr, tensor=None)

    # ------------------------------------------------------------------ #
    # primitives
    # ------------------------------------------------------------------ #

    def matmul(self, a: Var, b: Var) -> Var:
        av, bv = self._val(a), self._val(b)
        if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {av.shape} x {bv.shape}")
        return self._push("matmul", (a.index, b.index), av @ bv)

    def add(self, a: Var, b: Var) -> Var:
        av, bv = self._val(a), self._val(b)
        try:
            np.broadcast_shapes(av.shape, bv.shape)
        except ValueError:
            raise ShapeError(f"add: cannot broadcast {av.shape} + {bv.shape}") from None
        return self._push("add", (a.index, b.index), av + bv)

    def mul(self, a: Var, b: Var) -> Var:
        av, bv = self._val(a), self._val(b)
        try:
            np.broadcast_shapes(av.shape, bv.shape)
        except ValueError:
            raise ShapeError(f"mul: cannot broadcast {av.shape} * {bv.shape}") from None
        return self._push("mul", (a.index, b.index), av * bv)

    def scale(self, a: Var, c: float) -> Var:
        return self._push("scale", (a.index,), self._val(a) * float(c), c=float(c))

    def sigmoid(self, a: Var) -> Var:
        x = self._val(a)
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return self._push("sigmoid", (a.index,), out)

    def gelu(self, a: Var) -> Var:
        x = self._val(a)
        out = 0.5 * x * (1.0 + erf(x * _INV_SQRT2))
        return self._push("gelu", (a.index,), out)

    def clamp(self, a: Var, lo: float, hi: float) -> Var:
        x = self._val(a)
        return self._push("clamp", (a.index,), np.clip(x, lo, hi), lo=float(lo), hi=float(hi))

    def softmax_rows(self, a: Var) -> Var:
        x = self._val(a)
        if x.ndim == 0 or x.shape[-1] == 0:
            raise ShapeError(f"softmax_rows: rows must be nonempty, got shape {x.shape}")
        return self._push("softmax_rows", (a.index,), _row_softmax(x))

    def layer_norm_rows(self, a: Var, eps: float = 1e-12) -> Var:
        x = self._val(a)
        if x.ndim < 1 or x.shape[-1] == 0:
            raise ShapeError(f"layer_norm_rows: rows must be nonempty, got shape {x.shape}")
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv
        return self._push("layer_norm_rows", (a.index,), xhat, xhat=xhat, inv=inv)

    def gather_rows(self, a: Var, idx) -> Var:
        """Row lookup a[idx]; the embedding primitive and general row select."""
        x = self._val(a)
        indices = np.asarray(idx, dtype=np.intp)
        if indices.ndim != 1:
            raise ShapeError(f"gather_rows: index must be 1-D, got shape {indices.shape}")
        if x.ndim != 2:
            raise ShapeError(f"gather_rows: table must be 2-D, got shape {x.shape}")
        if indices.size and (indices.min() < 0 or indices.max() >= x.shape[0]):
            raise ShapeError(
                f"gather_rows: index out of range for table with {x.shape[0]} rows "
                f"(min={indices.min()}, max={indices.max()})"
            )
        return self._push("gather_rows", (a.index,), x[indices], idx=indices, rows=x.shape[0])

    def concat_cols(self, a: Var, b: Var) -> Var:
        av, bv = self._val(a), self._val(b)
        if av.ndim != 2 or bv.ndim != 2 or av.shape[0] != bv.shape[0]:
            raise ShapeError(f"concat_cols: incompatible shapes {av.shape} | {bv.shape}")
        return self._push(
            "concat_cols", (a.index, b.index), np.concatenate([av, bv], axis=1), split=av.shape[1]
        )

    def vstack(self, a: Var, b: Var) -> Var:
        av, bv = self._val(a), self._val(b)
        if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[1]:
            raise ShapeError(f"vstack: incompatible shapes {av.shape} / {bv.shape}")
        return self._push(
            "vstack", (a.index, b.index), np.concatenate([av, bv], axis=0), split=av.shape[0]
        )

    def slice_cols(self, a: Var, start: int, stop: int) -> Var:
        x = self._val(a)
        if x.ndim != 2 or not (0 <= start < stop <= x.shape[1]):
            raise ShapeError(f"slice_cols: bad range [{start}:{stop}] for shape {x.shape}")
        return self._push(
            "slice_cols", (a.index,), x[:, start:stop].copy(), start=start, stop=stop, width=x.shape[1]
        )

    def attention(
        self,
        q: Var,
        k: Var,
        v: Var,
        *,
        batch: int,
        heads: int,
        mask: np.ndarray | None = None,
    ) -> Var:
        """Fused scaled-dot-product multi-head attention.

        q, k, v are (batch*seqlen, d) with d divisible by `heads`. `mask`
        is an optional additive array broadcastable to (batch, heads,
        seqlen, seqlen); use MASK_FILL for disallowed pairs.
        """
        qv, kv, vv = self._val(q), self._val(k), self._val(v)
        if qv.shape != kv.shape or qv.shape != vv.shape or qv.ndim != 2:
            raise ShapeError(f"attention: q/k/v must share a 2-D shape, got {qv.shape}, {kv.shape}, {vv.shape}")
        rows, d = qv.shape
        if rows % batch != 0:
            raise ShapeError(f"attention: {rows} rows not divisible by batch {batch}")
        if d % heads != 0:
            raise ShapeError(f"attention: width {d} not divisible by {heads} heads")
        m = rows // batch
        hd = d // heads
        # (batch, heads, m, hd) layout so the contractions hit batched BLAS
        qh = qv.reshape(batch, m, heads, hd).transpose(0, 2, 1, 3)
        kh = kv.reshape(batch, m, heads, hd).transpose(0, 2, 1, 3)
        vh = vv.reshape(batch, m, heads, hd).transpose(0, 2, 1, 3)
        scores = (qh @ kh.transpose(0, 1, 3, 2)) / np.sqrt(hd)
        if mask is not None:
            scores = scores + mask
        weights = _row_softmax(scores)
        out = (weights @ vh).transpose(0, 2, 1, 3).reshape(rows, d)
        return self._push(
            "attention",
            (q.index, k.index, v.index),
            out,
            batch=batch,
            m=m,
            heads=heads,
            hd=hd,
            weights=weights,
        )

    def block_mean(self, a: Var, block: int) -> Var:
        x = self._val(a)
        if x.ndim != 2 or x.shape[0] % block != 0:
            raise ShapeError(f"block_mean: shape {x.shape} not divisible into blocks of {block}")
        b = x.shape[0] // block
        return self._push("block_mean", (a.index,), x.reshape(b, block, -1).mean(axis=1), block=block)

    def block_max(self, a: Var, block: int) -> Var:
        x = self._val(a)
        if x.ndim != 2 or x.shape[0] % block != 0:
            raise ShapeError(f"block_max: shape {x.shape} not divisible into blocks of {block}")
        b = x.shape[0] // block
        grouped = x.reshape(b, block, -1)
        arg = grouped.argmax(axis=1)
        out = np.take_along_axis(grouped, arg[:, None, :], axis=1)[:, 0, :]
        return self._push("block_max", (a.index,), out, block=block, arg=arg)

    def dropout(self, a: Var, rate: float) -> Var:
        """Inverted dropout; identity unless the graph is in training mode."""
        if not self.training or rate <= 0.0:
            return a
        if self._dropout_rng is None:
            raise GraphError("dropout requires a graph constructed with dropout_rng")
        x = self._val(a)
        keep = (self._dropout_rng.random(x.shape) >= rate) / (1.0 - rate)
        return self._push("dropout", (a.index,), x * keep, keep=keep)

    # ------------------------------------------------------------------ #
    # losses
    # ------------------------------------------------------------------ #

    def cross_entropy_rows(self, logits: Var, targets, weights=None) -> Var:
        """Sum over rows of weight * (-log softmax(logits)[target])."""
        x = self._val(logits)
        t = np.asarray(targets, dtype=np.intp)
        if x.ndim != 2 or x.shape[1] == 0:
            raise ShapeError(f"cross_entropy_rows: logits must be 2-D with classes, got {x.shape}")
        if t.shape != (x.shape[0],):
            raise ShapeError(f"cross_entropy_rows: {x.shape[0]} rows but {t.shape} targets")
        if t.size and (t.min() < 0 or t.max() >= x.shape[1]):
            raise ShapeError(f"cross_entropy_rows: target out of range for {x.shape[1]} classes")
        w = np.ones(x.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
        if w.shape != (x.shape[0],):
            raise ShapeError(f"cross_entropy_rows: {x.shape[0]} rows but {w.shape} weights")
        shifted = x - x.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1)) + x.max(axis=1)
        picked = x[np.arange(x.shape[0]), t]
        value = np.float64((w * (lse - picked)).sum())
        probs = _row_softmax(x)
        return self._push(
            "cross_entropy_rows", (logits.index,), np.asarray(value), t=t, w=w, probs=probs
        )

    def sum_squares(self, a: Var) -> Var:
        x = self._val(a)
        return self._push("sum_squares", (a.index,), np.asarray(np.float64((x * x).sum())))

    def mse(self, a: Var, b: Var) -> Var:
        av, bv = self._val(a), self._val(b)
        if av.shape != bv.shape:
            raise ShapeError(f"mse: shape mismatch {av.shape} vs {bv.shape}")
        diff = av - bv
        value = np.asarray(np.float64((diff * diff).mean()))
        return self._push("mse", (a.index, b.index), value, n=diff.size)

    # ------------------------------------------------------------------ #
    # reverse pass
    # ------------------------------------------------------------------ #

    def backward(self, loss: Var) -> dict[Tensor, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every requires_grad parameter."""
        if loss.graph is not self:
            raise GraphError("backward: loss belongs to a different graph")
        if loss.value.ndim != 0:
            raise GraphError(f"backward: loss must be scalar, got shape {loss.value.shape}")

        grads: list[np.ndarray | None] = [None] * len(self._nodes)
        grads[loss.index] = np.ones(())

        def acc(idx: int, g: np.ndarray) -> None:
            # no in-place mutation anywhere, so holding views is safe
            if grads[idx] is None:
                grads[idx] = g
            else:
                grads[idx] = grads[idx] + g

        for i in range(loss.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self._nodes[i]
            op = node.op
            if op == "leaf":
                continue
            ins = node.inputs
            if op == "matmul":
                a, b = self._nodes[ins[0]].value, self._nodes[ins[1]].value
                acc(ins[0], g @ b.T)
                acc(ins[1], a.T @ g)
            elif op == "add":
                a, b = self._nodes[ins[0]].value, self._nodes[ins[1]].value
                acc(ins[0], _sum_to(g, a.shape))
                acc(ins[1], _sum_to(g, b.shape))
            elif op == "mul":
                a, b = self._nodes[ins[0]].value, self._nodes[ins[1]].value
                acc(ins[0], _sum_to(g * b, a.shape))
                acc(ins[1], _sum_to(g * a, b.shape))
            elif op == "scale":
                acc(ins[0], g * node.ctx["c"])
            elif op == "sigmoid":
                s = node.value
                acc(ins[0], g * s * (1.0 - s))
            elif op == "gelu":
                x = self._nodes[ins[0]].value
                d = 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT2PI
                acc(ins[0], g * d)
            elif op == "clamp":
                x = self._nodes[ins[0]].value
                inside = (x >= node.ctx["lo"]) & (x <= node.ctx["hi"])
                acc(ins[0], g * inside)
            elif op == "softmax_rows":
                s = node.value
                dot = (g * s).sum(axis=-1, keepdims=True)
                acc(ins[0], s * (g - dot))
            elif op == "layer_norm_rows":
                xhat, inv = node.ctx["xhat"], node.ctx["inv"]
                gm = g.mean(axis=-1, keepdims=True)
                gx = (g * xhat).mean(axis=-1, keepdims=True)
                acc(ins[0], inv * (g - gm - xhat * gx))
            elif op == "gather_rows":
                idx = node.ctx["idx"]
                gx = np.zeros((node.ctx["rows"], node.value.shape[1]))
                np.add.at(gx, idx, g)
                acc(ins[0], gx)
            elif op == "concat_cols":
                split = node.ctx["split"]
                acc(ins[0], g[:, :split])
                acc(ins[1], g[:, split:])
            elif op == "vstack":
                split = node.ctx["split"]
                acc(ins[0], g[:split])
                acc(ins[1], g[split:])
            elif op == "slice_cols":
                gx = np.zeros((node.value.shape[0], node.ctx["width"]))
                gx[:, node.ctx["start"]:node.ctx["stop"]] = g
                acc(ins[0], gx)
            elif op == "attention":
                b, m, h, hd = node.ctx["batch"], node.ctx["m"], node.ctx["heads"], node.ctx["hd"]
                weights = node.ctx["weights"]
                scale = 1.0 / np.sqrt(hd)
                qh = self._nodes[ins[0]].value.reshape(b, m, h, hd).transpose(0, 2, 1, 3)
                kh = self._nodes[ins[1]].value.reshape(b, m, h, hd).transpose(0, 2, 1, 3)
                vh = self._nodes[ins[2]].value.reshape(b, m, h, hd).transpose(0, 2, 1, 3)
                go = g.reshape(b, m, h, hd).transpose(0, 2, 1, 3)
                gw = go @ vh.transpose(0, 1, 3, 2)
                gs = weights * (gw - (weights * gw).sum(axis=-1, keepdims=True))
                gq = (gs @ kh) * scale
                gk = (gs.transpose(0, 1, 3, 2) @ qh) * scale
                gv = weights.transpose(0, 1, 3, 2) @ go

                def _back(x):
                    return x.transpose(0, 2, 1, 3).reshape(b * m, h * hd)

                acc(ins[0], _back(gq))
                acc(ins[1], _back(gk))
                acc(ins[2], _back(gv))
            elif op == "block_mean":
                block = node.ctx["block"]
                acc(ins[0], np.repeat(g / block, block, axis=0))
            elif op == "block_max":
                block = node.ctx["block"]
                arg = node.ctx["arg"]
                bsz, d = node.value.shape
                gx = np.zeros((bsz, block, d))
                np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
                acc(ins[0], gx.reshape(bsz * block, d))
            elif op == "dropout":
                acc(ins[0], g * node.ctx["keep"])
            elif op == "cross_entropy_rows":
                probs, t, w = node.ctx["probs"], node.ctx["t"], node.ctx["w"]
                gl = probs.copy()
                gl[np.arange(gl.shape[0]), t] -= 1.0
                acc(ins[0], gl * (w * float(g))[:, None])
            elif op == "sum_squares":
                acc(ins[0], 2.0 * float(g) * self._nodes[ins[0]].value)
            elif op == "mse":
                a, bv2 = self._nodes[ins[0]].value, self._nodes[ins[1]].value
                coeff = 2.0 * float(g) / node.ctx["n"]
                acc(ins[0], coeff * (a - bv2))
                acc(ins[1], coeff * (bv2 - a))
            else:  # pragma: no cover - guards future op additions
                raise GraphError(f"backward: no rule for op {op!r}")

        out: dict[Tensor, np.ndarray] = {}
        for tensor in self._param_refs:
            if not tensor.requires_grad:
                continue
            g = grads[self._param_index[id(tensor)]]
            if g is not None:
                out[tensor] = np.asarray(g)
        return out

    def parameters(self) -> Iterator[Tensor]:
        return iter(self._param_refs)

    def __len__(self) -> int:
        return len(self._nodes)
