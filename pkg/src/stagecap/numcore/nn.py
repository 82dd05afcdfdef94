"""Layers and parameter initialization shared by all learned models."""

from __future__ import annotations

import numpy as np

from .tensor import Graph, Tensor, Var


class ParamBag:
    """Creates and tracks named parameter tensors for one model.

    Initialization: weight matrices uniform(-s, s) with
    s = sqrt(6 / (fan_in + fan_out)); embedding tables normal(0, 0.02);
    biases zero, norm gains one. All draws come from one seeded PCG64
    stream, so construction order fixes the initialization bitwise.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._rng = np.random.Generator(np.random.PCG64(self.seed))
        self._tensors: dict[str, Tensor] = {}

    def _register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._tensors[name] = t
        return t

    def matrix(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        s = np.sqrt(6.0 / (fan_in + fan_out))
        return self._register(name, self._rng.uniform(-s, s, size=(fan_in, fan_out)))

    def embedding(self, name: str, rows: int, dim: int) -> Tensor:
        return self._register(name, self._rng.normal(0.0, 0.02, size=(rows, dim)))

    def zeros(self, name: str, shape) -> Tensor:
        return self._register(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self._register(name, np.ones(shape))

    def tensors(self) -> dict[str, Tensor]:
        return dict(self._tensors)

    def parameters(self) -> list[Tensor]:
        return list(self._tensors.values())

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameter data from a name -> array mapping."""
        missing = set(self._tensors) - set(arrays)
        extra = set(arrays) - set(self._tensors)
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, tensor in self._tensors.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != tensor.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {tensor.shape}")
            tensor.data = np.ascontiguousarray(arr)


class Linear:
    def __init__(self, bag: ParamBag, name: str, d_in: int, d_out: int, bias: bool = True):
        self.w = bag.matrix(f"{name}.w", d_in, d_out)
        self.b = bag.zeros(f"{name}.b", (d_out,)) if bias else None

    def __call__(self, g: Graph, x: Var) -> Var:
        out = g.matmul(x, g.param(self.w))
        if self.b is not None:
            out = g.add(out, g.param(self.b))
        return out


class LayerNorm:
    def __init__(self, bag: ParamBag, name: str, dim: int):
        self.gain = bag.ones(f"{name}.gain", (dim,))
        self.bias = bag.zeros(f"{name}.bias", (dim,))

    def __call__(self, g: Graph, x: Var) -> Var:
        return g.add(g.mul(g.layer_norm_rows(x), g.param(self.gain)), g.param(self.bias))


class SelfAttention:
    """Multi-head self-attention with a fused, bias-free QKV projection.

    No QKV bias: a key-side bias shifts every score in a row by the same
    amount, which softmax ignores, leaving a parameter with an exactly
    zero gradient.
    """

    def __init__(self, bag: ParamBag, name: str, dim: int, heads: int):
        if dim % heads != 0:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.wqkv = bag.matrix(f"{name}.wqkv", dim, 3 * dim)
        self.out = Linear(bag, f"{name}.out", dim, dim)

    def __call__(self, g: Graph, x: Var, *, batch: int, mask: np.ndarray | None = None) -> Var:
        qkv = g.matmul(x, g.param(self.wqkv))
        q = g.slice_cols(qkv, 0, self.dim)
        k = g.slice_cols(qkv, self.dim, 2 * self.dim)
        v = g.slice_cols(qkv, 2 * self.dim, 3 * self.dim)
        attended = g.attention(q, k, v, batch=batch, heads=self.heads, mask=mask)
        return self.out(g, attended)


class FeedForward:
    def __init__(self, bag: ParamBag, name: str, dim: int, hidden: int):
        self.fc1 = Linear(bag, f"{name}.fc1", dim, hidden)
        self.fc2 = Linear(bag, f"{name}.fc2", hidden, dim)

    def __call__(self, g: Graph, x: Var) -> Var:
        return self.fc2(g, g.gelu(self.fc1(g, x)))


class TransformerBlock:
    """Pre-norm block: x + drop(attn(ln(x))), then x + drop(ffn(ln(x)))."""

    def __init__(self, bag: ParamBag, name: str, dim: int, heads: int, hidden: int, dropout: float = 0.0):
        self.ln1 = LayerNorm(bag, f"{name}.ln1", dim)
        self.attn = SelfAttention(bag, f"{name}.attn", dim, heads)
        self.ln2 = LayerNorm(bag, f"{name}.ln2", dim)
        self.ffn = FeedForward(bag, f"{name}.ffn", dim, hidden)
        self.dropout = dropout

    def __call__(self, g: Graph, x: Var, *, batch: int, mask: np.ndarray | None = None) -> Var:
        a = self.attn(g, self.ln1(g, x), batch=batch, mask=mask)
        x = g.add(x, g.dropout(a, self.dropout))
        f = self.ffn(g, self.ln2(g, x))
        return g.add(x, g.dropout(f, self.dropout))
