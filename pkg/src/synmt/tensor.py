"""Dense tensors with reverse-mode automatic differentiation.

Small tape-based autodiff over numpy arrays, covering exactly the
operations the Transformer forward/backward pass needs: batched matmul,
elementwise arithmetic, ReLU, masked row softmax, layer norm, embedding
lookup, dropout and the two cross-entropy losses.  No GPU, no fusion,
no broadcasting beyond what attention and the FFN require.

Dtype convention: parameters are created as float64 (verification mode)
or float32 (training mode) and every derived tensor inherits the dtype
of its inputs.
"""

import numpy as np

EPS_PROB = 1e-9  # clamp inside log; attention entries can underflow to 0


class Tensor:
    """A dense n-d array plus an optional backpointer into the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(
            data, np.ndarray) else data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.grad is not None})"

    # ------------------------------------------------------------------
    # graph plumbing

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Populate .grad on every reachable tensor that requires grad.

        Deterministic: the tape is walked in a fixed topological order,
        so two runs on identical inputs give bit-identical gradients.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ------------------------------------------------------------------
    # arithmetic

    def __add__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other
            if a.data.shape == b.data.shape:
                out = Tensor(a.data + b.data, _parents=(a, b))

                def bwd(g):
                    a._accum(g)
                    b._accum(g)
            elif b.data.ndim == 1 and a.data.shape[-1] == b.data.shape[0]:
                # bias broadcast over leading dims
                out = Tensor(a.data + b.data, _parents=(a, b))

                def bwd(g):
                    a._accum(g)
                    b._accum(g.reshape(-1, g.shape[-1]).sum(axis=0))
            else:
                raise ValueError(
                    f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
            out._backward = bwd
            return out
        # numpy constant or python scalar: no grad on the constant side
        out = Tensor(self.data + other, _parents=(self,))
        out._backward = lambda g: self._accum(g)
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, _parents=(self,))
        out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other
            if a.data.shape != b.data.shape:
                raise ValueError(
                    f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
            out = Tensor(a.data * b.data, _parents=(a, b))

            def bwd(g):
                a._accum(g * b.data)
                b._accum(g * a.data)
            out._backward = bwd
            return out
        # scalar or constant ndarray (e.g. dropout mask)
        out = Tensor(self.data * other, _parents=(self,))
        out._backward = lambda g: self._accum(g * other)
        return out

    __rmul__ = __mul__

    def matmul(self, other):
        """self @ other.

        Supported: equal-rank batched matmul (identical batch dims), or a
        rank-2 weight on the right applied to any rank >= 2 input.
        """
        a, b = self, other
        A, B = a.data, b.data
        if A.shape[-1] != B.shape[-2]:
            raise ValueError(
                f"matmul inner-dim mismatch: {A.shape} @ {B.shape}")
        if B.ndim == 2:
            out = Tensor(A @ B, _parents=(a, b))

            def bwd(g):
                a._accum(g @ B.T)
                b._accum(A.reshape(-1, A.shape[-1]).T
                         @ g.reshape(-1, g.shape[-1]))
        elif A.ndim == B.ndim and A.shape[:-2] == B.shape[:-2]:
            out = Tensor(A @ B, _parents=(a, b))

            def bwd(g):
                a._accum(g @ B.swapaxes(-1, -2))
                b._accum(A.swapaxes(-1, -2) @ g)
        else:
            raise ValueError(f"unsupported matmul: {A.shape} @ {B.shape}")
        out._backward = bwd
        return out

    __matmul__ = matmul

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), _parents=(self,))
        out._backward = lambda g: self._accum(g * (self.data > 0))
        return out

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), _parents=(self,))
        out._backward = lambda g: self._accum(g.reshape(self.data.shape))
        return out

    def transpose(self, *axes):
        inv = np.argsort(axes)
        out = Tensor(self.data.transpose(*axes), _parents=(self,))
        out._backward = lambda g: self._accum(g.transpose(*inv))
        return out

    def sum(self):
        out = Tensor(np.asarray(self.data.sum()), _parents=(self,))
        out._backward = lambda g: self._accum(
            np.broadcast_to(g, self.data.shape).astype(self.data.dtype))
        return out


class Parameter(Tensor):
    """A trainable tensor with a unique name path within a model."""

    __slots__ = ("name",)

    def __init__(self, name, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


# ----------------------------------------------------------------------
# composite ops


def softmax_rows(x, mask=None):
    """Row softmax over the last axis, numerically stable, masked.

    ``mask`` is a boolean array broadcastable to x.shape; True marks
    positions that may receive probability.  Masked positions come out
    exactly 0.  A fully masked row is an error.
    """
    data = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
        if not mask.any(axis=-1).all():
            raise ValueError("degenerate attention row: fully masked")
        neg = np.where(mask, data, -np.inf)
    else:
        neg = data
    m = neg.max(axis=-1, keepdims=True)
    e = np.exp(neg - m)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p, _parents=(x,))

    def bwd(g):
        # dL/dx = p * (g - sum_j g_j p_j); masked entries have p == 0
        dot = (g * p).sum(axis=-1, keepdims=True)
        x._accum(p * (g - dot))
    out._backward = bwd
    return out


def cross_entropy_rows(target, pred, row_mask=None):
    """-sum over unmasked rows of target * log(pred), as a scalar tensor.

    ``target`` is a constant row-stochastic array, ``pred`` a tensor of
    the same shape.  ``row_mask`` (boolean, shape = pred.shape[:-1])
    zeroes out padding rows.  pred is clamped below at EPS_PROB inside
    the log.
    """
    t = np.asarray(target)
    p = pred.data
    if t.shape != p.shape:
        raise ValueError(f"shape mismatch: target {t.shape} vs pred {p.shape}")
    pc = np.maximum(p, EPS_PROB)
    per = -(t * np.log(pc)).sum(axis=-1)
    if row_mask is not None:
        rm = np.asarray(row_mask, dtype=bool)
        if rm.shape != per.shape:
            raise ValueError(
                f"row_mask shape {rm.shape} does not match rows {per.shape}")
        per = np.where(rm, per, 0.0)
    out = Tensor(np.asarray(per.sum()), _parents=(pred,))

    def bwd(g):
        dp = np.where(t > 0, -t / pc, 0.0)
        if row_mask is not None:
            dp = dp * rm[..., None]
        pred._accum(g * dp)
    out._backward = bwd
    return out


def token_nll(logits, targets, mask):
    """Per-token average negative log-likelihood under teacher forcing.

    logits: (batch, n, vocab) tensor; targets: (batch, n) int array;
    mask: (batch, n) boolean, True for real (loss-bearing) tokens.
    """
    z = logits.data
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    m = z.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(z - m).sum(axis=-1))
    picked = np.take_along_axis(z, targets[..., None], axis=-1)[..., 0]
    ntok = int(mask.sum())
    if ntok == 0:
        raise ValueError("token_nll: empty mask")
    loss = ((lse - picked) * mask).sum() / ntok
    out = Tensor(np.asarray(loss), _parents=(logits,))

    def bwd(g):
        p = np.exp(z - m)
        p /= p.sum(axis=-1, keepdims=True)
        np.put_along_axis(p, targets[..., None], np.take_along_axis(
            p, targets[..., None], axis=-1) - 1.0, axis=-1)
        logits._accum(g * p * mask[..., None] / ntok)
    out._backward = bwd
    return out


def layer_norm(x, gain, bias, eps=1e-6):
    """Layer normalization over the last axis with learned gain/bias."""
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data, _parents=(x, gain, bias))

    def bwd(g):
        n = d.shape[-1]
        dxhat = g * gain.data
        gain._accum((g * xhat).reshape(-1, n).sum(axis=0))
        bias._accum(g.reshape(-1, n).sum(axis=0))
        mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
        x._accum(inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat))
    out._backward = bwd
    return out


def embedding(weight, ids):
    """Row gather: weight (vocab, d), ids int array -> (*ids.shape, d)."""
    ids = np.asarray(ids)
    if ids.min() < 0 or ids.max() >= weight.data.shape[0]:
        raise ValueError("embedding id out of range")
    out = Tensor(weight.data[ids], _parents=(weight,))

    def bwd(g):
        if weight.grad is None:
            weight.grad = np.zeros_like(weight.data)
        np.add.at(weight.grad, ids.reshape(-1),
                  g.reshape(-1, weight.data.shape[-1]))
    out._backward = bwd
    return out


def slice_axis1(x, i):
    """out = x[:, i], kept on the tape (used to pick one attention head)."""
    out = Tensor(x.data[:, i], _parents=(x,))

    def bwd(g):
        full = np.zeros_like(x.data)
        full[:, i] = g
        x._accum(full)
    out._backward = bwd
    return out


def dropout(x, rate, rng):
    """Inverted dropout; call only on the training path."""
    if rate <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return x * keep.astype(x.data.dtype)
