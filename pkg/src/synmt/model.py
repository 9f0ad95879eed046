"""Transformer encoder-decoder with supervisable encoder attention heads.

The encoder keeps every layer's per-head attention probability matrices
on the autodiff tape, so a designated pair of heads (child-supervised
and parent-supervised) can receive cross-entropy supervision from
dependency adjacency matrices while all other heads train unsupervised.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .syntax import LossBreakdown, joint_loss, supervision_losses
from .tensor import (Parameter, dropout, embedding, layer_norm, slice_axis1,
                     softmax_rows, token_nll)


@dataclass
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    src_vocab: int = 0
    tgt_vocab: int = 0
    max_len: int = 256
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def d_k(self):
        return self.d_model // self.n_heads

    @property
    def d_v(self):
        return self.d_model // self.n_heads


@dataclass
class SupervisionConfig:
    alpha: float = 0.4
    beta: float = 0.4
    layer: int = 0        # 1-based; 0 means top layer
    csh_head: int = 0
    psh_head: int = 1
    enabled: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.csh_head == self.psh_head:
            raise ValueError("csh_head and psh_head must differ")

    def resolve_layer(self, n_layers):
        return self.layer if self.layer > 0 else n_layers


@dataclass
class EncoderOutput:
    hidden: object                      # Tensor (batch, m, d_model)
    head_probs: list = field(default_factory=list)  # per layer: (batch, h, m, m)


def sinusoidal_encoding(max_len, d_model, dtype):
    pe = np.zeros((max_len, d_model))
    pos = np.arange(max_len)[:, None]
    div = np.exp(np.arange(0, d_model, 2) * (-math.log(10000.0) / d_model))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div)
    return pe.astype(dtype)


class Transformer:
    """Parameter container plus forward passes.

    Inference with frozen parameters is safe to run concurrently;
    graph construction and backward for one loss is single-threaded.
    """

    def __init__(self, config, seed=0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = {}
        rng = np.random.default_rng(seed)
        c = config
        self._xavier(rng, "src_embed", (c.src_vocab, c.d_model))
        self._xavier(rng, "tgt_embed", (c.tgt_vocab, c.d_model))
        for side, n in (("enc", c.n_layers), ("dec", c.n_layers)):
            for l in range(n):
                p = f"{side}.layer{l}"
                for name in ("wq", "wk", "wv", "wo"):
                    self._xavier(rng, f"{p}.self.{name}", (c.d_model, c.d_model))
                if side == "dec":
                    for name in ("wq", "wk", "wv", "wo"):
                        self._xavier(rng, f"{p}.cross.{name}",
                                     (c.d_model, c.d_model))
                self._xavier(rng, f"{p}.ffn.w1", (c.d_model, c.d_ff))
                self._zeros(f"{p}.ffn.b1", (c.d_ff,))
                self._xavier(rng, f"{p}.ffn.w2", (c.d_ff, c.d_model))
                self._zeros(f"{p}.ffn.b2", (c.d_model,))
                n_ln = 3 if side == "dec" else 2
                for k in range(1, n_ln + 1):
                    self._ones(f"{p}.ln{k}.g", (c.d_model,))
                    self._zeros(f"{p}.ln{k}.b", (c.d_model,))
        self._xavier(rng, "out.w", (c.d_model, c.tgt_vocab))
        self._zeros("out.b", (c.tgt_vocab,))
        self.pos_enc = sinusoidal_encoding(c.max_len, c.d_model, self.dtype)

    # ------------------------------------------------------------------

    def _add(self, name, data):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name}")
        self.params[name] = Parameter(name, data.astype(self.dtype))

    def _xavier(self, rng, name, shape):
        limit = math.sqrt(6.0 / (shape[0] + shape[1]))
        self._add(name, rng.uniform(-limit, limit, size=shape))

    def _zeros(self, name, shape):
        self._add(name, np.zeros(shape))

    def _ones(self, name, shape):
        self._add(name, np.ones(shape))

    def parameters(self):
        return self.params

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    # ------------------------------------------------------------------
    # attention

    def multi_head_attention(self, q_in, k_in, v_in, mask, prefix):
        """Returns (output, probs) where probs is (batch, h, m_q, m_k),
        still attached to the tape so supervision backpropagates."""
        c = self.config
        if q_in.shape[-1] != c.d_model:
            raise ValueError(
                f"attention input last dim {q_in.shape[-1]} != {c.d_model}")
        B, mq = q_in.shape[0], q_in.shape[1]
        mk = k_in.shape[1]
        P = self.params

        def split(x, w, m):
            return (x @ P[f"{prefix}.{w}"]).reshape(B, m, c.n_heads, c.d_k) \
                .transpose(0, 2, 1, 3)
        q = split(q_in, "wq", mq)
        k = split(k_in, "wk", mk)
        v = split(v_in, "wv", mk)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(c.d_k))
        probs = softmax_rows(scores, mask)
        ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(B, mq, c.d_model)
        return ctx @ P[f"{prefix}.wo"], probs

    def _ffn(self, x, prefix):
        P = self.params
        h = (x @ P[f"{prefix}.w1"] + P[f"{prefix}.b1"]).relu()
        return h @ P[f"{prefix}.w2"] + P[f"{prefix}.b2"]

    def _ln(self, x, prefix):
        return layer_norm(x, self.params[f"{prefix}.g"],
                          self.params[f"{prefix}.b"])

    def _drop(self, x, train, rng):
        if train and self.config.dropout_rate > 0.0:
            return dropout(x, self.config.dropout_rate, rng)
        return x

    def _embed(self, table, ids):
        ids = np.asarray(ids)
        if ids.shape[1] > self.config.max_len:
            raise ValueError(
                f"sequence length {ids.shape[1]} exceeds max_len")
        x = embedding(self.params[table], ids) * math.sqrt(self.config.d_model)
        return x + self.pos_enc[:ids.shape[1]]

    # ------------------------------------------------------------------

    def encoder_forward(self, src_ids, src_mask=None, train=False, rng=None):
        """src_ids (batch, m) ints; src_mask (batch, m) bool, True = real."""
        src_ids = np.asarray(src_ids)
        B, m = src_ids.shape
        if src_mask is None:
            src_mask = np.ones((B, m), dtype=bool)
        attn_mask = np.asarray(src_mask, dtype=bool)[:, None, None, :]
        x = self._drop(self._embed("src_embed", src_ids), train, rng)
        head_probs = []
        for l in range(self.config.n_layers):
            p = f"enc.layer{l}"
            a, probs = self.multi_head_attention(x, x, x, attn_mask,
                                                 f"{p}.self")
            head_probs.append(probs)
            x = self._ln(x + self._drop(a, train, rng), f"{p}.ln1")
            x = self._ln(x + self._drop(self._ffn(x, f"{p}.ffn"), train, rng),
                         f"{p}.ln2")
        return EncoderOutput(hidden=x, head_probs=head_probs)

    def decoder_forward(self, tgt_ids, encoder_hidden, src_mask=None,
                        tgt_mask=None, train=False, rng=None):
        """Teacher-forced decoder; returns logits (batch, n, tgt_vocab)."""
        tgt_ids = np.asarray(tgt_ids)
        B, n = tgt_ids.shape
        m = encoder_hidden.shape[1]
        causal = np.tril(np.ones((n, n), dtype=bool))
        if tgt_mask is not None:
            self_mask = causal[None, None] & np.asarray(
                tgt_mask, dtype=bool)[:, None, None, :]
        else:
            self_mask = causal[None, None]
        if src_mask is not None:
            cross_mask = np.asarray(src_mask, dtype=bool)[:, None, None, :]
        else:
            cross_mask = np.ones((1, 1, 1, m), dtype=bool)
        x = self._drop(self._embed("tgt_embed", tgt_ids), train, rng)
        for l in range(self.config.n_layers):
            p = f"dec.layer{l}"
            a, _ = self.multi_head_attention(x, x, x, self_mask, f"{p}.self")
            x = self._ln(x + self._drop(a, train, rng), f"{p}.ln1")
            a, _ = self.multi_head_attention(x, encoder_hidden,
                                             encoder_hidden, cross_mask,
                                             f"{p}.cross")
            x = self._ln(x + self._drop(a, train, rng), f"{p}.ln2")
            x = self._ln(x + self._drop(self._ffn(x, f"{p}.ffn"), train, rng),
                         f"{p}.ln3")
        return x @ self.params["out.w"] + self.params["out.b"]

    # ------------------------------------------------------------------

    def loss_on_batch(self, batch, sup, train=False, rng=None):
        """Forward pass over one batch; returns (LossBreakdown, joint Tensor).

        With supervision disabled (or alpha = beta = 0) the joint tensor
        is exactly the translation-loss tensor.
        """
        enc = self.encoder_forward(batch.src_ids, batch.src_mask,
                                   train=train, rng=rng)
        logits = self.decoder_forward(batch.tgt_in_ids, enc.hidden,
                                      batch.src_mask, batch.tgt_mask,
                                      train=train, rng=rng)
        trans = token_nll(logits, batch.tgt_out_ids, batch.tgt_mask)
        if sup is not None and sup.enabled:
            layer = sup.resolve_layer(self.config.n_layers) - 1
            probs = enc.head_probs[layer]
            p_child = _select_head(probs, sup.csh_head)
            p_parent = _select_head(probs, sup.psh_head)
            lc, lp = supervision_losses(batch.w_child, batch.w_parent,
                                        p_child, p_parent, batch.row_mask)
            j = joint_loss(trans, lc, lp, sup)
            bd = LossBreakdown(trans.item(), lc.item(), lp.item(), j.item())
        else:
            j = trans
            bd = LossBreakdown(trans.item(), 0.0, 0.0, j.item())
        return bd, j

    def greedy_decode(self, src_ids, max_steps, bos, eos, src_mask=None):
        """Argmax decoding for a batch; returns (list of id lists without
        bos/eos, EncoderOutput with the attention matrices)."""
        src_ids = np.asarray(src_ids)
        B = src_ids.shape[0]
        enc = self.encoder_forward(src_ids, src_mask)
        out = np.full((B, 1), bos, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        for _ in range(max_steps):
            logits = self.decoder_forward(out, enc.hidden, src_mask)
            nxt = np.argmax(logits.data[:, -1, :], axis=-1)
            nxt = np.where(done, eos, nxt)
            out = np.concatenate([out, nxt[:, None]], axis=1)
            done |= nxt == eos
            if done.all():
                break
        seqs = []
        for b in range(B):
            ids = []
            for t in out[b, 1:]:
                if t == eos:
                    break
                ids.append(int(t))
            seqs.append(ids)
        return seqs, enc


def _select_head(probs, head):
    """Slice head i out of a (batch, h, m, m) prob tensor, kept on tape."""
    return slice_axis1(probs, head)
