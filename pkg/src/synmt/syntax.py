"""Dependency trees, attentional adjacency matrices and supervision losses.

A tree over m tokens is stored as 1-based parent indices with 0 marking
the root.  Two supervision targets are derived from it: a row-stochastic
child matrix (each word spreads weight 1/n over its n children, leaves
self-align) and a one-hot parent matrix (each word points at its parent,
the root self-aligns).
"""

from dataclasses import dataclass

import numpy as np

from .tensor import cross_entropy_rows


class TreeError(ValueError):
    """Raised for structures that are not single-rooted trees."""


@dataclass
class DependencyTree:
    tokens: list
    heads: list  # 1-based parent index per token, 0 for root

    def __post_init__(self):
        validate_heads(self.heads)
        if len(self.tokens) != len(self.heads):
            raise TreeError(
                f"{len(self.tokens)} tokens but {len(self.heads)} heads")

    def __len__(self):
        return len(self.tokens)


def validate_heads(heads):
    """Check 1-based heads encode a single-rooted connected acyclic tree."""
    m = len(heads)
    if m == 0:
        raise TreeError("empty tree")
    roots = [i for i, h in enumerate(heads) if h == 0]
    if len(roots) == 0:
        raise TreeError("no root")
    if len(roots) > 1:
        raise TreeError("multiple roots")
    for i, h in enumerate(heads):
        if not (0 <= h <= m):
            raise TreeError(f"head {h} out of range at token {i + 1}")
        if h == i + 1:
            raise TreeError(f"self-loop at token {i + 1}")
    # every token must reach the root
    for i in range(m):
        j, steps = i, 0
        while heads[j] != 0:
            j = heads[j] - 1
            steps += 1
            if steps > m:
                raise TreeError(f"cycle involving token {i + 1}")


@dataclass
class AdjacencyMatrices:
    w_child: np.ndarray
    w_parent: np.ndarray


def build_child_matrix(tree):
    """Row-stochastic child matrix: 1/n_i over children, leaves self-align.

    A root with no children counts as a leaf and self-aligns.
    """
    m = len(tree)
    w = np.zeros((m, m))
    children = [[] for _ in range(m)]
    for i, h in enumerate(tree.heads):
        if h != 0:
            children[h - 1].append(i)
    for i in range(m):
        if children[i]:
            w[i, children[i]] = 1.0 / len(children[i])
        else:
            w[i, i] = 1.0
    return w


def build_parent_matrix(tree):
    """One-hot parent matrix; the root row self-aligns."""
    m = len(tree)
    w = np.zeros((m, m))
    for i, h in enumerate(tree.heads):
        w[i, h - 1 if h != 0 else i] = 1.0
    return w


def build_matrices(tree):
    return AdjacencyMatrices(build_child_matrix(tree), build_parent_matrix(tree))


def bpe_adjust_heads(tree, piece_counts, pieces=None):
    """Project a word-level tree onto subword pieces.

    Every non-first piece of a word attaches to that word's first piece;
    the first piece inherits the word's arc, remapped to the first piece
    of the head word.  ``piece_counts`` gives the number of pieces per
    word; ``pieces`` optionally supplies the piece strings (defaults to
    "tok#k" suffixing).
    """
    if len(piece_counts) != len(tree):
        raise TreeError(
            f"{len(piece_counts)} piece counts for {len(tree)} tokens")
    if any(c < 1 for c in piece_counts):
        raise TreeError("piece counts must be >= 1")
    first = []  # 1-based index of each word's first piece
    pos = 1
    for c in piece_counts:
        first.append(pos)
        pos += c
    total = pos - 1
    if pieces is not None and len(pieces) != total:
        raise TreeError(f"{len(pieces)} pieces but counts sum to {total}")
    heads = [0] * total
    toks = [None] * total
    for w, c in enumerate(piece_counts):
        f = first[w]
        heads[f - 1] = first[tree.heads[w] - 1] if tree.heads[w] != 0 else 0
        for k in range(c):
            idx = f - 1 + k
            if k > 0:
                heads[idx] = f
            if pieces is None:
                toks[idx] = tree.tokens[w] if c == 1 else f"{tree.tokens[w]}#{k}"
            else:
                toks[idx] = pieces[idx]
    return DependencyTree(toks, heads)


@dataclass
class LossBreakdown:
    """Per-batch loss components: translation, child/parent supervision
    and their weighted sum."""
    translation: float
    child: float
    parent: float
    joint: float


def supervision_losses(w_child, w_parent, p_child, p_parent, row_mask):
    """Cross-entropies between supervision targets and supervised-head
    attention probabilities, averaged per real token.

    All matrices are (batch, m, m) with zero-padded rows; ``row_mask``
    (batch, m) marks real tokens.  Returns (L_c, L_p) scalar tensors.
    """
    rm = np.asarray(row_mask, dtype=bool)
    ntok = int(rm.sum())
    lc = cross_entropy_rows(w_child, p_child, rm) * (1.0 / ntok)
    lp = cross_entropy_rows(w_parent, p_parent, rm) * (1.0 / ntok)
    return lc, lp


def joint_loss(translation, l_c, l_p, sup):
    """J = L + alpha * L_c + beta * L_p.

    With alpha == beta == 0 the returned tensor *is* the translation
    loss, so the supervised and unsupervised builds are bit-identical.
    """
    for t in (translation, l_c, l_p):
        if not np.isfinite(t.data):
            raise ValueError("non-finite loss component")
    j = translation
    if sup.alpha != 0.0:
        j = j + sup.alpha * l_c
    if sup.beta != 0.0:
        j = j + sup.beta * l_p
    return j
