"""Tree recovery from parent-head attention matrices.

Each row of the score matrix is one token's attention distribution over
the sentence; the diagonal carries root affinity (a root token attends
to itself).  Greedy row-argmax may produce cycles or multiple roots, so
the repaired decode runs Chu-Liu/Edmonds over log scores with a virtual
root, constrained to a single root attachment.
"""

import numpy as np

from .syntax import validate_heads

EPS_SCORE = 1e-9  # smoothing under the log so zero scores stay finite


def predict_parents(scores):
    """Greedy heads: argmax of each row, self-argmax read as root (0).

    Ties break toward the lower index.  The result may violate tree
    constraints; use chu_liu_edmonds for a guaranteed tree.
    """
    scores = np.asarray(scores)
    heads = []
    for i in range(scores.shape[0]):
        j = int(np.argmax(scores[i]))
        heads.append(0 if j == i else j + 1)
    return heads


def is_valid_tree(heads):
    try:
        validate_heads(heads)
        return True
    except ValueError:
        return False


def decode_heads(scores):
    """Greedy argmax heads, repaired by Chu-Liu/Edmonds when not a tree."""
    heads = predict_parents(scores)
    if is_valid_tree(heads):
        return heads
    return chu_liu_edmonds(scores)


def chu_liu_edmonds(scores):
    """Maximum-weight spanning arborescence over log(score + eps).

    Edge weight parent j -> child i is log(scores[i][j] + eps); the
    virtual root's edge to token i weighs log(scores[i][i] + eps).
    Exactly one token is attached to the root: the best single-root
    arborescence over all root choices is returned (1-based heads,
    0 for the root token).
    """
    scores = np.asarray(scores, dtype=np.float64)
    m = scores.shape[0]
    if m == 1:
        return [0]
    logw = np.log(scores + EPS_SCORE)
    # W[p][c]: weight of edge p -> c over nodes 0 (virtual root), 1..m
    W = np.full((m + 1, m + 1), -np.inf)
    for i in range(m):
        for j in range(m):
            if j != i:
                W[j + 1, i + 1] = logw[i, j]
    best = None
    for r in range(1, m + 1):
        Wr = W.copy()
        Wr[0, r] = logw[r - 1, r - 1]
        parent = _max_arborescence(Wr)
        total = sum(Wr[parent[c], c] for c in range(1, m + 1))
        if best is None or total > best[0] + 1e-12:
            best = (total, parent)
    heads = [0 if best[1][c] == 0 else best[1][c] for c in range(1, m + 1)]
    validate_heads(heads)
    return heads


def _max_arborescence(W):
    """Recursive Chu-Liu/Edmonds on dense weights W[p][c], root node 0.

    Returns parent[c] for every node; parent[0] is unused.
    """
    n = W.shape[0]
    parent = [0] * n
    for c in range(1, n):
        parent[c] = int(np.argmax(W[:, c]))
    cycle = _find_cycle(parent, n)
    if cycle is None:
        return parent
    cyc = set(cycle)
    old2new = {}
    new2old = []
    for v in range(n):
        if v not in cyc:
            old2new[v] = len(new2old)
            new2old.append(v)
    vc = len(new2old)  # contracted cycle node
    W2 = np.full((vc + 1, vc + 1), -np.inf)
    enter_edge = {}  # new parent -> (orig parent, orig child) breaking the cycle
    leave_edge = {}  # new child -> orig parent inside the cycle
    for p in range(n):
        for c in range(n):
            if p == c or not np.isfinite(W[p, c]):
                continue
            if p not in cyc and c in cyc:
                w = W[p, c] - W[parent[c], c]
                if w > W2[old2new[p], vc]:
                    W2[old2new[p], vc] = w
                    enter_edge[old2new[p]] = (p, c)
            elif p in cyc and c not in cyc:
                if W[p, c] > W2[vc, old2new[c]]:
                    W2[vc, old2new[c]] = W[p, c]
                    leave_edge[old2new[c]] = p
            elif p not in cyc and c not in cyc:
                W2[old2new[p], old2new[c]] = W[p, c]
    sub = _max_arborescence(W2)
    out = [0] * n
    for c in range(1, n):
        if c in cyc:
            out[c] = parent[c]
        else:
            pn = sub[old2new[c]]
            out[c] = leave_edge[old2new[c]] if pn == vc else new2old[pn]
    enter_p, enter_c = enter_edge[sub[vc]]
    out[enter_c] = enter_p
    return out


def _find_cycle(parent, n):
    color = [0] * n  # 0 new, 1 on current path, 2 finished
    color[0] = 2
    for s in range(1, n):
        if color[s]:
            continue
        path = []
        v = s
        while color[v] == 0:
            color[v] = 1
            path.append(v)
            v = parent[v]
        if color[v] == 1:
            return path[path.index(v):]
        for u in path:
            color[u] = 2
    return None


def uas(predicted, gold):
    """Fraction of tokens whose predicted head matches the gold head."""
    if len(predicted) != len(gold):
        raise ValueError(
            f"length mismatch: {len(predicted)} vs {len(gold)}")
    return sum(p == g for p, g in zip(predicted, gold)) / len(gold)
