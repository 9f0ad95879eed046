"""Corpus ingestion: CoNLL-U trees, vocabularies and padded batches.

A parallel corpus is three aligned files: source text, target text (one
whitespace-tokenized sentence per line) and a CoNLL-U file with the
source dependency trees in the same sentence order.  Subword-segmented
source text marks non-final pieces with an "@@" suffix; the word-level
trees are projected onto pieces on load.
"""

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .syntax import (DependencyTree, TreeError, bpe_adjust_heads,
                     build_child_matrix, build_parent_matrix, validate_heads)

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


class ConlluError(DataError):
    pass


# ----------------------------------------------------------------------
# CoNLL-U


def parse_conllu(source):
    """Parse CoNLL-U text into DependencyTree objects.

    ``source`` is a string or an iterable of lines.  Columns used: ID,
    FORM, HEAD.  Comments, multiword ranges ("3-4") and empty nodes
    ("3.1") are skipped; a blank line ends a sentence.
    """
    if isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = [ln.rstrip("\n") for ln in source]
    trees = []
    tokens, heads = [], []
    start_line = 1

    def flush(lineno):
        nonlocal tokens, heads
        if not tokens:
            return
        try:
            validate_heads(heads)
        except TreeError as e:
            raise ConlluError(
                f"line {lineno}: invalid tree ({e})") from e
        trees.append(DependencyTree(tokens, heads))
        tokens, heads = [], []

    for n, line in enumerate(lines, 1):
        if not tokens:
            start_line = n
        stripped = line.strip()
        if not stripped:
            flush(start_line)
            continue
        if stripped.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) < 8:
            cols = stripped.split()
        if len(cols) < 8:
            raise ConlluError(f"line {n}: expected 10 columns")
        tok_id = cols[0]
        if "-" in tok_id or "." in tok_id:
            continue  # multiword range or empty node
        try:
            idx = int(tok_id)
            head = int(cols[6])
        except ValueError as e:
            raise ConlluError(f"line {n}: non-integer ID or HEAD") from e
        if idx != len(tokens) + 1:
            raise ConlluError(f"line {n}: non-consecutive token ID {idx}")
        tokens.append(cols[1])
        heads.append(head)
    flush(start_line)
    return trees


def emit_conllu(trees):
    """Serialize trees to CoNLL-U; FORM and HEAD populated, the rest '_'."""
    out = []
    for t in trees:
        for i, (tok, head) in enumerate(zip(t.tokens, t.heads), 1):
            out.append(f"{i}\t{tok}\t_\t_\t_\t_\t{head}\t_\t_\t_")
        out.append("")
    return "\n".join(out) + "\n" if out else ""


# ----------------------------------------------------------------------
# vocabulary


class Vocabulary:
    PAD, UNK, BOS, EOS = 0, 1, 2, 3
    RESERVED = ["<pad>", "<unk>", "<s>", "</s>"]

    def __init__(self, tokens):
        self.itos = list(self.RESERVED) + list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise DataError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    @classmethod
    def build(cls, sentences, max_size):
        """Most frequent (max_size - 4) tokens; ties break lexicographically."""
        if max_size <= 4:
            raise DataError("max_size must exceed the 4 reserved ids")
        counts = Counter()
        for sent in sentences:
            counts.update(sent)
        if not counts:
            raise DataError("empty corpus")
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([t for t, _ in ranked[:max_size - 4]])

    def encode(self, tokens):
        return [self.stoi.get(t, self.UNK) for t in tokens]

    def decode(self, ids):
        return [self.itos[i] for i in ids]


# ----------------------------------------------------------------------
# examples and batches


@dataclass
class ParallelExample:
    src_tokens: list
    tgt_tokens: list
    src_tree: DependencyTree

    def __post_init__(self):
        if len(self.src_tree) != len(self.src_tokens):
            raise DataError(
                f"tree has {len(self.src_tree)} tokens, "
                f"source has {len(self.src_tokens)}")


@dataclass
class Batch:
    src_ids: np.ndarray
    tgt_in_ids: np.ndarray
    tgt_out_ids: np.ndarray
    src_mask: np.ndarray
    tgt_mask: np.ndarray
    w_child: np.ndarray
    w_parent: np.ndarray
    row_mask: np.ndarray

    def __len__(self):
        return self.src_ids.shape[0]


def piece_counts_from_markers(tokens, marker="@@"):
    """Group subword pieces into words: a token ending with the marker
    continues into the next piece.  Returns per-word piece counts."""
    counts = []
    run = 0
    for tok in tokens:
        run += 1
        if not tok.endswith(marker):
            counts.append(run)
            run = 0
    if run:
        raise DataError("dangling subword continuation at end of sentence")
    return counts


def load_parallel_corpus(src_lines, tgt_lines, conllu_text, max_len=None,
                         bpe_marker="@@"):
    """Align the three inputs into ParallelExamples.

    Word-level trees are projected onto subword pieces when the source
    contains continuation markers.  Overlong sentences are dropped with
    a logged count when max_len is given.
    """
    trees = parse_conllu(conllu_text)
    src = [ln.split() for ln in src_lines]
    tgt = [ln.split() for ln in tgt_lines]
    if not (len(src) == len(tgt) == len(trees)):
        raise DataError(
            f"corpus misaligned: {len(src)} source, {len(tgt)} target, "
            f"{len(trees)} trees")
    examples, dropped = [], 0
    for i, (s, t, tree) in enumerate(zip(src, tgt, trees)):
        if not s or not t:
            raise DataError(f"sentence {i + 1}: empty line")
        if any(tok.endswith(bpe_marker) for tok in s):
            counts = piece_counts_from_markers(s, bpe_marker)
            if len(counts) != len(tree):
                raise DataError(
                    f"sentence {i + 1}: {len(counts)} words after subword "
                    f"grouping but tree has {len(tree)}")
            tree = bpe_adjust_heads(tree, counts, pieces=s)
        elif len(s) != len(tree):
            raise DataError(
                f"sentence {i + 1}: {len(s)} source tokens but tree "
                f"has {len(tree)}")
        if max_len is not None and (len(s) > max_len or len(t) + 1 > max_len):
            dropped += 1
            continue
        examples.append(ParallelExample(s, t, tree))
    if dropped:
        log.info("dropped %d sentences longer than max_len", dropped)
    if not examples:
        raise DataError("no usable sentences in corpus")
    return examples


def make_batch(examples, src_vocab, tgt_vocab):
    """Pad a list of examples into one Batch with supervision matrices."""
    if not examples:
        raise DataError("empty batch")
    B = len(examples)
    ms = max(len(e.src_tokens) for e in examples)
    nt = max(len(e.tgt_tokens) for e in examples) + 1  # room for bos/eos
    src_ids = np.zeros((B, ms), dtype=np.int64)
    tgt_in = np.zeros((B, nt), dtype=np.int64)
    tgt_out = np.zeros((B, nt), dtype=np.int64)
    src_mask = np.zeros((B, ms), dtype=bool)
    tgt_mask = np.zeros((B, nt), dtype=bool)
    w_child = np.zeros((B, ms, ms))
    w_parent = np.zeros((B, ms, ms))
    for b, e in enumerate(examples):
        s = src_vocab.encode(e.src_tokens)
        t = tgt_vocab.encode(e.tgt_tokens)
        src_ids[b, :len(s)] = s
        src_mask[b, :len(s)] = True
        tin = [tgt_vocab.BOS] + t
        tout = t + [tgt_vocab.EOS]
        tgt_in[b, :len(tin)] = tin
        tgt_out[b, :len(tout)] = tout
        tgt_mask[b, :len(tin)] = True
        m = len(e.src_tree)
        w_child[b, :m, :m] = build_child_matrix(e.src_tree)
        w_parent[b, :m, :m] = build_parent_matrix(e.src_tree)
    return Batch(src_ids, tgt_in, tgt_out, src_mask, tgt_mask,
                 w_child, w_parent, row_mask=src_mask.copy())
