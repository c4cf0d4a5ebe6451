"""Dependency-parse structures and bag-of-syntactic-features extraction.

A parsed sentence is a set of labeled head -> dependent edges over tokens.
Each edge contributes one feature vector: the head's word vector scaled by
its part-of-speech weight, concatenated with the dependent's scaled vector.
The multiset of these 2d-dimensional vectors is the "bag" the slow stage
scores with.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

import numpy as np

from .embeddings import WordVectorTable

#: A feature bag is an (n_edges, 2 * dim) float array; row order carries no
#: meaning but multiplicity does (duplicate edges yield duplicate rows).
FeatureBag = np.ndarray


class ConlluParseError(ValueError):
    """A CoNLL-U stream contains an unusable token line."""


@dataclass(frozen=True)
class Token:
    index: int  # 1-based position within the sentence
    word: str
    lemma: str
    pos: str  # coarse (UPOS-style) tag


@dataclass(frozen=True)
class Edge:
    head: int  # 1-based token index of the governing word
    dependent: int
    relation: str


@dataclass(frozen=True)
class DependencyTree:
    """One sentence's tokens plus labeled directed edges.

    Edges reference token positions, not strings, so a word occurring at two
    nodes keeps per-node part-of-speech tags. The edge tuple may be empty
    (single-word or unparsed sentences).
    """

    tokens: tuple[Token, ...]
    edges: tuple[Edge, ...]
    sent_id: str | None = None

    def __post_init__(self) -> None:
        by_index = {tok.index: tok for tok in self.tokens}
        for edge in self.edges:
            if edge.head not in by_index or edge.dependent not in by_index:
                raise ValueError(f"edge {edge} references a missing token index")
        object.__setattr__(self, "_by_index", by_index)

    def token(self, index: int) -> Token:
        return self._by_index[index]

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(tok.word for tok in self.tokens)

    def word_edges(self) -> list[tuple[str, str, str]]:
        """Edges as (head word, dependent word, relation) triples."""
        return [
            (self.token(e.head).word, self.token(e.dependent).word, e.relation)
            for e in self.edges
        ]

    def lemma_bigrams(self) -> frozenset[tuple[str, str]]:
        """The set of (head lemma, dependent lemma) pairs, one per edge."""
        return frozenset(
            (self.token(e.head).lemma, self.token(e.dependent).lemma) for e in self.edges
        )


@dataclass(frozen=True)
class WeightPolicy:
    """Per-part-of-speech scaling applied to word vectors before concatenation.

    Content words (nouns, verbs, adjectives) default to twice the weight of
    everything else; the exact ratio is a heuristic and fully overridable.
    """

    weights: Mapping[str, float] = field(default_factory=dict)
    default: float = 1.0

    def __post_init__(self) -> None:
        if self.default <= 0:
            raise ValueError(f"default weight must be > 0, got {self.default}")
        for tag, w in self.weights.items():
            if w <= 0:
                raise ValueError(f"weight for {tag!r} must be > 0, got {w}")

    def weight(self, pos: str) -> float:
        return self.weights.get(pos, self.default)

    def scaled(self, factor: float) -> "WeightPolicy":
        return WeightPolicy(
            weights={tag: w * factor for tag, w in self.weights.items()},
            default=self.default * factor,
        )


DEFAULT_WEIGHT_POLICY = WeightPolicy(
    weights={"NOUN": 2.0, "PROPN": 2.0, "VERB": 2.0, "ADJ": 2.0},
    default=1.0,
)


def read_conllu(source: IO[bytes] | IO[str]) -> list[DependencyTree]:
    """Read blank-line-separated CoNLL-U sentence blocks.

    Consumes columns ID, FORM, LEMMA, UPOS, HEAD, DEPREL. Multiword ranges
    and empty nodes ('-' or '.' in the ID) and '#' comment lines are
    skipped; a `# sent_id = ...` comment is kept on the tree. Each token
    with HEAD != 0 yields one (head word -> token word) edge; the root
    token contributes no edge.

    Raises:
        ConlluParseError: non-integer or out-of-range HEAD, or a token line
            with fewer than 8 columns (names the sentence ordinal and line).
    """
    trees: list[DependencyTree] = []
    pending: list[tuple[int, str, str, str, str, str]] = []  # id, form, lemma, upos, head, deprel
    sent_id: str | None = None
    ordinal = 1

    def flush(last_lineno: int) -> None:
        nonlocal pending, sent_id, ordinal
        if not pending:
            sent_id = None
            return
        tokens = tuple(Token(tid, form, lemma, upos) for tid, form, lemma, upos, _, _ in pending)
        ids = {tok.index for tok in tokens}
        edges = []
        for tid, _, _, _, head_raw, deprel in pending:
            try:
                head = int(head_raw)
            except ValueError:
                raise ConlluParseError(
                    f"sentence {ordinal} (near line {last_lineno}): "
                    f"non-integer HEAD {head_raw!r} for token {tid}"
                ) from None
            if head == 0:
                continue
            if head not in ids:
                raise ConlluParseError(
                    f"sentence {ordinal} (near line {last_lineno}): "
                    f"HEAD {head} of token {tid} is out of range"
                )
            edges.append(Edge(head=head, dependent=tid, relation=deprel))
        trees.append(DependencyTree(tokens=tokens, edges=tuple(edges), sent_id=sent_id))
        pending = []
        sent_id = None
        ordinal += 1

    lineno = 0
    for lineno, raw in enumerate(source, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        line = line.rstrip("\r\n")
        if not line.strip():
            flush(lineno)
            continue
        if line.startswith("#"):
            comment = line.lstrip("#").strip()
            if comment.startswith("sent_id"):
                _, _, value = comment.partition("=")
                sent_id = value.strip()
            continue
        cols = line.split("\t")
        if len(cols) < 8:
            raise ConlluParseError(
                f"sentence {ordinal} (line {lineno}): expected >= 8 tab-separated "
                f"columns, got {len(cols)}"
            )
        tok_id = cols[0]
        if "-" in tok_id or "." in tok_id:
            continue  # multiword range or empty node
        try:
            tid = int(tok_id)
        except ValueError:
            raise ConlluParseError(
                f"sentence {ordinal} (line {lineno}): non-integer token ID {tok_id!r}"
            ) from None
        form, lemma, upos = cols[1], cols[2], cols[3]
        if lemma == "_" or not lemma:
            lemma = form
        pending.append((tid, form, lemma, upos, cols[6], cols[7]))
    flush(lineno)
    return trees


def fallback_edges(tokens: list[str] | tuple[str, ...]) -> DependencyTree:
    """Adjacency-chain stand-in for sentences without a parse.

    Consecutive tokens are linked left-to-right with an "adj" relation;
    lemmas mirror the words and every tag is "X".
    """
    toks = tuple(Token(i + 1, w, w, "X") for i, w in enumerate(tokens))
    edges = tuple(
        Edge(head=i + 1, dependent=i + 2, relation="adj") for i in range(len(toks) - 1)
    )
    return DependencyTree(tokens=toks, edges=edges)


def generate_bag(
    tree: DependencyTree,
    table: WordVectorTable,
    policy: WeightPolicy = DEFAULT_WEIGHT_POLICY,
) -> FeatureBag:
    """Build the bag of syntactic features for one sentence.

    For every edge, the head word's vector scaled by its tag weight fills
    the first half of a 2*dim row and the dependent's scaled vector the
    second half. One row per edge, duplicates preserved.
    """
    d = table.dim
    bag = np.empty((len(tree.edges), 2 * d))
    for i, edge in enumerate(tree.edges):
        head = tree.token(edge.head)
        dep = tree.token(edge.dependent)
        bag[i, :d] = policy.weight(head.pos) * table.lookup(head.word)
        bag[i, d:] = policy.weight(dep.pos) * table.lookup(dep.word)
    return bag
