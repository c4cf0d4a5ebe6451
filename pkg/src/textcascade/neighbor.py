"""The slow second stage: nearest-neighbor scoring over bags of syntactic
features, plus the bag-of-words and lemma-bigram baselines.

A class's score for a query is the best match among its training texts,
where one text's match is the sum over query feature vectors of the best
cosine against that text's features. Scores are per-class and do not depend
on which other classes are in scope, which is what makes candidate
filtering sound.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from math import sqrt
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .embeddings import WordVectorTable, unit_rows
from .syntax import DependencyTree, FeatureBag, WeightPolicy, DEFAULT_WEIGHT_POLICY, generate_bag


class ScoredClass(NamedTuple):
    label: str
    score: float


@dataclass(frozen=True)
class Sample:
    """One training text with every per-model view precomputed."""

    text_id: str
    text: str
    tree: DependencyTree
    bag: FeatureBag
    unit_bag: np.ndarray = field(repr=False)  # row-normalized copy of bag
    lemma_bigrams: frozenset[tuple[str, str]] = frozenset()
    tokens: Counter = field(default_factory=Counter)


@dataclass(frozen=True)
class TrainingIndex:
    """Immutable per-class sample lists sharing one vector table and policy."""

    dim: int  # embedding dimension d; feature rows have width 2 * dim
    classes: dict[str, list[Sample]] = field(repr=False)
    labels: tuple[str, ...] = ()
    text_class: dict[str, str] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        for label, samples in self.classes.items():
            if not samples:
                raise ValueError(f"class {label!r} has no training samples")

    @property
    def class_count(self) -> int:
        return len(self.labels)

    def samples(self, label: str) -> list[Sample]:
        try:
            return self.classes[label]
        except KeyError:
            raise ValueError(f"unknown class {label!r}") from None


def tokenize(text: str) -> list[str]:
    """Whitespace tokenization used for bag-of-words and recurrent inputs."""
    return text.split()


def build_index(
    records: Iterable[tuple[str, str, str, DependencyTree]],
    table: WordVectorTable,
    policy: WeightPolicy = DEFAULT_WEIGHT_POLICY,
    precomputed_bags: dict[str, FeatureBag] | None = None,
) -> TrainingIndex:
    """Index (text_id, class label, text, tree) records for scoring.

    Every sample's feature bag is generated here with the shared table and
    policy, and a row-normalized copy is cached so queries only pay for dot
    products. precomputed_bags (from an on-disk cache) short-circuits bag
    generation for the ids it covers.
    """
    classes: dict[str, list[Sample]] = {}
    text_class: dict[str, str] = {}
    for text_id, label, text, tree in records:
        if text_id in text_class:
            raise ValueError(f"duplicate text id {text_id!r}")
        if precomputed_bags is not None and text_id in precomputed_bags:
            bag = precomputed_bags[text_id]
        else:
            bag = generate_bag(tree, table, policy)
        sample = Sample(
            text_id=text_id,
            text=text,
            tree=tree,
            bag=bag,
            unit_bag=np.ascontiguousarray(unit_rows(bag)),
            lemma_bigrams=tree.lemma_bigrams(),
            tokens=Counter(tokenize(text)),
        )
        classes.setdefault(label, []).append(sample)
        text_class[text_id] = label
    return TrainingIndex(
        dim=table.dim,
        classes=classes,
        labels=tuple(sorted(classes)),
        text_class=text_class,
    )


def _match_score(query_unit: np.ndarray, sample_unit: np.ndarray) -> float:
    # sum over query rows of the best cosine within this sample's bag
    if query_unit.shape[0] == 0 or sample_unit.shape[0] == 0:
        return 0.0
    return float((query_unit @ sample_unit.T).max(axis=1).sum())


def _sim_unit(query_unit: np.ndarray, samples: list[Sample]) -> float:
    best = 0.0
    first = True
    for sample in samples:
        score = _match_score(query_unit, sample.unit_bag)
        if first or score > best:
            best = score
            first = False
    return best


def sim(query_bag: FeatureBag, class_label: str, index: TrainingIndex) -> float:
    """Similarity of a query bag to a class: best match over its texts.

    Empty bags on either side score 0. The result never depends on any
    other class, so restricted and unrestricted rankings agree per class.
    """
    return _sim_unit(unit_rows(np.asarray(query_bag, dtype=float)), index.samples(class_label))


def rank_classes(
    score_of: Callable[[str], float],
    labels: Iterable[str],
    n: int,
) -> list[ScoredClass]:
    """Order labels by (score desc, label asc) and keep the first n."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    scored = sorted(
        (ScoredClass(label, float(score_of(label))) for label in labels),
        key=lambda sc: (-sc.score, sc.label),
    )
    return scored[:n]


def _resolve_scope(index: TrainingIndex, restrict_to: Iterable[str] | None) -> list[str]:
    if restrict_to is None:
        return list(index.labels)
    scope = sorted(set(restrict_to))
    if not scope:
        raise ValueError("restrict_to must contain at least one class")
    unknown = [label for label in scope if label not in index.classes]
    if unknown:
        raise ValueError(f"restrict_to references unknown classes: {unknown}")
    return scope


def class_scores(
    query_bag: FeatureBag,
    index: TrainingIndex,
    restrict_to: Iterable[str] | None = None,
) -> dict[str, float]:
    """Bag similarity for every class in scope.

    Each class's score is computed from its own samples only, so a class
    scores the same whether the scope is the full catalog or any candidate
    subset containing it.
    """
    scope = _resolve_scope(index, restrict_to)
    query_unit = unit_rows(np.asarray(query_bag, dtype=float))
    return {label: _sim_unit(query_unit, index.classes[label]) for label in scope}


def top_n(
    query_bag: FeatureBag,
    index: TrainingIndex,
    n: int,
    restrict_to: Iterable[str] | None = None,
) -> list[ScoredClass]:
    """Top-n classes by bag similarity, optionally within a candidate set.

    Ties break toward the lexicographically smaller label, so rankings are
    reproducible across runs and platforms. An empty query bag yields
    all-zero scores and the tie-break alone orders the result.
    """
    scores = class_scores(query_bag, index, restrict_to)
    return rank_classes(scores.__getitem__, scores, n)


def _tf_cosine(a: Counter, b: Counter) -> float:
    if not a or not b:
        return 0.0
    dot = sum(count * b[token] for token, count in a.items())
    if dot == 0:
        return 0.0
    na = sqrt(sum(c * c for c in a.values()))
    nb = sqrt(sum(c * c for c in b.values()))
    return dot / (na * nb)


def score_bow(query_tokens: Counter, class_label: str, index: TrainingIndex) -> float:
    """Bag-of-words baseline: best term-frequency cosine over class texts."""
    return max(_tf_cosine(query_tokens, s.tokens) for s in index.samples(class_label))


def score_snbigram(query_tree: DependencyTree, class_label: str, index: TrainingIndex) -> float:
    """Lemma-bigram baseline: best exact-match edge overlap over class texts.

    A bigram is the (head lemma, dependent lemma) pair of one edge; the
    score is the size of the set intersection with the best training text.
    """
    query_bigrams = query_tree.lemma_bigrams()
    return float(max(len(query_bigrams & s.lemma_bigrams) for s in index.samples(class_label)))


def top_n_bow(
    query_tokens: Counter,
    index: TrainingIndex,
    n: int,
    restrict_to: Iterable[str] | None = None,
) -> list[ScoredClass]:
    scope = _resolve_scope(index, restrict_to)
    return rank_classes(lambda label: score_bow(query_tokens, label, index), scope, n)


def top_n_snbigram(
    query_tree: DependencyTree,
    index: TrainingIndex,
    n: int,
    restrict_to: Iterable[str] | None = None,
) -> list[ScoredClass]:
    scope = _resolve_scope(index, restrict_to)
    return rank_classes(lambda label: score_snbigram(query_tree, label, index), scope, n)
