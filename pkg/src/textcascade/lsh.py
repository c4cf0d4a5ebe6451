"""Random-hyperplane hashing baseline for candidate generation.

Every syntactic feature vector gets a P-bit sign code: bit i is 1 when the
vector lies on the positive side of the i-th random hyperplane. Candidate
retrieval is conjunctive over the query's codes, either per class (the
class must cover every query code) or per text (a single training text
must cover every query code).

Families are nested: the planes of a P-bit family are the first P rows a
(P+1)-bit family draws from the same seed, so growing P can only shrink
candidate sets. That turns the "more bits, fewer candidates" trend into an
exact per-query guarantee.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import neighbor
from .neighbor import ScoredClass, TrainingIndex
from .syntax import FeatureBag


@dataclass(frozen=True)
class HyperplaneFamily:
    """P random hyperplanes in feature space, reproducible from a seed."""

    seed: int
    planes: np.ndarray = field(repr=False)  # (bits, width) standard normal rows

    @property
    def bits(self) -> int:
        return self.planes.shape[0]

    @property
    def width(self) -> int:
        return self.planes.shape[1]


def make_family(seed: int, bits: int, width: int) -> HyperplaneFamily:
    """Draw a nested hyperplane family: row i is the i-th draw of the seeded
    generator, so families sharing a seed agree on their common prefix."""
    if bits < 1:
        raise ValueError(f"bit count must be >= 1, got {bits}")
    rng = np.random.default_rng(seed)
    planes = np.stack([rng.standard_normal(width) for _ in range(bits)])
    planes.setflags(write=False)
    return HyperplaneFamily(seed=seed, planes=planes)


def hash_vector(family: HyperplaneFamily, vector: np.ndarray) -> int:
    """P-bit sign code of one vector; a zero projection hashes to a 0 bit."""
    v = np.asarray(vector, dtype=float)
    if v.shape != (family.width,):
        raise ValueError(f"vector has shape {v.shape}, family expects ({family.width},)")
    bits = family.planes @ v > 0.0
    code = 0
    for i in np.nonzero(bits)[0]:
        code |= 1 << int(i)
    return code


def hash_bag(family: HyperplaneFamily, bag: FeatureBag) -> list[int]:
    """Codes for every feature vector in a bag, preserving multiplicity."""
    mat = np.asarray(bag, dtype=float)
    if mat.shape[0] == 0:
        return []
    return [hash_vector(family, row) for row in mat]


@dataclass(frozen=True)
class HashTables:
    """Inverted maps from feature hash code to owning classes and texts."""

    phi_class: dict[int, frozenset[str]] = field(repr=False)
    phi_text: dict[int, frozenset[str]] = field(repr=False)


def build_tables(index: TrainingIndex, family: HyperplaneFamily) -> HashTables:
    """Hash every training feature vector into both inverted tables."""
    phi_class: dict[int, set[str]] = {}
    phi_text: dict[int, set[str]] = {}
    for label in index.labels:
        for sample in index.classes[label]:
            for code in hash_bag(family, sample.bag):
                phi_class.setdefault(code, set()).add(label)
                phi_text.setdefault(code, set()).add(sample.text_id)
    return HashTables(
        phi_class={code: frozenset(v) for code, v in phi_class.items()},
        phi_text={code: frozenset(v) for code, v in phi_text.items()},
    )


def _conjunctive(codes: Iterable[int], table: dict[int, frozenset[str]]) -> set[str]:
    result: set[str] | None = None
    for code in codes:
        members = table.get(code)
        if not members:
            return set()
        result = set(members) if result is None else result & members
        if not result:
            return set()
    return result or set()


def candidates_class_based(
    query_bag: FeatureBag, tables: HashTables, family: HyperplaneFamily
) -> set[str]:
    """Classes containing every hash code computed from the query."""
    codes = hash_bag(family, query_bag)
    if not codes:
        raise ValueError("query bag must be nonempty for candidate generation")
    return _conjunctive(codes, tables.phi_class)


def candidates_text_based(
    query_bag: FeatureBag,
    tables: HashTables,
    family: HyperplaneFamily,
    index: TrainingIndex,
) -> set[str]:
    """Classes with at least one text containing every query hash code."""
    codes = hash_bag(family, query_bag)
    if not codes:
        raise ValueError("query bag must be nonempty for candidate generation")
    texts = _conjunctive(codes, tables.phi_text)
    return {index.text_class[text_id] for text_id in texts}


def lsh_classify(
    query_bag: FeatureBag,
    tables: HashTables,
    family: HyperplaneFamily,
    index: TrainingIndex,
    n: int,
    variant: str = "class",
) -> list[ScoredClass]:
    """Generate candidates with the chosen variant, then rerank them.

    An empty candidate set yields an empty result, which evaluation counts
    as a miss.
    """
    if variant == "class":
        candidates = candidates_class_based(query_bag, tables, family)
    elif variant == "text":
        candidates = candidates_text_based(query_bag, tables, family, index)
    else:
        raise ValueError(f"variant must be 'class' or 'text', got {variant!r}")
    if not candidates:
        return []
    return neighbor.top_n(query_bag, index, n, restrict_to=candidates)
