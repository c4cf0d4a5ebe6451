"""Word vector storage and the cosine kernel shared by both stages.

Vectors are loaded once from a word2vec-style text file and are immutable
afterwards, so a single table can be read concurrently by any number of
scoring workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np


class VectorFormatError(ValueError):
    """A word2vec text stream violates its declared layout."""


@dataclass(frozen=True)
class WordVectorTable:
    """Immutable map from word to a fixed-dimension real vector.

    Unknown words resolve to the all-zeros vector, which contributes a
    cosine of exactly 0 downstream: noisy out-of-vocabulary tokens degrade
    scores gracefully instead of raising.
    """

    dim: int
    entries: dict[str, np.ndarray] = field(repr=False)
    case_fold: bool = False

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"vector dimension must be >= 1, got {self.dim}")
        for word, vec in self.entries.items():
            if vec.shape != (self.dim,):
                raise ValueError(
                    f"vector for {word!r} has shape {vec.shape}, expected ({self.dim},)"
                )
        object.__setattr__(self, "_zero", np.zeros(self.dim))

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, word: str) -> bool:
        return self._key(word) in self.entries

    def _key(self, word: str) -> str:
        return word.lower() if self.case_fold else word

    def lookup(self, word: str) -> np.ndarray:
        """Return the stored vector, or the zero vector for unknown words."""
        vec = self.entries.get(self._key(word))
        return self._zero if vec is None else vec

    def lookup_all(self, words: Iterable[str]) -> np.ndarray:
        """Stack lookups for a token sequence into an (m, dim) array."""
        rows = [self.lookup(w) for w in words]
        if not rows:
            return np.zeros((0, self.dim))
        return np.stack(rows)


def load_vectors(source: IO[bytes] | IO[str], case_fold: bool = False) -> WordVectorTable:
    """Parse a word2vec text stream: a `<count> <dim>` header, then one
    `word v1 ... v_dim` line per word.

    Duplicate words keep the last occurrence. The header count is
    informational and not validated against the number of lines.

    Raises:
        VectorFormatError: empty stream, unparsable header, or a line whose
            value count disagrees with the declared dimension (the message
            names the 1-based line number).
    """
    header = None
    entries: dict[str, np.ndarray] = {}
    dim = 0
    for lineno, raw in enumerate(source, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split()
        if header is None:
            if len(parts) != 2:
                raise VectorFormatError(
                    f"line {lineno}: header must be '<count> <dim>', got {line!r}"
                )
            try:
                _, dim = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise VectorFormatError(f"line {lineno}: non-integer header {line!r}") from exc
            if dim < 1:
                raise VectorFormatError(f"line {lineno}: dimension must be >= 1, got {dim}")
            header = (lineno, dim)
            continue
        word, values = parts[0], parts[1:]
        if len(values) != dim:
            raise VectorFormatError(
                f"line {lineno}: expected {dim} values for {word!r}, got {len(values)}"
            )
        try:
            vec = np.array([float(v) for v in values])
        except ValueError as exc:
            raise VectorFormatError(f"line {lineno}: non-numeric value in {line!r}") from exc
        vec.setflags(write=False)
        entries[word.lower() if case_fold else word] = vec
    if header is None:
        raise VectorFormatError("empty stream: missing '<count> <dim>' header")
    return WordVectorTable(dim=dim, entries=entries, case_fold=case_fold)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity in [-1, 1], with cosine(x, 0) defined as 0.

    The zero convention keeps the similarity total on bags that contain
    out-of-vocabulary features.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"cosine needs equal-length vectors, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def unit_rows(mat: np.ndarray) -> np.ndarray:
    """Normalize each row to unit length; all-zero rows stay zero.

    Dot products of unit rows are then exactly the pairwise cosines with the
    same zero convention as :func:`cosine`.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.size == 0:
        return mat.reshape(mat.shape).copy()
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return mat / safe
