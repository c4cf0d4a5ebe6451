"""Composing the two stages, profiling them, and picking the candidate count.

The first stage ranks every class; the top t survive. The second stage
reranks only the survivors and returns the top N. Because second-stage
scores are per-class and scope-independent, one full ranking per stage per
query is enough to reconstruct the cascade's behavior at every t:

* hit1(q, t) is true exactly when t >= the first-stage rank of q's class;
* once q's class survives, it stays in the reranked top N until the t at
  which N better-scoring classes have entered the candidate pool.

So each query contributes a single interval of t values on which the
cascade answers it correctly, and accuracy, the alpha/rho profiles, and
the lower-bound checks all fall out of a sweep over those intervals. The
analytic sweep is exactly equivalent to rerunning the cascade at each t
(the tests assert this), just without re-scoring anything.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import neighbor, recurrent
from .neighbor import ScoredClass, TrainingIndex
from .recurrent import ClassDistribution, RecurrentParams
from .syntax import DependencyTree, FeatureBag


class UndefinedProfileError(ValueError):
    """rho(t) has a zero denominator: no validation query is a second-stage hit."""


@dataclass(frozen=True)
class CascadeConfig:
    """Candidate count t for the first stage, answer count N for the second."""

    t: int
    n: int

    def __post_init__(self) -> None:
        if not self.t > self.n >= 1:
            raise ValueError(f"need t > N >= 1, got t={self.t}, N={self.n}")


@dataclass(frozen=True)
class PreparedQuery:
    """One query with both stage inputs precomputed.

    tokens and tree only matter to the baseline scorers; the cascade itself
    reads the word-vector sequence and the feature bag.
    """

    query_id: str
    true_label: str
    inputs: np.ndarray  # (m, d) word-vector sequence for the first stage
    bag: FeatureBag  # (k, 2d) feature bag for the second stage
    tokens: Counter | None = None
    tree: DependencyTree | None = None


def run_cascade(
    query: PreparedQuery,
    params: RecurrentParams,
    index: TrainingIndex,
    config: CascadeConfig,
) -> list[ScoredClass]:
    """Filter to the first stage's top t, then rerank those to the top N."""
    _, dist = recurrent.forward(params, query.inputs)
    candidates = recurrent.top_t(dist, config.t)
    return neighbor.top_n(query.bag, index, config.n, restrict_to=candidates)


@dataclass(frozen=True)
class QueryProfile:
    """Everything the t-sweep needs about one query, from one pass per stage.

    The cascade answers this query correctly exactly for t in
    [first_stage_rank, crowded_out_at - 1]; crowded_out_at is the class
    count plus one when no t dislodges the true class.
    """

    query_id: str
    true_label: str
    first_stage_rank: int
    hit2: bool
    crowded_out_at: int

    def hit1(self, t: int) -> bool:
        return t >= self.first_stage_rank

    def cascade_hit(self, t: int) -> bool:
        return self.first_stage_rank <= t < self.crowded_out_at


@dataclass(frozen=True)
class ProfileCurve:
    """Empirical alpha(t) and rho(t) plus the t values where alpha steps.

    alpha[t] is the fraction of queries whose class survives the first
    stage's top t; rho[t] is the same fraction conditioned on the query
    being an uncascaded second-stage hit. Arrays are indexed by t with
    entry 0 fixed at 0. Both profiles are non-decreasing and reach exactly
    1 at t = class count.
    """

    class_count: int
    n: int
    queries: tuple[QueryProfile, ...]
    alpha: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)
    change_points: tuple[int, ...] = ()

    @property
    def query_count(self) -> int:
        return len(self.queries)

    @property
    def hit2_count(self) -> int:
        return sum(q.hit2 for q in self.queries)

    def alpha_fraction(self, t: int) -> Fraction:
        hits = sum(q.hit1(t) for q in self.queries)
        return Fraction(hits, len(self.queries))

    def rho_fraction(self, t: int) -> Fraction:
        joint = sum(q.hit1(t) and q.hit2 for q in self.queries)
        return Fraction(joint, self.hit2_count)

    def m2_accuracy_fraction(self) -> Fraction:
        return Fraction(self.hit2_count, len(self.queries))

    def cascade_hits(self, t: int) -> int:
        return sum(q.cascade_hit(t) for q in self.queries)

    def cascade_hits_per_t(self) -> np.ndarray:
        """Correct-answer counts for every t in 0..class_count, in one sweep."""
        delta = np.zeros(self.class_count + 2, dtype=int)
        for q in self.queries:
            delta[q.first_stage_rank] += 1
            delta[min(q.crowded_out_at, self.class_count + 1)] -= 1
        return np.cumsum(delta)[: self.class_count + 1]


def _profile_one(
    query: PreparedQuery,
    params: RecurrentParams,
    index: TrainingIndex,
    n: int,
) -> QueryProfile:
    if query.true_label not in index.classes:
        raise ValueError(
            f"query {query.query_id!r} labels unseen class {query.true_label!r}"
        )
    _, dist = recurrent.forward(params, query.inputs)
    full_order = recurrent.top_t(dist, len(dist.labels))
    position = {label: i + 1 for i, label in enumerate(full_order)}
    rank1 = position[query.true_label]

    scores = neighbor.class_scores(query.bag, index)
    s_true = scores[query.true_label]
    # first-stage positions of every class the reranker prefers to the true one
    better_positions = sorted(
        position[label]
        for label, score in scores.items()
        if score > s_true or (score == s_true and label < query.true_label)
    )
    c = index.class_count
    crowded_out_at = better_positions[n - 1] if len(better_positions) >= n else c + 1
    hit2 = len(better_positions) < n
    return QueryProfile(
        query_id=query.query_id,
        true_label=query.true_label,
        first_stage_rank=rank1,
        hit2=hit2,
        crowded_out_at=crowded_out_at,
    )


def estimate_profiles(
    queries: Sequence[PreparedQuery],
    params: RecurrentParams,
    index: TrainingIndex,
    n: int,
) -> ProfileCurve:
    """Profile both stages over a validation set.

    Runs one full first-stage ranking and one full (uncascaded) second-stage
    scoring per query; the second stage is never re-run per t.

    Raises:
        UndefinedProfileError: no query is an uncascaded second-stage hit,
            so rho has a zero denominator.
        ValueError: empty query set, or a query labels a class absent from
            the index (callers screen those out and report them as misses).
    """
    if not queries:
        raise ValueError("validation set must be nonempty")
    if n < 1:
        raise ValueError(f"N must be >= 1, got {n}")
    profiles = tuple(_profile_one(q, params, index, n) for q in queries)
    hit2_count = sum(p.hit2 for p in profiles)
    if hit2_count == 0:
        raise UndefinedProfileError(
            "rho(t) is undefined: no validation query has its class in the "
            f"uncascaded second-stage top-{n}"
        )
    c = index.class_count
    total = len(profiles)
    rank_counts = np.bincount([p.first_stage_rank for p in profiles], minlength=c + 1)
    joint_counts = np.bincount(
        [p.first_stage_rank for p in profiles if p.hit2], minlength=c + 1
    )
    alpha = np.cumsum(rank_counts) / total
    rho = np.cumsum(joint_counts) / hit2_count
    change_points = tuple(sorted({p.first_stage_rank for p in profiles}))
    return ProfileCurve(
        class_count=c,
        n=n,
        queries=profiles,
        alpha=alpha,
        rho=rho,
        change_points=change_points,
    )


def candidate_ts(curve: ProfileCurve) -> list[int]:
    """The only t values worth evaluating: where alpha(t) changes value.

    Between consecutive change points alpha is flat, and on a flat stretch
    the smallest t is always at least as accurate, so the sweep can skip
    everything else.
    """
    return list(curve.change_points)


def min_t_for_usefulness(
    curve: ProfileCurve, acc_m1_at_n: float, acc_m2_at_n: float
) -> int | None:
    """Smallest t whose rho meets the accuracy ratio of the two stages.

    At this t the lower bound guarantees the cascade is at least as accurate
    as the weaker stage. Returns None when no t below the class count
    reaches the ratio (always the case when the ratio exceeds 1).
    """
    if acc_m2_at_n <= 0:
        raise ValueError("second-stage accuracy must be positive")
    ratio = acc_m1_at_n / acc_m2_at_n
    # skip the t=0 placeholder entry
    reached = np.nonzero(curve.rho[1:] >= ratio)[0]
    return int(reached[0]) + 1 if reached.size else None


@dataclass(frozen=True)
class EvaluationReport:
    """Accuracy and per-query wall-clock timing for one (model, t) cell."""

    model: str
    n: int
    t: int | None
    hits: int
    total: int
    mean_s: float
    min_s: float
    max_s: float
    query_hits: tuple[tuple[str, bool], ...]
    params: dict[str, object] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.hits / self.total

    def accuracy_fraction(self) -> Fraction:
        return Fraction(self.hits, self.total)

    def to_record(self) -> dict:
        """JSON-ready dict; timing lives under one key so consumers that
        compare runs can drop it wholesale."""
        return {
            "model": self.model,
            "n": self.n,
            "t": self.t,
            "hits": self.hits,
            "total": self.total,
            "accuracy": self.accuracy,
            "timing": {"mean_s": self.mean_s, "min_s": self.min_s, "max_s": self.max_s},
            "query_hits": [[qid, bool(hit)] for qid, hit in self.query_hits],
            "params": dict(sorted(self.params.items())),
        }


def report_from_hits(
    model: str,
    n: int,
    t: int | None,
    query_hits: Sequence[tuple[str, bool]],
    times: Sequence[float],
    params: dict[str, object] | None = None,
) -> EvaluationReport:
    hits = sum(hit for _, hit in query_hits)
    return EvaluationReport(
        model=model,
        n=n,
        t=t,
        hits=int(hits),
        total=len(query_hits),
        mean_s=float(np.mean(times)) if len(times) else 0.0,
        min_s=float(np.min(times)) if len(times) else 0.0,
        max_s=float(np.max(times)) if len(times) else 0.0,
        query_hits=tuple((qid, bool(hit)) for qid, hit in query_hits),
        params=dict(params or {}),
    )


def evaluate_cascade_at(
    queries: Sequence[PreparedQuery],
    params: RecurrentParams,
    index: TrainingIndex,
    config: CascadeConfig,
    model: str = "cascade",
    repetitions: int = 1,
) -> EvaluationReport:
    """Run the real cascade on every query, timing each end to end."""
    query_hits: list[tuple[str, bool]] = []
    times: list[float] = []
    for query in queries:
        reps = []
        result: list[ScoredClass] = []
        for _ in range(max(1, repetitions)):
            start = time.perf_counter()
            result = run_cascade(query, params, index, config)
            reps.append(time.perf_counter() - start)
        times.append(float(np.mean(reps)))
        query_hits.append((query.query_id, any(sc.label == query.true_label for sc in result)))
    return report_from_hits(
        model, config.n, config.t, query_hits, times, params={"t": config.t}
    )


def _analytic_report(curve: ProfileCurve, t: int, model: str) -> EvaluationReport:
    start = time.perf_counter()
    query_hits = [(q.query_id, q.cascade_hit(t)) for q in curve.queries]
    elapsed = (time.perf_counter() - start) / max(1, len(curve.queries))
    return report_from_hits(
        model,
        curve.n,
        t,
        query_hits,
        [elapsed] * len(query_hits),
        params={"t": t, "evaluation": "stored-scores"},
    )


def select_t(
    queries: Sequence[PreparedQuery],
    params: RecurrentParams,
    index: TrainingIndex,
    n: int,
    curve: ProfileCurve,
    extra_ts: Iterable[int] = (),
    lower_cut: int | None = None,
    recompute: bool = False,
    model: str = "cascade",
) -> tuple[int, list[EvaluationReport]]:
    """Pick the candidate count maximizing validation accuracy.

    Only alpha change points are evaluated (clamped up to N + 1 so the
    resulting configuration stays valid), plus any explicitly requested
    extras. Ties go to the smaller t, which also costs less per query. With
    recompute=True every candidate is rerun through the real cascade
    instead of the stored-scores sweep; both paths produce identical hits.
    """
    cands = {max(cp, n + 1) for cp in curve.change_points}
    cands.update(int(t) for t in extra_ts)
    if lower_cut is not None:
        floor = max(lower_cut, n + 1)
        kept = {t for t in cands if t >= floor}
        cands = kept or {floor}
    cands = {min(t, curve.class_count) for t in cands}
    reports = []
    for t in sorted(cands):
        if recompute:
            report = evaluate_cascade_at(queries, params, index, CascadeConfig(t=t, n=n), model)
        else:
            report = _analytic_report(curve, t, model)
        reports.append(report)
    best = max(reports, key=lambda r: (r.accuracy_fraction(), -r.t))
    return best.t, reports


@dataclass(frozen=True)
class BoundCheck:
    """One row of the lower-bound verification: cascaded accuracy at t
    against rho(t) times the uncascaded second-stage accuracy."""

    t: int
    cascaded: Fraction
    bound: Fraction
    holds: bool
    lemma_violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.holds and not self.lemma_violations


def verify_lower_bound(
    curve: ProfileCurve, reports: Sequence[EvaluationReport]
) -> list[BoundCheck]:
    """Check the accuracy lower bound and its per-query premise.

    For each report: cascaded accuracy must be at least rho(t) times the
    uncascaded second-stage accuracy (compared as exact rationals), and any
    query whose class both survives stage one and is an uncascaded
    second-stage hit must be a cascaded hit. Violations are reported, not
    raised; one would indicate an implementation bug.
    """
    by_id = {q.query_id: q for q in curve.queries}
    checks = []
    for report in reports:
        if report.t is None:
            raise ValueError(f"report {report.model!r} has no candidate count t")
        if report.total != len(curve.queries):
            raise ValueError(
                f"report at t={report.t} covers {report.total} queries, "
                f"profile covers {len(curve.queries)}"
            )
        t = report.t
        cascaded = report.accuracy_fraction()
        bound = curve.rho_fraction(t) * curve.m2_accuracy_fraction()
        violations = tuple(
            qid
            for qid, hit in report.query_hits
            if by_id[qid].hit1(t) and by_id[qid].hit2 and not hit
        )
        checks.append(
            BoundCheck(
                t=t,
                cascaded=cascaded,
                bound=bound,
                holds=cascaded >= bound,
                lemma_violations=violations,
            )
        )
    return checks
