"""EM parameter estimation with closed-form updates.

The E-step reduces each student's posterior table to a handful of
accumulators; the M-step turns those into new parameters by simple ratios.
Every update keeps the guessing probability capped and all probabilities
strictly inside (0,1), which preserves the EM monotonicity guarantee.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .inference import BeliefTable, ObservationSet, posteriors
from .model import (
    EPSILON_CAP,
    Parameters,
    clamp_probability,
    warn_if_unordered,
)
from .tree import ConceptTree, Difficulty

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StudentObservations:
    student_id: str
    obs: ObservationSet


@dataclass
class SufficientStats:
    """Posterior accumulators summed over students.

    gamma_num[c] collects mass on (child mastered, parent not); the extra
    denominator term collects (child not, parent not). root_num collects the
    root mastery marginal. eps_* and r_* collect unmastered/mastered mass on
    correctly (pos) and incorrectly (neg) answered questions.
    """

    gamma_num: dict[str, float] = field(default_factory=dict)
    gamma_den_extra: dict[str, float] = field(default_factory=dict)
    root_num: float = 0.0
    n_students: int = 0
    eps_pos: float = 0.0
    eps_neg: float = 0.0
    r_pos: dict[Difficulty, float] = field(
        default_factory=lambda: {d: 0.0 for d in Difficulty}
    )
    r_neg: dict[Difficulty, float] = field(
        default_factory=lambda: {d: 0.0 for d in Difficulty}
    )


@dataclass
class FitReport:
    params: Parameters
    log_likelihood_trace: list[float]
    iterations: int
    converged: bool

    def to_json(self) -> str:
        doc = {
            "log_likelihood_trace": self.log_likelihood_trace,
            "iterations": self.iterations,
            "converged": self.converged,
            "parameters": json.loads(self.params.to_json()),
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _accumulate(
    stats: SufficientStats,
    tree: ConceptTree,
    student: StudentObservations,
    belief: BeliefTable,
) -> None:
    stats.n_students += 1
    stats.root_num += belief.marginal[tree.root]
    for node in tree.nodes:
        if node == tree.root:
            continue
        pair = belief.pairwise[node]
        stats.gamma_num[node] = stats.gamma_num.get(node, 0.0) + pair[(1, 0)]
        stats.gamma_den_extra[node] = (
            stats.gamma_den_extra.get(node, 0.0) + pair[(0, 0)]
        )
    for node, node_counts in student.obs.counts.items():
        p1 = belief.marginal[node]
        p0 = 1.0 - p1
        for (difficulty, correct), n in node_counts.items():
            if correct == 1:
                stats.eps_pos += n * p0
                stats.r_pos[difficulty] += n * p1
            else:
                stats.eps_neg += n * p0
                stats.r_neg[difficulty] += n * p1


def e_step(
    tree: ConceptTree,
    params: Parameters,
    dataset: Sequence[StudentObservations],
    threads: int = 1,
) -> tuple[SufficientStats, float]:
    """Accumulate sufficient statistics; also returns the total data
    log-likelihood at the current parameters (a free by-product).

    Accumulation runs in student-id order regardless of thread count, so
    serial and parallel execution produce identical results.
    """
    ordered = sorted(dataset, key=lambda s: s.student_id)
    if threads > 1 and len(ordered) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            beliefs = list(
                pool.map(lambda s: posteriors(tree, params, s.obs), ordered)
            )
    else:
        beliefs = [posteriors(tree, params, s.obs) for s in ordered]

    stats = SufficientStats()
    total_ll = 0.0
    for student, belief in zip(ordered, beliefs):
        _accumulate(stats, tree, student, belief)
        total_ll += belief.log_likelihood
    return stats, total_ll


def m_step(stats: SufficientStats, prev: Parameters) -> Parameters:
    """Closed-form maximizer of the expected complete-data log-likelihood.

    Accumulator cells with no mass leave the corresponding parameter at its
    previous value (the update is undefined there and retention is the only
    choice that keeps the likelihood monotone).
    """
    if stats.n_students == 0:
        raise ValueError("m_step requires statistics from a non-empty dataset")

    gamma = dict(prev.gamma)
    for node, num in stats.gamma_num.items():
        den = num + stats.gamma_den_extra.get(node, 0.0)
        if den > 0.0:
            gamma[node] = clamp_probability(num / den)
    # The root has no pairwise cell; its prior is the mean root marginal.
    for node in gamma:
        if node not in stats.gamma_num:
            gamma[node] = clamp_probability(stats.root_num / stats.n_students)

    def ratio(pos: float, neg: float, fallback: float) -> float:
        den = pos + neg
        if den <= 0.0:
            return fallback
        return clamp_probability(pos / den)

    epsilon = ratio(stats.eps_pos, stats.eps_neg, prev.epsilon)
    epsilon = min(epsilon, EPSILON_CAP)
    r_easy = ratio(stats.r_pos[Difficulty.EASY], stats.r_neg[Difficulty.EASY],
                   prev.r_easy)
    r_med = ratio(stats.r_pos[Difficulty.MEDIUM], stats.r_neg[Difficulty.MEDIUM],
                  prev.r_med)
    r_hard = ratio(stats.r_pos[Difficulty.HARD], stats.r_neg[Difficulty.HARD],
                   prev.r_hard)

    params = Parameters(
        gamma=gamma, r_easy=r_easy, r_med=r_med, r_hard=r_hard, epsilon=epsilon
    )
    warn_if_unordered(params, context="after M-step")
    return params


def fit(
    tree: ConceptTree,
    dataset: Sequence[StudentObservations],
    init: Parameters,
    max_iters: int = 100,
    tol: float = 1e-6,
    threads: int = 1,
) -> FitReport:
    """Alternate E and M steps until the log-likelihood improvement drops
    below tol or max_iters iterations have been applied."""
    if not dataset:
        raise ValueError("fit requires a non-empty dataset")
    params = init
    trace: list[float] = []
    prev_ll: float | None = None
    converged = False
    iterations = 0
    for _ in range(max_iters):
        stats, ll = e_step(tree, params, dataset, threads=threads)
        trace.append(ll)
        if prev_ll is not None and abs(ll - prev_ll) < tol:
            converged = True
            break
        params = m_step(stats, params)
        iterations += 1
        prev_ll = ll
    return FitReport(
        params=params,
        log_likelihood_trace=trace,
        iterations=iterations,
        converged=converged,
    )


def one_step_update(
    tree: ConceptTree,
    params: Parameters,
    dataset: Sequence[StudentObservations],
    threads: int = 1,
) -> Parameters:
    """Exactly one EM iteration; never decreases the dataset likelihood."""
    if not dataset:
        raise ValueError("one_step_update requires a non-empty dataset")
    stats, _ = e_step(tree, params, dataset, threads=threads)
    return m_step(stats, params)
