"""Exact posterior inference for a single student.

Messages are computed in log space with log-sum-exp so that long response
histories do not underflow. Per-node emission terms are accumulated from
(difficulty, correctness) counts, which makes every posterior independent
of the order interactions arrive in, bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .model import Parameters, emission_prob
from .tree import ConceptTree, Difficulty, QuestionMeta

NEG_INF = float("-inf")


class InferenceError(ValueError):
    """Raised for observations outside the tree or degenerate messages."""


@dataclass(frozen=True)
class Interaction:
    """One observed response to a question labeled with a leaf concept."""

    question_id: str
    kc: str
    difficulty: Difficulty
    correct: int


@dataclass(frozen=True)
class ObservationSet:
    """A student's response history, grouped by concept.

    counts maps node id -> {(difficulty, correct): multiplicity}; it is the
    canonical order-free form used by the message passing.
    """

    interactions: tuple[Interaction, ...]
    by_kc: dict[str, tuple[Interaction, ...]]
    counts: dict[str, dict[tuple[Difficulty, int], int]]

    def __len__(self) -> int:
        return len(self.interactions)


def observation_set(
    tree: ConceptTree, interactions: Iterable[Interaction]
) -> ObservationSet:
    interactions = tuple(interactions)
    by_kc: dict[str, list[Interaction]] = {}
    counts: dict[str, dict[tuple[Difficulty, int], int]] = {}
    for it in interactions:
        if it.kc not in tree:
            raise InferenceError(f"observation references unknown KC {it.kc!r}")
        if not tree.is_leaf(it.kc):
            raise InferenceError(f"observation KC {it.kc!r} is not a leaf")
        if it.correct not in (0, 1):
            raise InferenceError(f"correct must be 0 or 1, got {it.correct!r}")
        by_kc.setdefault(it.kc, []).append(it)
        node_counts = counts.setdefault(it.kc, {})
        key = (it.difficulty, it.correct)
        node_counts[key] = node_counts.get(key, 0) + 1
    return ObservationSet(
        interactions=interactions,
        by_kc={k: tuple(v) for k, v in by_kc.items()},
        counts=counts,
    )


@dataclass
class BeliefTable:
    """Per-node messages and posteriors for one student's history.

    log_beta[c][k]: likelihood of the observations in c's subtree given state k.
    log_beta_tilde[c][k]: the same, conditioned on c's *parent* being in state k.
    log_alpha[c][k]: joint of state k with all observations outside c's subtree.
    """

    log_beta: dict[str, tuple[float, float]]
    log_beta_tilde: dict[str, tuple[float, float]]
    log_alpha: dict[str, tuple[float, float]] = field(default_factory=dict)
    log_alpha_tilde: dict[str, tuple[float, float]] = field(default_factory=dict)
    marginal: dict[str, float] = field(default_factory=dict)
    pairwise: dict[str, dict[tuple[int, int], float]] = field(default_factory=dict)
    log_likelihood: float = 0.0

    def posterior_mastery(self, node_id: str) -> float:
        try:
            return self.marginal[node_id]
        except KeyError:
            raise InferenceError(f"unknown KC: {node_id!r}") from None


@dataclass(frozen=True)
class Prediction:
    question_id: str
    prob_correct: float
    posterior_mastery: float


def _lse2(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    m = a if a > b else b
    return m + math.log(math.exp(a - m) + math.exp(b - m))


def _log_emissions(params: Parameters, obs: ObservationSet, node: str):
    """Log emission product for the node's responses at each mastery state."""
    le0 = 0.0
    le1 = 0.0
    # Sorted so the sum is identical under any interaction arrival order.
    for (difficulty, correct), n in sorted(obs.counts.get(node, {}).items()):
        le0 += n * math.log(emission_prob(params, difficulty, correct, 0))
        le1 += n * math.log(emission_prob(params, difficulty, correct, 1))
    return le0, le1


def upward_pass(
    tree: ConceptTree, params: Parameters, obs: ObservationSet
) -> BeliefTable:
    """Leaves-to-root recursion filling log_beta and log_beta_tilde."""
    log_beta: dict[str, tuple[float, float]] = {}
    log_beta_tilde: dict[str, tuple[float, float]] = {}

    for node in tree.upward_order():
        lb0, lb1 = _log_emissions(params, obs, node)
        for child in tree.children(node):
            bt0, bt1 = log_beta_tilde[child]
            lb0 += bt0
            lb1 += bt1
        log_beta[node] = (lb0, lb1)

        if node != tree.root:
            # Marginalize the node's own state against the parent-conditioned
            # transition row: parent mastered forces the node mastered.
            gamma = params.gamma_of(node)
            bt_parent0 = _lse2(lb1 + math.log(gamma), lb0 + math.log1p(-gamma))
            bt_parent1 = lb1
            if bt_parent0 == NEG_INF or bt_parent1 == NEG_INF:
                raise InferenceError(
                    f"zero upward message at {node!r}; parameters degenerate"
                )
            log_beta_tilde[node] = (bt_parent0, bt_parent1)

    return BeliefTable(log_beta=log_beta, log_beta_tilde=log_beta_tilde)


def downward_pass(
    tree: ConceptTree,
    params: Parameters,
    obs: ObservationSet,
    belief: BeliefTable,
) -> BeliefTable:
    """Root-to-leaves recursion filling log_alpha (and the per-edge
    parent-excluding-this-subtree message log_alpha_tilde)."""
    root_gamma = params.gamma_of(tree.root)
    belief.log_alpha[tree.root] = (math.log1p(-root_gamma), math.log(root_gamma))

    for node in tree.downward_order():
        if node == tree.root:
            continue
        parent = tree.parent(node)
        a0, a1 = belief.log_alpha[parent]
        b0, b1 = belief.log_beta[parent]
        bt0, bt1 = belief.log_beta_tilde[node]
        at0 = a0 + b0 - bt0
        at1 = a1 + b1 - bt1
        belief.log_alpha_tilde[node] = (at0, at1)
        gamma = params.gamma_of(node)
        la1 = _lse2(at0 + math.log(gamma), at1)
        la0 = at0 + math.log1p(-gamma)
        belief.log_alpha[node] = (la0, la1)

    return belief


def posteriors(
    tree: ConceptTree, params: Parameters, obs: ObservationSet
) -> BeliefTable:
    """Full table: marginals, pairwise posteriors, and data log-likelihood."""
    belief = upward_pass(tree, params, obs)
    downward_pass(tree, params, obs, belief)

    b0, b1 = belief.log_beta[tree.root]
    a0, a1 = belief.log_alpha[tree.root]
    belief.log_likelihood = _lse2(a0 + b0, a1 + b1)

    for node in tree.nodes:
        a0, a1 = belief.log_alpha[node]
        b0, b1 = belief.log_beta[node]
        j0 = a0 + b0
        j1 = a1 + b1
        total = _lse2(j0, j1)
        belief.marginal[node] = math.exp(j1 - total)

        if node != tree.root:
            at0, at1 = belief.log_alpha_tilde[node]
            gamma = params.gamma_of(node)
            lb0, lb1 = belief.log_beta[node]
            # (child state, parent state) -> unnormalized log posterior.
            cells = {
                (0, 0): at0 + lb0 + math.log1p(-gamma),
                (1, 0): at0 + lb1 + math.log(gamma),
                (0, 1): NEG_INF,  # mastered parent entails the child
                (1, 1): at1 + lb1,
            }
            norm = NEG_INF
            for v in cells.values():
                norm = _lse2(norm, v)
            belief.pairwise[node] = {
                k: (math.exp(v - norm) if v != NEG_INF else 0.0)
                for k, v in cells.items()
            }

    return belief


def predict(
    params: Parameters, belief: BeliefTable, question: QuestionMeta
) -> Prediction:
    """Blend mastered/unmastered correctness rates with the posterior."""
    p1 = belief.posterior_mastery(question.kc)
    phi = params.phi(question.difficulty)
    prob = (1.0 - p1) * params.epsilon + p1 * phi
    return Prediction(
        question_id=question.question_id,
        prob_correct=prob,
        posterior_mastery=p1,
    )


def log_likelihood(
    tree: ConceptTree, params: Parameters, obs: ObservationSet
) -> float:
    """Log-probability of the observed responses under the model."""
    belief = upward_pass(tree, params, obs)
    root_gamma = params.gamma_of(tree.root)
    b0, b1 = belief.log_beta[tree.root]
    return _lse2(b0 + math.log1p(-root_gamma), b1 + math.log(root_gamma))


def mastery_dump(tree: ConceptTree, belief: BeliefTable) -> list[dict]:
    """Per-node posterior records for external mastery visualizations."""
    return [
        {"node_id": node, "posterior": belief.marginal[node]}
        for node in tree.downward_order()
    ]
