import math

import numpy as np
import pytest

from treekt import (
    Difficulty,
    Interaction,
    Parameters,
    brute_force_posteriors,
    log_likelihood,
    observation_set,
    posteriors,
    predict,
)
from treekt.inference import InferenceError, mastery_dump
from treekt.tree import QuestionMeta

from conftest import (
    chain_tree,
    random_instance,
    random_parameters,
    single_node_tree,
    star_tree,
)


def single_node_params(gamma=0.5, epsilon=0.1):
    return Parameters(
        gamma={"only": gamma}, r_easy=0.9, r_med=0.8, r_hard=0.75, epsilon=epsilon
    )


class TestObservationSet:
    def test_groups_and_counts(self):
        tree = star_tree(2)
        obs = observation_set(tree, [
            Interaction("q1", "l0", Difficulty.EASY, 1),
            Interaction("q2", "l0", Difficulty.EASY, 1),
            Interaction("q3", "l1", Difficulty.HARD, 0),
        ])
        assert len(obs) == 3
        assert obs.counts["l0"][(Difficulty.EASY, 1)] == 2
        assert obs.counts["l1"][(Difficulty.HARD, 0)] == 1

    def test_unknown_kc_rejected(self):
        with pytest.raises(InferenceError, match="unknown KC"):
            observation_set(star_tree(2), [
                Interaction("q", "nope", Difficulty.EASY, 1)
            ])

    def test_internal_kc_rejected(self):
        with pytest.raises(InferenceError, match="not a leaf"):
            observation_set(star_tree(2), [
                Interaction("q", "root", Difficulty.EASY, 1)
            ])

    def test_bad_correctness_rejected(self):
        with pytest.raises(InferenceError, match="0 or 1"):
            observation_set(star_tree(2), [
                Interaction("q", "l0", Difficulty.EASY, 2)
            ])


class TestHandValues:
    def test_single_node_no_observations(self):
        tree = single_node_tree()
        params = single_node_params(gamma=0.5)
        belief = posteriors(tree, params, observation_set(tree, []))
        assert belief.marginal["only"] == pytest.approx(0.5)
        assert belief.log_likelihood == pytest.approx(0.0)

    def test_single_node_one_correct_easy(self):
        # P(correct) = 0.5*0.9 + 0.5*0.1 = 0.5; P(mastered|correct) = 0.9.
        tree = single_node_tree()
        params = single_node_params(gamma=0.5)
        obs = observation_set(tree, [Interaction("q", "only", Difficulty.EASY, 1)])
        belief = posteriors(tree, params, obs)
        assert belief.marginal["only"] == pytest.approx(0.9)
        assert belief.log_likelihood == pytest.approx(math.log(0.5))

    def test_single_node_one_incorrect_easy(self):
        # P(wrong) = 0.5*0.1 + 0.5*0.9 = 0.5; P(mastered|wrong) = 0.1.
        tree = single_node_tree()
        params = single_node_params(gamma=0.5)
        obs = observation_set(tree, [Interaction("q", "only", Difficulty.EASY, 0)])
        belief = posteriors(tree, params, obs)
        assert belief.marginal["only"] == pytest.approx(0.1)
        assert belief.log_likelihood == pytest.approx(math.log(0.5))

    def test_two_node_chain_pairwise_by_hand(self):
        # gamma_root=0.4, gamma_child=0.25, one correct easy answer on n1.
        # Joint over (root, child): (1,1)=0.4, (0,1)=0.6*0.25, (0,0)=0.6*0.75.
        # Evidence multiplies 0.9 when child mastered, 0.1 otherwise.
        tree = chain_tree(2)
        params = Parameters(
            gamma={"n0": 0.4, "n1": 0.25},
            r_easy=0.9, r_med=0.8, r_hard=0.75, epsilon=0.1,
        )
        obs = observation_set(tree, [Interaction("q", "n1", Difficulty.EASY, 1)])
        belief = posteriors(tree, params, obs)
        w11 = 0.4 * 1.0 * 0.9
        w01 = 0.6 * 0.25 * 0.9
        w00 = 0.6 * 0.75 * 0.1
        total = w11 + w01 + w00
        assert belief.log_likelihood == pytest.approx(math.log(total))
        assert belief.marginal["n0"] == pytest.approx(w11 / total)
        assert belief.marginal["n1"] == pytest.approx((w11 + w01) / total)
        pair = belief.pairwise["n1"]
        assert pair[(1, 1)] == pytest.approx(w11 / total)
        assert pair[(1, 0)] == pytest.approx(w01 / total)
        assert pair[(0, 0)] == pytest.approx(w00 / total)
        assert pair[(0, 1)] == 0.0


class TestOracleAgreement:
    def test_randomized_cross_check(self):
        rng = np.random.default_rng(42)
        for _ in range(40):
            tree, params, obs = random_instance(rng)
            belief = posteriors(tree, params, obs)
            oracle = brute_force_posteriors(tree, params, obs)
            assert belief.log_likelihood == pytest.approx(
                oracle.log_likelihood, abs=1e-12
            )
            for node in tree.nodes:
                assert belief.marginal[node] == pytest.approx(
                    oracle.marginal[node], abs=1e-12
                )
                if node != tree.root:
                    for cell, value in oracle.pairwise[node].items():
                        assert belief.pairwise[node][cell] == pytest.approx(
                            value, abs=1e-12
                        )

    def test_log_likelihood_helper_matches_posteriors(self):
        rng = np.random.default_rng(43)
        for _ in range(20):
            tree, params, obs = random_instance(rng)
            assert log_likelihood(tree, params, obs) == pytest.approx(
                posteriors(tree, params, obs).log_likelihood, abs=1e-12
            )


class TestInvariants:
    def test_order_permutation_bit_identical(self):
        rng = np.random.default_rng(44)
        for _ in range(30):
            tree, params, obs = random_instance(rng)
            shuffled = list(obs.interactions)
            rng.shuffle(shuffled)
            a = posteriors(tree, params, obs)
            b = posteriors(tree, params, observation_set(tree, shuffled))
            assert a.log_likelihood == b.log_likelihood
            assert a.marginal == b.marginal
            assert a.pairwise == b.pairwise

    def test_hierarchy_entailment(self):
        # A node is mastered only together with its whole subtree, so the
        # posterior can never exceed any descendant's posterior.
        rng = np.random.default_rng(45)
        for _ in range(30):
            tree, params, obs = random_instance(rng)
            belief = posteriors(tree, params, obs)
            for node in tree.nodes:
                for child in tree.children(node):
                    assert (
                        belief.marginal[node] <= belief.marginal[child] + 1e-12
                    )

    def test_pairwise_cells_are_distributions(self):
        rng = np.random.default_rng(46)
        for _ in range(20):
            tree, params, obs = random_instance(rng)
            belief = posteriors(tree, params, obs)
            for node in tree.nodes:
                assert 0.0 <= belief.marginal[node] <= 1.0
                if node == tree.root:
                    continue
                cells = belief.pairwise[node]
                assert cells[(0, 1)] == 0.0
                assert all(v >= 0.0 for v in cells.values())
                assert sum(cells.values()) == pytest.approx(1.0)
                # Pairwise marginalizes back to the node and parent marginals.
                assert cells[(1, 0)] + cells[(1, 1)] == pytest.approx(
                    belief.marginal[node], abs=1e-12
                )
                assert cells[(0, 1)] + cells[(1, 1)] == pytest.approx(
                    belief.marginal[tree.parent(node)], abs=1e-12
                )

    def test_long_history_does_not_underflow(self):
        tree = chain_tree(4)
        params = random_parameters(tree, np.random.default_rng(47))
        interactions = [
            Interaction(f"q{i}", "n3", Difficulty.HARD, i % 2) for i in range(5000)
        ]
        belief = posteriors(tree, params, observation_set(tree, interactions))
        assert math.isfinite(belief.log_likelihood)
        assert 0.0 <= belief.marginal["n3"] <= 1.0


class TestPredict:
    def test_blend_formula(self):
        tree = single_node_tree()
        params = single_node_params(gamma=0.5)
        obs = observation_set(tree, [Interaction("q", "only", Difficulty.EASY, 1)])
        belief = posteriors(tree, params, obs)
        pred = predict(params, belief, QuestionMeta("next", "only", Difficulty.MEDIUM))
        assert pred.posterior_mastery == pytest.approx(0.9)
        assert pred.prob_correct == pytest.approx(0.9 * 0.8 + 0.1 * 0.1)

    def test_bounds_between_guess_and_best_rate(self):
        rng = np.random.default_rng(48)
        for _ in range(30):
            tree, params, obs = random_instance(rng)
            belief = posteriors(tree, params, obs)
            for leaf in tree.leaves():
                for d in Difficulty:
                    pred = predict(params, belief, QuestionMeta("q", leaf, d))
                    lo = min(params.epsilon, params.phi(d))
                    hi = max(params.epsilon, params.phi(d))
                    assert lo <= pred.prob_correct <= hi

    def test_unknown_kc(self):
        tree = single_node_tree()
        params = single_node_params()
        belief = posteriors(tree, params, observation_set(tree, []))
        with pytest.raises(InferenceError, match="unknown KC"):
            predict(params, belief, QuestionMeta("q", "ghost", Difficulty.EASY))


def test_mastery_dump_covers_all_nodes():
    tree = chain_tree(3)
    params = random_parameters(tree, np.random.default_rng(49))
    belief = posteriors(tree, params, observation_set(tree, []))
    dump = mastery_dump(tree, belief)
    assert [d["node_id"] for d in dump] == tree.downward_order()
    assert all(0.0 <= d["posterior"] <= 1.0 for d in dump)
