import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairsearch import (
    Candidate,
    CandidateSet,
    ComparisonRecord,
    PreferenceMatrix,
    Provenance,
    Ranking,
    entropy_uncertainty,
    kemeny_optimal,
    mle_transitive_exhaustive,
    non_transitive_log_likelihood,
    transitive_log_likelihood,
)
from pairsearch.core import DomainError, IncompleteMatrixError, SizeLimitError

from conftest import btl_matrix, random_matrix

probs = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


class TestEntropy:
    def test_max_at_half(self):
        assert entropy_uncertainty(0.5) == pytest.approx(0.693147, abs=1e-6)
        assert entropy_uncertainty(0.5) == pytest.approx(math.log(2), abs=1e-15)

    def test_degenerate(self):
        assert entropy_uncertainty(1.0) == 0.0
        assert entropy_uncertainty(0.0) == 0.0

    def test_point_eight(self):
        # mpmath at 30 digits: 0.500402423538187879533...
        assert entropy_uncertainty(0.8) == pytest.approx(0.500402423538188, abs=1e-12)

    @pytest.mark.parametrize("p", [-0.1, 1.5, float("nan")])
    def test_domain(self, p):
        with pytest.raises(DomainError):
            entropy_uncertainty(p)

    @given(probs)
    def test_symmetric_and_bounded(self, p):
        h = entropy_uncertainty(p)
        assert h == pytest.approx(entropy_uncertainty(1 - p), abs=1e-12)
        assert 0.0 <= h <= math.log(2) + 1e-15


class TestTypes:
    def test_ranking_must_be_permutation(self):
        with pytest.raises(DomainError):
            Ranking((0, 0, 1))
        assert Ranking((2, 0, 1)).positions().tolist() == [1, 2, 0]
        assert Ranking((2, 0, 1)).scores().tolist() == [2, 1, 3]

    def test_candidate_set_validation(self):
        with pytest.raises(DomainError):
            CandidateSet("g", ())
        with pytest.raises(DomainError):
            CandidateSet("", (Candidate("a"),))
        with pytest.raises(DomainError):
            CandidateSet("g", (Candidate("a"), Candidate("a")))
        with pytest.raises(DomainError):
            Candidate("a", latent_score=float("inf"))

    def test_matrix_complement_check(self):
        with pytest.raises(DomainError):
            PreferenceMatrix([[0, 0.7], [0.4, 0]])
        m = PreferenceMatrix.from_entries(3, {(0, 1): 0.7})
        assert m.get(1, 0) == pytest.approx(0.3)
        assert not m.has(0, 2) and not m.is_complete()
        with pytest.raises(IncompleteMatrixError):
            m.get(0, 2)

    def test_record_uncertainty_coupled(self):
        rec = ComparisonRecord(0, 1, 0.7, Provenance.MATRIX)
        assert rec.uncertainty == pytest.approx(0.610864302054893, abs=1e-12)
        with pytest.raises(DomainError):
            ComparisonRecord(0, 1, 0.7, Provenance.MATRIX, uncertainty=0.1)
        with pytest.raises(DomainError):
            ComparisonRecord(1, 1, 0.7, Provenance.MATRIX)


def abc_matrix():
    return PreferenceMatrix.from_entries(3, {(0, 1): 0.9, (1, 2): 0.8, (0, 2): 0.7})


class TestLikelihoods:
    def test_transitive_example(self):
        assert transitive_log_likelihood((0, 1, 2), abc_matrix()) == pytest.approx(
            -0.328504066972036, abs=1e-12)

    def test_non_transitive_example(self):
        assert non_transitive_log_likelihood((0, 1, 2), abc_matrix()) == pytest.approx(
            -0.685179010910768, abs=1e-12)

    def test_single_item(self):
        m = PreferenceMatrix([[0.0]])
        assert transitive_log_likelihood(Ranking((0,)), m) == 0.0
        assert non_transitive_log_likelihood(Ranking((0,)), m) == 0.0

    def test_all_half(self):
        m4 = PreferenceMatrix(np.full((4, 4), 0.5))
        assert transitive_log_likelihood((3, 1, 0, 2), m4) == pytest.approx(math.log(0.125))
        m3 = PreferenceMatrix(np.full((3, 3), 0.5))
        assert non_transitive_log_likelihood((2, 0, 1), m3) == pytest.approx(math.log(0.125))

    def test_missing_adjacent(self):
        m = PreferenceMatrix.from_entries(3, {(0, 1): 0.9})
        with pytest.raises(IncompleteMatrixError):
            transitive_log_likelihood((0, 1, 2), m)
        with pytest.raises(IncompleteMatrixError):
            non_transitive_log_likelihood((0, 1, 2), m)

    def test_zero_probability_is_minus_inf(self):
        m = PreferenceMatrix.from_entries(2, {(0, 1): 0.0})
        assert transitive_log_likelihood((0, 1), m) == -math.inf
        assert transitive_log_likelihood((1, 0), m) == 0.0

    @given(st.floats(0.01, 0.99))
    def test_two_items_coincide(self, p):
        m = PreferenceMatrix.from_entries(2, {(0, 1): p})
        for r in [(0, 1), (1, 0)]:
            assert transitive_log_likelihood(r, m) == non_transitive_log_likelihood(r, m)

    @settings(max_examples=50)
    @given(st.integers(2, 7), st.integers(0, 10_000))
    def test_reverse_complements_adjacent_factors(self, n, seed):
        rng = np.random.default_rng(seed)
        m = random_matrix(rng, n)
        order = tuple(rng.permutation(n).tolist())
        adj = [m.get(a, b) for a, b in zip(order, order[1:])]
        expected = math.fsum(math.log(1 - p) for p in adj)
        assert transitive_log_likelihood(order[::-1], m) == pytest.approx(expected, abs=1e-12)


def _brute(prefs, score):
    """Independent enumeration: all maximizers, then lexicographic min."""
    perms = list(itertools.permutations(range(prefs.n)))
    scores = [score(p, prefs) for p in perms]
    best = max(scores)
    return min(p for p, s in zip(perms, scores) if s >= best - 1e-12)


class TestExhaustive:
    def cyclic(self):
        return PreferenceMatrix.from_entries(3, {(0, 1): 0.6, (1, 2): 0.6, (2, 0): 0.6})

    def test_kemeny_cyclic_tie(self):
        r = kemeny_optimal(self.cyclic())
        assert r.order == (0, 1, 2)
        assert math.exp(non_transitive_log_likelihood(r, self.cyclic())) == pytest.approx(0.144, abs=1e-12)

    def test_mle_transitive_cyclic_tie(self):
        # adjacent products: (0,1,2),(1,2,0),(2,0,1) give 0.36; the rest 0.16
        r = mle_transitive_exhaustive(self.cyclic())
        assert r.order == (0, 1, 2)
        assert math.exp(transitive_log_likelihood(r, self.cyclic())) == pytest.approx(0.36)

    def test_noiseless_true_order(self):
        latents = [0.3, 2.0, -1.0, 1.1]
        m = btl_matrix(latents)
        truth = tuple(np.argsort(latents)[::-1].tolist())
        assert kemeny_optimal(m).order == truth
        assert mle_transitive_exhaustive(m).order == truth
        hard = PreferenceMatrix.from_upper(np.ones((4, 4)))
        assert kemeny_optimal(hard).order == (0, 1, 2, 3)

    def test_small_cases(self):
        assert kemeny_optimal(PreferenceMatrix([[0.0]])).order == (0,)
        m = PreferenceMatrix.from_entries(2, {(0, 1): 0.3})
        assert mle_transitive_exhaustive(m).order == (1, 0)

    def test_limits(self):
        with pytest.raises(SizeLimitError):
            kemeny_optimal(random_matrix(np.random.default_rng(0), 5), max_n=4)
        with pytest.raises(IncompleteMatrixError):
            kemeny_optimal(PreferenceMatrix.from_entries(3, {(0, 1): 0.6}))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 10_000))
    def test_against_enumeration(self, n, seed):
        m = random_matrix(np.random.default_rng(seed), n)
        assert kemeny_optimal(m).order == _brute(m, non_transitive_log_likelihood)
        assert mle_transitive_exhaustive(m).order == _brute(m, transitive_log_likelihood)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 10_000))
    def test_kemeny_relabel_equivariant(self, n, seed):
        rng = np.random.default_rng(seed)
        m = random_matrix(rng, n)
        perm = rng.permutation(n)
        relabeled = kemeny_optimal(m.relabel(perm))
        # item k of the relabeled matrix is item perm[k] of the original
        mapped = tuple(int(perm[k]) for k in relabeled.order)
        orig = kemeny_optimal(m)
        assert non_transitive_log_likelihood(mapped, m) == pytest.approx(
            non_transitive_log_likelihood(orig, m), abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 7), st.integers(0, 10_000))
    def test_btl_orders_recovered(self, n, seed):
        latents = np.random.default_rng(seed).normal(size=n)
        m = btl_matrix(latents)
        truth = tuple(np.argsort(-latents, kind="stable").tolist())
        assert kemeny_optimal(m).order == truth
        assert mle_transitive_exhaustive(m).order == truth
