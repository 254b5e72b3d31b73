import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dataeff.ensemble import (
    EnsembleConfig,
    Vote,
    VoteSet,
    mode_with_tiebreak,
    plurality_vote,
    replicate_policies,
    soft_vote,
    tta_predict,
    tta_predict_many,
)
from dataeff.errors import DimensionMismatchError, EmptyModelSetError, MisalignedItemsError
from dataeff.image import AugmentPolicy, ImageU8
from dataeff.trainer import PredictionRecord, init_params, predict
from oracles import plurality_vote_bruteforce


def rec(item_id, cls, conf, num_classes=3):
    """A record whose argmax is ``cls`` with probability ``conf``."""
    rest = (1.0 - conf) / (num_classes - 1)
    probs = [rest] * num_classes
    probs[cls] = conf
    return PredictionRecord.from_probs(item_id, probs)


def random_models(rng, m, n, c):
    models = {}
    for k in range(m):
        recs = []
        for j in range(n):
            logits = rng.normal(size=c) * rng.uniform(0.1, 4)
            p = np.exp(logits - logits.max())
            recs.append(PredictionRecord.from_probs(f"item{j:03d}", p / p.sum()))
        models[f"model{k}"] = recs
    return models


def as_tuples(models):
    return {mid: [(r.item_id, r.predicted_class, r.confidence) for r in recs]
            for mid, recs in models.items()}


class TestMode:
    def cfg(self, base="B"):
        return EnsembleConfig(base_model_id=base)

    def test_unanimous(self):
        votes = VoteSet("x", tuple(Vote(f"m{i}", 4, 0.5) for i in range(5)))
        assert mode_with_tiebreak(votes, self.cfg("m0")) == 4

    def test_base_breaks_tie(self):
        votes = VoteSet("x", (Vote("B", 2, 0.1), Vote("m1", 1, 0.9), Vote("m2", 1, 0.9),
                              Vote("m3", 2, 0.2)))
        assert mode_with_tiebreak(votes, self.cfg()) == 2

    def test_summed_confidence_breaks_tie(self):
        # classes 0 and 1 tie at two votes; base votes 2; confidences 1.7 vs 1.4
        votes = VoteSet("x", (Vote("B", 2, 0.99), Vote("m1", 0, 0.8), Vote("m2", 0, 0.9),
                              Vote("m3", 1, 0.7), Vote("m4", 1, 0.7)))
        assert mode_with_tiebreak(votes, self.cfg()) == 0
        swapped = VoteSet("x", (Vote("B", 2, 0.99), Vote("m1", 1, 0.8), Vote("m2", 1, 0.9),
                                Vote("m3", 0, 0.7), Vote("m4", 0, 0.7)))
        assert mode_with_tiebreak(swapped, self.cfg()) == 1

    def test_lowest_index_last(self):
        votes = VoteSet("x", (Vote("B", 5, 0.9), Vote("m1", 3, 0.5), Vote("m2", 1, 0.5),
                              Vote("m3", 3, 0.25), Vote("m4", 1, 0.25)))
        assert mode_with_tiebreak(votes, self.cfg()) == 1

    def test_cascade_is_configurable(self):
        votes = VoteSet("x", (Vote("B", 2, 0.1), Vote("m1", 1, 0.9)))
        cfg = EnsembleConfig("B", tie_break=("lowest-index",))
        assert mode_with_tiebreak(votes, cfg) == 1

    def test_voteset_validation(self):
        with pytest.raises(EmptyModelSetError):
            VoteSet("x", ())
        with pytest.raises(ValueError):
            VoteSet("x", (Vote("a", 1, 0.5), Vote("a", 2, 0.5)))

    def test_deterministic_under_vote_order(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            votes = [Vote(f"m{i}", int(rng.integers(3)), float(rng.random())) for i in range(7)]
            cfg = EnsembleConfig("m0")
            a = mode_with_tiebreak(VoteSet("x", tuple(votes)), cfg)
            b = mode_with_tiebreak(VoteSet("x", tuple(reversed(votes))), cfg)
            assert a == b


class TestPluralityVote:
    def test_threshold_extremes(self):
        models = random_models(np.random.default_rng(1), 5, 30, 4)
        base = [r.predicted_class for r in models["model2"]]
        never = plurality_vote(models, EnsembleConfig("model2", threshold=0.0))
        assert [f.predicted_class for f in never] == base
        assert {f.source for f in never} == {"base"}
        always = plurality_vote(models, EnsembleConfig("model2", threshold=1.01))
        assert {f.source for f in always} == {"vote"}
        for j, f in enumerate(always):
            votes = VoteSet(f.item_id, tuple(Vote(mid, recs[j].predicted_class, recs[j].confidence)
                                             for mid, recs in models.items()))
            assert f.predicted_class == mode_with_tiebreak(votes, EnsembleConfig("model2"))

    def test_ten_model_fixture(self):
        # item 0: confident base; item 1: 6-4 vote for A; item 2: 5-5 tie, base votes B
        A, B, C = 0, 1, 2
        base_confs = [0.9, 0.6, 0.6]
        base_votes = [C, B, B]
        others = [
            [A] * 9,
            [A] * 6 + [B] * 3,
            [A] * 5 + [B] * 4,
        ]
        models = {"B7": [rec(f"t{j}", base_votes[j], base_confs[j]) for j in range(3)]}
        for i in range(9):
            models[f"m{i}"] = [rec(f"t{j}", others[j][i], 0.8) for j in range(3)]
        fused = plurality_vote(models, EnsembleConfig("B7", threshold=0.7))
        assert [(f.predicted_class, f.source) for f in fused] == [(C, "base"), (A, "vote"), (B, "vote")]
        brute = plurality_vote_bruteforce("B7", as_tuples(models), 0.7)
        assert [(f.item_id, f.predicted_class, f.source) for f in fused] == brute

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(2024)
        mismatches = 0
        for _ in range(300):
            m, n, c = int(rng.integers(1, 11)), int(rng.integers(1, 101)), int(rng.integers(2, 21))
            models = random_models(rng, m, n, c)
            base = f"model{int(rng.integers(m))}"
            tau = float(rng.uniform(0, 1.05))
            fused = plurality_vote(models, EnsembleConfig(base, threshold=tau))
            brute = plurality_vote_bruteforce(base, as_tuples(models), tau)
            mismatches += [tuple(f) for f in fused] != brute
        assert mismatches == 0

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(5)
        models = random_models(rng, 6, 100, 5)
        for _ in range(20):
            t1, t2 = sorted(rng.uniform(0, 1, size=2))
            lo = plurality_vote(models, EnsembleConfig("model0", threshold=t1))
            hi = plurality_vote(models, EnsembleConfig("model0", threshold=t2))
            for base_rec, a, b in zip(models["model0"], lo, hi):
                if not t1 <= base_rec.confidence < t2:
                    assert a == b

    def test_errors(self):
        models = {"a": [rec("x", 0, 0.5)], "b": [rec("y", 0, 0.5)]}
        with pytest.raises(MisalignedItemsError):
            plurality_vote(models, EnsembleConfig("a"))
        with pytest.raises(MisalignedItemsError):
            plurality_vote({"a": [rec("x", 0, 0.5)], "b": []}, EnsembleConfig("a"))
        with pytest.raises(EmptyModelSetError):
            plurality_vote({}, EnsembleConfig("a"))
        with pytest.raises(KeyError):
            plurality_vote({"a": [rec("x", 0, 0.5)]}, EnsembleConfig("zzz"))

    def test_defaults(self):
        cfg = EnsembleConfig("b")
        assert cfg.threshold == 0.7
        assert cfg.tie_break == ("base-first", "max-summed-confidence", "lowest-index")


class TestSoftVote:
    def test_examples(self):
        v = np.array([0.2, 0.3, 0.5])
        np.testing.assert_array_equal(soft_vote([v, v, v]), v)
        np.testing.assert_array_equal(soft_vote([[1.0, 0.0], [0.0, 1.0]]), [0.5, 0.5])

    def test_random_against_fsum(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            ps = [p / p.sum() for p in rng.random((3, 8))]
            oracle = np.array([math.fsum(p[i] for p in reversed(ps)) / 3 for i in range(8)])
            np.testing.assert_allclose(soft_vote(ps), oracle, rtol=0, atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(2, 6), st.integers(0, 2**32))
    def test_permutation_invariant(self, k, c, seed):
        rng = np.random.default_rng(seed)
        ps = [p / p.sum() for p in rng.random((k, c)) + 1e-3]
        perm = rng.permutation(k)
        a, b = soft_vote(ps), soft_vote([ps[i] for i in perm])
        np.testing.assert_array_equal(a, b)
        assert abs(a.sum() - 1) < 1e-12

    def test_errors(self):
        with pytest.raises(EmptyModelSetError):
            soft_vote([])
        with pytest.raises(DimensionMismatchError):
            soft_vote([[0.5, 0.5], [1.0, 0.0, 0.0]])


class TestTta:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.params = init_params(4 * 4 * 3, 3, (8,), 1)
        self.items = [(f"i{j}", ImageU8.from_array(rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)))
                      for j in range(5)]

    def test_identity_single_replicate(self):
        identity = AugmentPolicy(0, 0.5, 3)
        for item in self.items:
            assert tta_predict(self.params, item, identity, 1) == predict(self.params, [item])[0]

    def test_deterministic(self):
        pol = AugmentPolicy(2, 0.8, 17)
        a = [tta_predict(self.params, it, pol, 5) for it in self.items]
        b = tta_predict_many(self.params, self.items, pol, 5)
        assert a == b
        assert a != predict(self.params, self.items)

    def test_constant_model(self):
        arrays = self.params.arrays()
        arrays[0] = np.zeros_like(arrays[0])  # f ignores its input
        const = self.params.with_arrays(arrays)
        pol = AugmentPolicy(3, 1.0, 9)
        for item in self.items:
            got = tta_predict(const, item, pol, 5)
            want = predict(const, [item])[0]
            assert got.predicted_class == want.predicted_class
            np.testing.assert_allclose(got.probs, want.probs, rtol=0, atol=1e-15)

    def test_replicates_differ(self):
        pols = replicate_policies(AugmentPolicy(2, 0.5, 1), 4)
        assert len({p.seed for p in pols}) == 4

    def test_bad_replicate_count(self):
        with pytest.raises(ValueError):
            tta_predict(self.params, self.items[0], AugmentPolicy(), 0)
