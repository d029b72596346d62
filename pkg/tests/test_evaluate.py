import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topical_gibbs import evaluate as ev
from topical_gibbs.errors import DomainError
from topical_gibbs.rng import RngStream

from test_inference import make_record, make_store


class TestPredict:
    def _store_with_rows(self, theta_rows, alphas=None, k=2, p=4):
        recs = []
        for t, theta in enumerate(theta_rows):
            alpha = np.zeros(k) if alphas is None else alphas[t]
            recs.append(make_record(t + 1, [[0.25] * p], [theta], alpha=alpha))
        return make_store(recs, k=k, s=1, p=p)

    def test_zero_coefficients_give_uniform(self):
        store = self._store_with_rows([[0.0, 0.0]] * 3)
        probs = ev.predict_arrays(store, np.zeros((5, 1)),
                                  np.full((5, 4), 0.25))
        assert np.allclose(probs, 0.5, atol=1e-12)

    def test_single_draw_equals_softmax(self):
        alphas = [np.array([0.7, -0.2])]
        store = self._store_with_rows([[0.0, 0.0]], alphas=alphas)
        probs = ev.predict_arrays(store, np.zeros((1, 1)),
                                  np.full((1, 4), 0.25))
        expected = np.exp([0.7, -0.2]) / np.exp([0.7, -0.2]).sum()
        assert np.allclose(probs[0], expected, atol=1e-12)

    def test_jensen_gap_hand_example(self):
        # eta draws (10, 0) and (0, 5): ensemble average of two softmaxes
        alphas = [np.array([10.0, 0.0]), np.array([0.0, 5.0])]
        store = self._store_with_rows([[0.0, 0.0], [0.0, 0.0]], alphas=alphas)
        probs = ev.predict_arrays(store, np.zeros((1, 1)),
                                  np.full((1, 4), 0.25))
        s1 = np.exp([10.0, 0.0]); s1 /= s1.sum()
        s2 = np.exp([0.0, 5.0]); s2 /= s2.sum()
        oracle = (s1 + s2) / 2
        assert np.allclose(probs[0], oracle, atol=1e-12)
        assert probs[0, 0] == pytest.approx(0.503, abs=5e-4)

    def test_rows_sum_to_one_and_class_permutation(self):
        gen = np.random.Generator(np.random.PCG64(3))
        thetas = gen.standard_normal((4, 2))
        store = self._store_with_rows([list(t) for t in thetas])
        vn = gen.dirichlet(np.ones(4), size=6)
        probs = ev.predict_arrays(store, np.zeros((6, 1)), vn)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        # permute classes in every record: predictions permute identically
        for rec in store.records:
            rec.alpha = rec.alpha[::-1].copy()
            rec.beta0_scaled = rec.beta0_scaled[:, ::-1].copy()
            rec.theta_scaled = rec.theta_scaled[:, ::-1].copy()
        probs_perm = ev.predict_arrays(store, np.zeros((6, 1)), vn)
        assert np.allclose(probs_perm, probs[:, ::-1], atol=1e-12)


class TestPrAuc:
    def test_perfect_separation(self):
        curve = ev.pr_auc([0.9, 0.8, 0.2, 0.1], [True, True, False, False])
        assert curve.auc == pytest.approx(1.0)

    def test_hand_average_precision(self):
        curve = ev.pr_auc([0.9, 0.8, 0.7, 0.6], [True, False, True, False])
        assert curve.auc == pytest.approx(5.0 / 6.0, rel=1e-12)
        assert curve.prevalence == pytest.approx(0.5)

    def test_null_score_near_prevalence(self):
        gen = np.random.Generator(np.random.PCG64(4))
        n, prev = 2000, 0.3
        labels = gen.random(n) < prev
        aucs = [ev.pr_auc(gen.random(n), labels).auc for _ in range(100)]
        assert abs(np.mean(aucs) - labels.mean()) < 0.02

    def test_recall_non_decreasing(self):
        gen = np.random.Generator(np.random.PCG64(5))
        curve = ev.pr_auc(gen.random(50), gen.random(50) < 0.4)
        assert np.all(np.diff(curve.recall) >= 0)
        assert 0.0 <= curve.auc <= 1.0

    def test_tie_block_atomicity(self):
        # all scores tied: single block, AP = prevalence exactly
        curve = ev.pr_auc([0.5] * 10, [True] * 3 + [False] * 7)
        assert curve.auc == pytest.approx(0.3)

    def test_one_class_rejected(self):
        with pytest.raises(DomainError):
            ev.pr_auc([0.1, 0.2], [True, True])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6))
    def test_monotone_transform_invariance(self, seed):
        gen = np.random.Generator(np.random.PCG64(seed))
        scores = gen.random(30)
        labels = gen.random(30) < 0.5
        if labels.all() or not labels.any():
            return
        a = ev.pr_auc(scores, labels).auc
        b = ev.pr_auc(np.exp(3 * scores) + 5, labels).auc
        assert a == pytest.approx(b, rel=1e-12)


class TestFolds:
    def test_even_split(self):
        labels = np.zeros(20, dtype=int)
        fa = ev.stratified_folds(labels, folds=10, rng=RngStream(6, 0))
        counts = np.bincount(fa.fold_of, minlength=10)
        assert np.all(counts == 2)

    def test_class_proportions_within_one(self):
        gen = np.random.Generator(np.random.PCG64(7))
        labels = gen.integers(0, 3, size=97)
        fa = ev.stratified_folds(labels, folds=5, rng=RngStream(8, 0))
        for cls in range(3):
            per_fold = np.bincount(fa.fold_of[labels == cls], minlength=5)
            assert per_fold.max() - per_fold.min() <= 1

    def test_fixed_seed_identical(self):
        labels = np.arange(30) % 3
        a = ev.stratified_folds(labels, folds=5, rng=RngStream(9, 0))
        b = ev.stratified_folds(labels, folds=5, rng=RngStream(9, 0))
        assert np.array_equal(a.fold_of, b.fold_of)

    def test_small_class_flagged(self):
        labels = np.array([0] * 20 + [1] * 3)
        fa = ev.stratified_folds(labels, folds=10, rng=RngStream(10, 0))
        assert fa.small_classes == (1,)
        assert np.bincount(fa.fold_of[labels == 1]).max() <= 1


class TestTvDistance:
    def test_identical(self):
        assert ev.tv_distance([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_disjoint(self):
        assert ev.tv_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)

    def test_hand_value(self):
        assert ev.tv_distance([0.5, 0.5, 0.0], [0.25, 0.25, 0.5]) \
            == pytest.approx(0.5)

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            ev.tv_distance([1.0], [0.5, 0.5])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6))
    def test_metric_properties(self, seed):
        gen = np.random.Generator(np.random.PCG64(seed))
        w = gen.dirichlet(np.ones(5), size=3)
        d01 = ev.tv_distance(w[0], w[1])
        d10 = ev.tv_distance(w[1], w[0])
        d02 = ev.tv_distance(w[0], w[2])
        d12 = ev.tv_distance(w[1], w[2])
        assert d01 == pytest.approx(d10, abs=1e-12)
        assert 0.0 <= d01 <= 1.0
        assert d02 <= d01 + d12 + 1e-12


class TestSpearman:
    def test_perfect_agreement(self):
        vals = np.array([0.1, 0.4, 0.2, 0.3])
        assert ev.correlation_report(vals, vals) == pytest.approx(1.0)

    def test_reversed(self):
        vals = np.array([0.1, 0.4, 0.2, 0.3])
        assert ev.correlation_report(vals, -vals) == pytest.approx(-1.0)

    def test_tie_fixture_matches_rank_oracle(self):
        x = np.array([1.0, 2.0, 2.0, 3.0, 4.0])
        y = np.array([2.0, 1.0, 4.0, 3.0, 5.0])

        def avg_ranks(v):
            order = np.argsort(v, kind="stable")
            ranks = np.empty(len(v))
            i = 0
            sv = v[order]
            while i < len(v):
                j = i
                while j + 1 < len(v) and sv[j + 1] == sv[i]:
                    j += 1
                ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
                i = j + 1
            return ranks

        rx, ry = avg_ranks(x), avg_ranks(y)
        oracle = np.corrcoef(rx, ry)[0, 1]
        assert ev.correlation_report(x, y) == pytest.approx(oracle, rel=1e-12)

    def test_constant_is_flagged_nan(self):
        assert math.isnan(ev.correlation_report([1.0, 1.0, 1.0],
                                                [0.3, 0.2, 0.5]))

    def test_too_few_pairs(self):
        with pytest.raises(DomainError):
            ev.correlation_report([1.0, 2.0], [2.0, 1.0])


@pytest.mark.slow
class TestCrossValidate:
    def _tiny(self, seed=31):
        from topical_gibbs.data import SimConfig, simulate_dataset
        from topical_gibbs.sampler import FitConfig
        from topical_gibbs.topics import TopicHyper

        cfg = SimConfig(n_tumors=90, n_classes=3, n_topics=3,
                        n_categories=10, burden_low=30, burden_high=60,
                        separation=4.0)
        ds, md, _ = simulate_dataset(cfg, RngStream(seed, 0))
        fit_cfg = FitConfig(iterations=40, burn_in=10, topic_update_every=5,
                            thin=5, seed=5, screen_cap=4,
                            topic=TopicHyper(n_topics=3), map_cv_folds=3,
                            map_grid_points=5, map_max_iter=60)
        return ds, md, fit_cfg

    def test_same_seed_identical_tables(self):
        ds, md, fit_cfg = self._tiny()
        rows_a = ev.cross_validate(ds, md, fit_cfg, folds=3, replications=2,
                                   rng=RngStream(77, 0))
        rows_b = ev.cross_validate(ds, md, fit_cfg, folds=3, replications=2,
                                   rng=RngStream(77, 0))
        assert [(r.replication, r.class_name, r.pr_auc) for r in rows_a] \
            == [(r.replication, r.class_name, r.pr_auc) for r in rows_b]

    def test_table_structure_and_sd(self, tmp_path):
        ds, md, fit_cfg = self._tiny(seed=32)
        rows = ev.cross_validate(ds, md, fit_cfg, folds=3, replications=2,
                                 rng=RngStream(78, 0))
        macro = [r for r in rows if r.class_name == "__macro__"
                 and r.fold_set == "mean"]
        assert len(macro) == 1 and not math.isnan(macro[0].sd)
        path = ev.write_cv_tsv(rows, str(tmp_path / "cv.tsv"))
        text = open(path).read()
        assert text.startswith("replication\t")
