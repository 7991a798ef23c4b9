from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairneg.backbone import EmbeddingModel, init_xavier
from fairneg.dataset import DataSplit, GroupMap, InteractionTable, SyntheticSpec, split, synthesize
from fairneg.metrics import (RankedLists, evaluate, f1_at_k, group_recall_at_k, ndcg_at_k, precision_at_k,
                             rank_scores, recall_at_k, recall_avg, recall_disp, recall_min, topk_recommend)


def lists_for(user_items, k):
    users = np.arange(len(user_items))
    items = np.full((len(user_items), k), -1)
    for r, row in enumerate(user_items):
        items[r, :len(row)] = row
    return RankedLists(users, items, np.zeros(items.shape), k)


def fixed_model(scores):
    """Model whose user-u score of item i is ``scores[u][i]`` (identity user factors)."""
    scores = np.asarray(scores, dtype=float)
    return EmbeddingModel(np.eye(scores.shape[0]), scores.T.copy())


class TestRanking:
    def test_mask_and_sort_trace(self):
        items, _ = rank_scores(np.array([[9.0, 5.0, 7.0]]), np.array([[True, False, False]]), 2)
        assert items.tolist() == [[2, 1]]

    def test_tie_break_smallest_index(self):
        items, _ = rank_scores(np.zeros((1, 5)), np.array([[False, True, False, False, False]]), 2)
        assert items.tolist() == [[0, 2]]

    def test_truncated_when_catalog_small(self):
        items, _ = rank_scores(np.zeros((1, 3)), np.array([[True, False, True]]), 3)
        assert items.tolist() == [[1, -1, -1]]

    def test_test_stage_masks_train_and_validation(self):
        tr = InteractionTable.from_pairs([(0, 0)], 1, 4)
        va = InteractionTable.from_pairs([(0, 1)], 1, 4)
        te = InteractionTable.from_pairs([(0, 3)], 1, 4)
        model = fixed_model([[4.0, 3.0, 2.0, 1.0]])
        data = DataSplit(tr, va, te, 0)
        assert topk_recommend(model, data, 2, "test").items.tolist() == [[2, 3]]
        assert topk_recommend(model, data, 2, "validation").items.tolist() == [[1, 2]]

    def test_users_without_test_positives_excluded(self):
        tr = InteractionTable.from_pairs([(0, 0), (1, 0)], 2, 3)
        te = InteractionTable.from_pairs([(1, 2)], 2, 3)
        data = DataSplit(tr, InteractionTable.from_pairs([], 2, 3), te, 0)
        assert topk_recommend(init_xavier(2, 3, 2, 0), data, 2).users.tolist() == [1]


class TestUtility:
    def test_perfect_single_hit(self):
        te = InteractionTable.from_pairs([(0, 7)], 1, 30)
        lists = lists_for([[7] + list(range(8, 27))], 20)
        assert recall_at_k(lists, te, 20) == 1.0
        assert ndcg_at_k(lists, te, 20) == 1.0
        assert precision_at_k(lists, te, 20) == 0.05

    def test_no_hits(self):
        te = InteractionTable.from_pairs([(0, 0)], 1, 5)
        lists = lists_for([[1, 2]], 2)
        assert (recall_at_k(lists, te, 2), precision_at_k(lists, te, 2), ndcg_at_k(lists, te, 2),
                f1_at_k(lists, te, 2)) == (0.0, 0.0, 0.0, 0.0)

    def test_ndcg_hand_example(self):
        te = InteractionTable.from_pairs([(0, 4), (0, 6)], 1, 10)
        lists = lists_for([[4, 1, 6]], 3)
        assert recall_at_k(lists, te, 3) == 1.0
        dcg, idcg = 1 + 1 / np.log2(4), 1 + 1 / np.log2(3)
        assert abs(ndcg_at_k(lists, te, 3) - dcg / idcg) <= 1e-9
        assert abs(dcg / idcg - 0.9198) < 1e-4

    def test_f1_is_harmonic_mean_of_overall(self):
        te = InteractionTable.from_pairs([(0, 0), (0, 1), (1, 2)], 2, 6)
        lists = lists_for([[0, 3], [4, 5]], 2)
        p, r = precision_at_k(lists, te, 2), recall_at_k(lists, te, 2)
        assert f1_at_k(lists, te, 2) == pytest.approx(2 * p * r / (p + r), abs=1e-15)


class TestGroupRecall:
    def test_count_arithmetic(self):
        te = InteractionTable.from_pairs([(0, 0), (0, 1), (1, 2), (1, 3)], 2, 6)
        g = GroupMap(np.array([0, 0, 0, 0, 1, 1]), ("a", "b"))
        lists = lists_for([[0, 4], [5, 4]], 2)
        rec = group_recall_at_k(lists, te, g, 2)
        assert rec[0] == 0.25 and np.isnan(rec[1])

    def test_perfect(self):
        te = InteractionTable.from_pairs([(0, 0), (0, 3)], 1, 4)
        g = GroupMap(np.array([0, 0, 1, 1]), ("a", "b"))
        assert group_recall_at_k(lists_for([[0, 3]], 2), te, g, 2).tolist() == [1.0, 1.0]

    def test_single_user_matches_fraction(self):
        te = InteractionTable.from_pairs([(0, 0), (0, 1), (0, 2), (0, 5)], 1, 6)
        g = GroupMap(np.array([0, 0, 0, 1, 1, 1]), ("a", "b"))
        lists = lists_for([[0, 5, 4]], 3)
        for agg in ("micro", "macro"):
            np.testing.assert_allclose(group_recall_at_k(lists, te, g, 3, agg), [1 / 3, 1.0])

    def test_micro_vs_macro_differ(self):
        te = InteractionTable.from_pairs([(0, 0), (1, 0), (1, 1), (1, 2)], 2, 4)
        g = GroupMap(np.array([0, 0, 0, 1]), ("a", "b"))
        lists = lists_for([[0], [3]], 1)
        assert group_recall_at_k(lists, te, g, 1, "micro")[0] == 0.25
        assert group_recall_at_k(lists, te, g, 1, "macro")[0] == 0.5


class TestDisp:
    def test_equal(self):
        assert (recall_disp([0.4, 0.4]), recall_min([0.4, 0.4]), recall_avg([0.4, 0.4])) == (0.0, 0.4, 0.4)

    def test_hand(self):
        assert abs(recall_disp([0.2, 0.4]) - 1 / 3) < 1e-12

    def test_zero_mean_is_nan(self):
        assert np.isnan(recall_disp([0.0, 0.0]))

    def test_needs_two(self):
        with pytest.raises(ValueError):
            recall_disp([0.3])

    @settings(max_examples=200, deadline=None)
    @given(ha=st.integers(0, 10**6), hb=st.integers(0, 10**6), n=st.integers(1, 10**6), c=st.floats(1e-3, 1e3))
    def test_two_group_closed_form_and_scale(self, ha, hb, n, c):
        # group recalls are hit ratios, so draw them as count fractions
        a, b = min(ha, n) / n, min(hb, n) / n
        if a + b == 0:
            return
        assert abs(recall_disp([a, b]) - abs(a - b) / (a + b)) <= 1e-12
        assert abs(recall_disp([c * a, c * b]) - recall_disp([a, b])) <= 1e-9


@pytest.fixture(scope="module")
def trained():
    spec = SyntheticSpec(num_users=80, num_items=50, density=0.15, feedback_share=(0.7, 0.3), seed=2)
    table, groups = synthesize(spec)
    data = split(table, 1)
    return init_xavier(80, 50, 8, 0), data, groups


class TestReport:
    def test_invariants(self, trained):
        model, data, groups = trained
        rep = evaluate(model, data, groups, 20)
        assert rep.recall_min <= rep.recall_avg and rep.recall_disp >= 0
        assert 0 <= rep.precision <= 1 and 0 <= rep.recall <= 1 and 0 <= rep.ndcg <= 1
        assert rep.csv_header()[:6] == ["Recall-Disp@20", "Recall-Min@20", "Recall-Avg@20", "N@20", "P@20", "R@20"]

    def test_monotone_transform_invariance(self, trained):
        model, data, groups = trained
        base = evaluate(model, data, groups, 10)
        u, i = model.propagate()
        scores = u @ i.T
        # exp is strictly monotone and scores are tie-free here
        squashed = fixed_model(np.exp(scores))
        assert evaluate(squashed, data, groups, 10).to_dict() == base.to_dict()

    def test_json_csv_deterministic(self, trained):
        model, data, groups = trained
        a, b = evaluate(model, data, groups, 20), evaluate(model, data, groups, 20)
        assert a.to_json() == b.to_json() and a.to_csv() == b.to_csv()


def micro_identity_holds(seed):
    """Overall pooled recall equals the feedback-weighted group recalls, in exact arithmetic."""
    rng = np.random.default_rng(seed)
    spec = SyntheticSpec(num_users=int(rng.integers(20, 60)), num_items=int(rng.integers(15, 40)), density=0.2,
                         item_share=tuple(rng.dirichlet(np.ones(3)) + 0.2), seed=seed)
    table, groups = synthesize(spec)
    data = split(table, seed)
    k = int(rng.integers(1, 15))
    model = init_xavier(table.num_users, table.num_items, 4, seed)
    lists = topk_recommend(model, data, k)
    rep = evaluate(model, data, groups, k, lists=lists)

    # independent pooled count straight from the ranked lists
    hits = positives = 0
    for user, row in zip(lists.users, lists.items):
        relevant = set(data.test.positives(user).tolist())
        hits += len(relevant & set(row[row >= 0].tolist()))
        positives += len(relevant)
    weighted = sum(Fraction(n, positives) * Fraction(h, n)
                   for h, n in zip(rep.group_hits, rep.group_positives) if n)
    return weighted == Fraction(hits, positives) and rep.pooled_recall == hits / positives


@pytest.mark.parametrize("seed", range(50))
def test_micro_consistency(seed):
    assert micro_identity_holds(seed)
