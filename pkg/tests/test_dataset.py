import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairneg.dataset import (DataError, GroupMap, InteractionTable, SyntheticSpec, filter_attributes, group_stats,
                             load_interactions, load_item_attributes, load_prepared, reindex, save_prepared, split,
                             synthesize)


class TestLoadInteractions:
    def test_movielens_line(self, tmp_path):
        f = tmp_path / "ratings.dat"
        f.write_text("1::1193::5::978300760\n")
        assert load_interactions(f) == [("1", "1193")]

    def test_empty_file(self, tmp_path):
        f = tmp_path / "empty.dat"
        f.write_text("")
        assert load_interactions(f) == []

    def test_duplicates_pass_through(self, tmp_path):
        f = tmp_path / "r.dat"
        f.write_text("1::5::3::0\n1::5::4::1\n")
        assert load_interactions(f) == [("1", "5"), ("1", "5")]

    def test_custom_separator_and_columns(self, tmp_path):
        f = tmp_path / "r.csv"
        f.write_text("5,1,4.0\n6,2,3.0\n")
        assert load_interactions(f, sep=",", user_col=1, item_col=0) == [("1", "5"), ("2", "6")]

    def test_malformed_reports_line(self, tmp_path):
        f = tmp_path / "r.dat"
        f.write_text("1::2::5\n\n3\n")
        with pytest.raises(DataError, match=":3:"):
            load_interactions(f)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_interactions(tmp_path / "nope.dat")


class TestAttributes:
    def test_multi_label_split(self, tmp_path):
        f = tmp_path / "movies.dat"
        f.write_text("1::Alien (1979)::Horror|Sci-Fi\n2::Heat (1995)::Action\n")
        recs = load_item_attributes(f, sep="::", item_col=0, label_col=2, label_sep="|")
        assert recs == [("1", ("Horror", "Sci-Fi")), ("2", ("Action",))]

    def test_filter_keeps_single_selected_label(self):
        recs = [("1", ("Horror", "Sci-Fi")), ("2", ("Action", "Horror")), ("3", ("Drama",))]
        assert filter_attributes(recs, ["Sci-Fi", "Horror"]) == [("2", "Horror")]

    def test_filter_error_policy(self):
        with pytest.raises(DataError):
            filter_attributes([("1", ("Horror", "Sci-Fi"))], ["Sci-Fi", "Horror"], multi_label="error")

    def test_empty_filter_rejected(self):
        with pytest.raises(DataError):
            filter_attributes([("1", ("Horror",))], [])


class TestReindex:
    def test_dedup_hand_trace(self):
        table, groups = reindex([(10, 5), (10, 5), (7, 5)], [(5, "Horror")])
        assert (table.num_users, table.num_items, len(table)) == (2, 1, 2)
        assert groups.A == 1 and groups.group_labels == ("Horror",)

    def test_first_appearance_order(self):
        table, groups = reindex([("u2", "b"), ("u1", "a"), ("u2", "a")], [("a", "x"), ("b", "y"), ("c", "x")])
        assert table.users.tolist() == [0, 1, 0]
        assert table.items.tolist() == [0, 1, 1]
        # "c" is attribute-only and appended to the catalog
        assert table.num_items == 3
        assert groups.item_group.tolist() == [1, 0, 0]

    def test_missing_attribute_lists_item(self):
        with pytest.raises(DataError, match="i9"):
            reindex([("u", "i9")], [("i1", "x")])

    def test_conflicting_attribute(self):
        with pytest.raises(DataError, match="conflicting"):
            reindex([("u", "i1")], [("i1", "x"), ("i1", "y")])

    def test_label_order(self):
        _, groups = reindex([("u", "i1"), ("u", "i2")], [("i1", "Sci-Fi"), ("i2", "Horror")],
                            label_order=["Sci-Fi", "Horror"])
        assert groups.group_labels == ("Sci-Fi", "Horror")
        assert groups.item_group.tolist() == [0, 1]


class TestTable:
    def test_positive_negative_partition(self, toy_table):
        for u in range(toy_table.num_users):
            pos, neg = toy_table.positives(u), toy_table.negatives(u)
            assert pos.size + neg.size == toy_table.num_items
            assert not set(pos) & set(neg)

    def test_union_of_positives(self, toy_table):
        pairs = {(u, int(i)) for u in range(3) for i in toy_table.positives(u)}
        assert pairs == {(x.user, x.item) for x in toy_table.interactions}

    def test_out_of_range_rejected(self):
        with pytest.raises(DataError):
            InteractionTable.from_pairs([(0, 5)], 1, 5)

    def test_empty_group_rejected(self):
        with pytest.raises(DataError):
            GroupMap(np.array([0, 0]), ("a", "b"))


class TestSplit:
    def test_ten_interactions(self):
        t = InteractionTable.from_pairs([(u, i) for u in range(2) for i in range(5)], 2, 5)
        assert split(t, 7).sizes() == (6, 2, 2)

    def test_ml1m2_size_rule(self):
        n = 194_610
        t = InteractionTable(np.zeros(n, dtype=np.int64), np.arange(n), 1, n)
        assert split(t, 0).sizes() == (116_766, 38_922, 38_922)

    def test_deterministic(self, small_data):
        _, _, table = small_data
        a, b = split(table, 5), split(table, 5)
        assert a.manifest() == b.manifest()

    def test_seed_changes_membership_not_sizes(self, small_data):
        _, _, table = small_data
        a, b = split(table, 1), split(table, 2)
        assert a.sizes() == b.sizes()
        assert a.test.digest() != b.test.digest()

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            split(InteractionTable.from_pairs([], 1, 1), 0)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 400), seed=st.integers(0, 2**31))
    def test_partition_property(self, n, seed):
        rng = np.random.default_rng(n)
        flat = rng.choice(50 * 50, size=min(n, 2500), replace=False)
        t = InteractionTable(flat // 50, flat % 50, 50, 50)
        s = split(t, seed)
        parts = [set(zip(p.users.tolist(), p.items.tolist())) for p in (s.train, s.validation, s.test)]
        assert sum(len(p) for p in parts) == len(t)
        assert set().union(*parts) == set(zip(t.users.tolist(), t.items.tolist()))
        n_hold = int(np.floor(0.2 * len(t)))
        assert s.sizes() == (len(t) - 2 * n_hold, n_hold, n_hold)


class TestGroupStats:
    def test_single_group_equals_totals(self, toy_table):
        stats = group_stats(toy_table, GroupMap(np.zeros(5, dtype=np.int64), ("all",)))
        assert [(s.n_items, s.n_feedback) for s in stats] == [(5, len(toy_table))]

    def test_balanced_symmetric(self):
        t = InteractionTable.from_pairs([(0, 0), (0, 2), (1, 1), (1, 3)], 2, 4)
        stats = group_stats(t, GroupMap(np.array([0, 1, 0, 1]), ("a", "b")))
        assert stats[0].n_items == stats[1].n_items and stats[0].n_feedback == stats[1].n_feedback

    def test_partition_of_totals(self, small_data):
        _, groups, table = small_data
        stats = group_stats(table, groups)
        assert sum(s.n_feedback for s in stats) == len(table)
        assert sum(s.n_items for s in stats) == table.num_items


class TestSynthetic:
    def test_reproducible(self):
        spec = SyntheticSpec(num_users=30, num_items=20, seed=4)
        a, ga = synthesize(spec)
        b, gb = synthesize(spec)
        assert a.digest() == b.digest() and ga.digest() == gb.digest()

    def test_feedback_share_is_imbalanced(self):
        spec = SyntheticSpec(num_users=400, num_items=100, density=0.1, feedback_share=(0.8, 0.2), seed=0)
        table, groups = synthesize(spec)
        share = np.bincount(groups.item_group[table.items]) / len(table)
        assert abs(share[0] - 0.8) < 0.02


class TestPreparedRoundTrip:
    def test_round_trip_and_hash_check(self, tmp_path, small_data):
        data, groups, table = small_data
        manifest = save_prepared(data, groups, table, tmp_path)
        back, g2, m2 = load_prepared(tmp_path)
        assert m2 == json.loads(json.dumps(manifest))
        assert back.train.digest() == data.train.digest()
        assert g2.digest() == groups.digest()

        lines = (tmp_path / "test.tsv").read_text().splitlines()
        (tmp_path / "test.tsv").write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(DataError, match="hash"):
            load_prepared(tmp_path)
