import gzip
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavehdnn import data
from wavehdnn.data import (DataError, MalformedLineError, RawInteractions, compute_stats,
                           load_interactions, remap_and_split, split_sizes)


def _write(tmp_path, text, name="x.tsv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLoad:
    def test_duplicates_dropped(self, tmp_path):
        raw = load_interactions(_write(tmp_path, "u1\ti1\nu1\ti1\nu2\ti1\n"))
        assert raw.pairs == [("u1", "i1"), ("u2", "i1")]

    def test_empty_file(self, tmp_path):
        with pytest.raises(DataError, match="no interactions"):
            load_interactions(_write(tmp_path, ""))

    def test_missing_tab_reports_line(self, tmp_path):
        with pytest.raises(MalformedLineError) as exc:
            load_interactions(_write(tmp_path, "u1\n"))
        assert exc.value.lineno == 1

    def test_trailing_fields_and_blank_lines(self, tmp_path):
        raw = load_interactions(_write(tmp_path, "a\tb\t5\t123\n\nc\td\n"))
        assert raw.pairs == [("a", "b"), ("c", "d")]

    def test_gzip(self, tmp_path):
        p = tmp_path / "x.tsv.gz"
        with gzip.open(p, "wt", encoding="utf-8") as fh:
            fh.write("u\ti\n")
        assert load_interactions(p).pairs == [("u", "i")]

    def test_missing_file(self, tmp_path):
        with pytest.raises(data.DataLoadError, match="nope"):
            load_interactions(tmp_path / "nope.tsv")


class TestSplit:
    def test_ten_interactions_split_7_1_2(self):
        assert split_sizes(10) == (7, 1, 2)
        raw = RawInteractions([("u", f"i{k}") for k in range(10)], "mem")
        ds = remap_and_split(raw, 0)
        assert (len(ds.train), len(ds.val), len(ds.test)) == (7, 1, 2)

    def test_single_interaction_user_goes_to_train(self):
        ds = remap_and_split(RawInteractions([("u", "i")], "mem"), 3)
        assert (len(ds.train), len(ds.val), len(ds.test)) == (1, 0, 0)

    def test_ids_by_first_appearance(self):
        raw = RawInteractions([("b", "y"), ("a", "x"), ("b", "x")], "mem")
        ds = remap_and_split(raw, 0)
        assert ds.user_tokens == ("b", "a")
        assert ds.item_tokens == ("y", "x")

    def test_deterministic_archive(self, tmp_path):
        rng = np.random.default_rng(0)
        raw = RawInteractions([(f"u{rng.integers(30)}", f"i{rng.integers(40)}") for _ in range(400)], "m")
        raw = RawInteractions(list(dict.fromkeys(raw.pairs)), "m")
        a = data.write_archive(remap_and_split(raw, 7), tmp_path / "a")
        b = data.write_archive(remap_and_split(raw, 7), tmp_path / "b")
        for name in data.ARCHIVE_FILES:
            assert (a / name).read_bytes() == (b / name).read_bytes()
        back = data.read_archive(a)
        assert data.fingerprint(back) == data.fingerprint(remap_and_split(raw, 7))

    @pytest.mark.parametrize("n", range(1, 40))
    def test_split_size_rule(self, n):
        a, b, c = split_sizes(n)
        assert a + b + c == n
        if n >= 3:
            assert a == math.ceil(round(0.7 * n, 9)) and b == min(math.ceil(round(0.1 * n, 9)), n - a)


@st.composite
def raw_interactions(draw):
    n_users = draw(st.integers(1, 12))
    n_items = draw(st.integers(1, 12))
    pairs = draw(st.lists(st.tuples(st.integers(0, n_users - 1), st.integers(0, n_items - 1)),
                          min_size=1, max_size=80, unique=True))
    return RawInteractions([(f"u{u}", f"i{i}") for u, i in pairs], "hyp")


@settings(max_examples=60, deadline=None)
@given(raw_interactions(), st.integers(0, 2**31 - 1))
def test_split_partitions_input(raw, seed):
    ds = remap_and_split(raw, seed)
    sets = [set(map(tuple, a.tolist())) for a in (ds.train, ds.val, ds.test)]
    assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
    users = {t: k for k, t in enumerate(ds.user_tokens)}
    items = {t: k for k, t in enumerate(ds.item_tokens)}
    expected = {(users[u], items[i]) for u, i in raw.pairs}
    assert sets[0] | sets[1] | sets[2] == expected
    assert set(ds.train[:, 0].tolist()) == set(range(ds.num_users))
    again = remap_and_split(raw, seed)
    assert all(np.array_equal(x, y) for x, y in ((ds.train, again.train), (ds.val, again.val), (ds.test, again.test)))


def test_train_ratio_for_heavy_users():
    rng = np.random.default_rng(5)
    pairs = []
    for u in range(200):
        for i in rng.choice(300, size=rng.integers(10, 60), replace=False):
            pairs.append((f"u{u}", f"i{i}"))
    ds = remap_and_split(RawInteractions(pairs, "m"), 1)
    ratio = len(ds.train) / len(pairs)
    assert 0.65 <= ratio <= 0.75


class TestStats:
    def test_complete_bipartite(self):
        ds = data.from_splits(2, 2, [(0, 0), (0, 1), (1, 0), (1, 1)])
        assert compute_stats(ds).density == 1.0

    @pytest.mark.parametrize("users,items,n,density,shown", [
        (11000, 9332, 200860, 1.956e-3, "1.9e-03"),
        (23310, 5237, 525922, 4.31e-3, "4.3e-03"),
        (11091, 11010, 277535, 2.27e-3, "2.2e-03"),
    ])
    def test_published_rows(self, users, items, n, density, shown):
        st_ = data.stats_from_counts(users, items, n)
        assert st_.density == pytest.approx(density, rel=2e-3)
        assert data.format_density(st_.density) == shown
