import itertools

import numpy as np
import pytest
from scipy import stats

from analogylab.corpus import SplitSpec, make_splits
from analogylab.errors import ExhaustionError, ValidationError
from analogylab.quadruples import (
    AnalogyType,
    Pool,
    count_positive_analogies,
    is_valid_analogy,
    iter_analogy_types,
    read_batch_csv,
    sample_batch,
    sample_negative_hard,
    sample_negative_random,
    sample_positive,
    valid_analogy_mask,
    write_batch_csv,
)


def brute_force_count(nc, np_):
    """Count valid label quadruples by enumerating every (c, p)^4 combination."""
    cells = np.array([(c, p) for c in range(nc) for p in range(np_)])
    n = len(cells)
    grids = np.meshgrid(*[np.arange(n, dtype=np.int32)] * 4, indexing="ij", sparse=True)
    cats = [cells[g, 0] for g in grids]
    props = [cells[g, 1] for g in grids]
    cats = np.stack(np.broadcast_arrays(*cats), axis=-1)
    props = np.stack(np.broadcast_arrays(*props), axis=-1)
    return int(valid_analogy_mask(cats, props).sum())


def _grid_pool(nc, np_, ne=1):
    cat = np.repeat(np.arange(nc), np_ * ne)
    prop = np.tile(np.repeat(np.arange(np_), ne), nc)
    return Pool(np.arange(cat.size), cat, prop)


class TestValidity:
    def test_canonical_form(self):
        assert is_valid_analogy([(1, 1), (1, 2), (2, 1), (2, 2)])

    def test_same_category(self):
        assert not is_valid_analogy([(1, 1), (1, 2), (1, 1), (1, 2)])

    def test_same_property(self):
        assert not is_valid_analogy([(1, 1), (1, 1), (2, 1), (2, 1)])

    def test_vectorised_matches_scalar(self):
        labels = [(c, p) for c in range(3) for p in range(3)]
        quads = list(itertools.product(labels, repeat=4))
        arr = np.array(quads)
        mask = valid_analogy_mask(arr[..., 0], arr[..., 1])
        assert mask.tolist() == [is_valid_analogy(q) for q in quads]


class TestCounting:
    def test_large_grid_follows_product_formula(self):
        # 999,240 is often quoted for this grid; the product formula gives 239,760,000
        assert count_positive_analogies(1000, 16) == 499_500 * 120 * 4 == 239_760_000

    def test_two_by_two(self):
        labels = [(c, p) for c in range(2) for p in range(2)]
        n = sum(is_valid_analogy(q) for q in itertools.product(labels, repeat=4))
        assert n == 4 == count_positive_analogies(2, 2)

    def test_ten_by_four(self):
        assert brute_force_count(10, 4) == 1080 == count_positive_analogies(10, 4)

    @pytest.mark.parametrize("nc", range(2, 9))
    def test_brute_force_agreement(self, nc):
        for np_ in range(2, 9):
            assert count_positive_analogies(nc, np_) == brute_force_count(nc, np_)

    def test_type_enumeration(self):
        assert len(list(iter_analogy_types(range(5), range(4)))) == count_positive_analogies(5, 4)

    def test_too_small(self):
        with pytest.raises(ValidationError):
            count_positive_analogies(1, 5)


class TestPositiveSampler:
    def test_sweep(self, default_corpus, default_splits):
        pool = Pool.from_corpus(default_corpus, default_splits.train)
        reg = default_splits.heldout_types
        rng = np.random.default_rng(0)
        for _ in range(100_000):
            q = sample_positive(rng, pool, reg)
            labels = pool.quad_labels(q)
            assert is_valid_analogy(labels) and q.y == 1
            assert AnalogyType(labels[0][0], labels[2][0], labels[0][1], labels[1][1]) not in reg

    def test_all_types_held_out(self):
        pool = _grid_pool(2, 2)
        reg = frozenset(iter_analogy_types(range(2), range(2)))
        with pytest.raises(ExhaustionError):
            sample_positive(np.random.default_rng(0), pool, reg)

    def test_single_admissible_type(self):
        pool = _grid_pool(2, 2, ne=3)
        allowed = AnalogyType(0, 1, 0, 1)
        reg = frozenset(t for t in iter_analogy_types(range(2), range(2)) if t != allowed)
        rng = np.random.default_rng(0)
        for _ in range(50):
            q = sample_positive(rng, pool, reg)
            assert [pool.labels(i) for i in q.images] == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_type_distribution_uniform(self):
        pool = _grid_pool(3, 3)
        rng = np.random.default_rng(1)
        types = list(iter_analogy_types(range(3), range(3)))
        counts = dict.fromkeys(types, 0)
        for _ in range(36_000):
            lab = pool.quad_labels(sample_positive(rng, pool))
            counts[AnalogyType(lab[0][0], lab[2][0], lab[0][1], lab[1][1])] += 1
        assert stats.chisquare(list(counts.values())).pvalue > 0.01


class TestRandomNegative:
    def test_sweep(self, default_corpus, default_splits):
        pool = Pool.from_corpus(default_corpus, default_splits.train)
        rng = np.random.default_rng(1)
        for _ in range(100_000):
            q = sample_negative_random(rng, pool)
            assert q.y == 0 and not is_valid_analogy(pool.quad_labels(q))

    def test_single_cell_pool(self):
        pool = Pool(np.arange(4), np.zeros(4, int), np.zeros(4, int))
        q = sample_negative_random(np.random.default_rng(0), pool)
        assert q.y == 0

    def test_marginals_uniform(self):
        pool = _grid_pool(4, 3)
        rng = np.random.default_rng(2)
        counts = np.zeros((4, len(pool)), dtype=int)
        for _ in range(24_000):
            q = sample_negative_random(rng, pool)
            for slot, i in enumerate(q.images):
                counts[slot, i] += 1
        for slot in range(4):
            assert stats.chisquare(counts[slot]).pvalue > 0.01


class TestHardNegative:
    def test_sweep(self, default_corpus, default_splits):
        pool = Pool.from_corpus(default_corpus, default_splits.train)
        rng = np.random.default_rng(2)
        for _ in range(100_000):
            q = sample_negative_hard(rng, pool, default_splits.heldout_types)
            assert q.y == 0 and not is_valid_analogy(pool.quad_labels(q))

    def test_one_slot_broken_by_one_label(self, small_corpus):
        pool = Pool.from_corpus(small_corpus, np.arange(len(small_corpus)))
        rng = np.random.default_rng(3)
        for _ in range(5000):
            (ci, p1), (ci2, p2), (c3, p3), (c4, p4) = pool.quad_labels(sample_negative_hard(rng, pool))
            assert ci == ci2 and p1 != p2
            if c3 == c4:
                # property swap: exactly one of I3, I4 left the {p_1, p_2} pair
                assert c3 != ci
                assert (p3 == p1) != (p4 == p2)
                assert (p3 if p4 == p2 else p4) not in (p1, p2)
            else:
                # category swap: properties intact, both categories differ from c_i
                assert (p3, p4) == (p1, p2) and ci not in (c3, c4)

    def test_two_by_two_exhausted(self):
        with pytest.raises(ExhaustionError):
            sample_negative_hard(np.random.default_rng(0), _grid_pool(2, 2))

    def test_falls_back_when_one_swap_impossible(self):
        rng = np.random.default_rng(5)
        for pool in (_grid_pool(2, 3), _grid_pool(3, 2)):
            for _ in range(200):
                assert not is_valid_analogy(pool.quad_labels(sample_negative_hard(rng, pool)))


class TestBatch:
    def _pool(self, small_corpus):
        return Pool.from_corpus(small_corpus, np.arange(len(small_corpus)))

    def test_proportions(self, small_corpus, rng):
        b = sample_batch(rng, self._pool(small_corpus), 8, 0.5, 0.5)
        assert len(b) == 8 and sum(q.y for q in b) == 4

    def test_all_positive(self, small_corpus, rng):
        assert all(q.y == 1 for q in sample_batch(rng, self._pool(small_corpus), 7, 1.0))

    def test_no_hard_means_random_only(self, small_corpus, monkeypatch):
        import analogylab.quadruples as qmod

        def boom(*a, **k):
            raise AssertionError("hard sampler used")

        monkeypatch.setattr(qmod, "sample_negative_hard", boom)
        b = qmod.sample_batch(np.random.default_rng(0), self._pool(small_corpus), 10, 0.5, 0.0)
        assert sum(q.y == 0 for q in b) == 5

    def test_soundness_and_hygiene(self, default_corpus, default_splits):
        pool = Pool.from_corpus(default_corpus, default_splits.train)
        reg = default_splits.heldout_types
        rng = np.random.default_rng(6)
        for _ in range(200):
            for q in sample_batch(rng, pool, 32, registry=reg):
                lab = pool.quad_labels(q)
                assert is_valid_analogy(lab) == bool(q.y)
                if q.y:
                    assert AnalogyType(lab[0][0], lab[2][0], lab[0][1], lab[1][1]) not in reg

    def test_deterministic(self, small_corpus):
        pool = self._pool(small_corpus)
        a = [sample_batch(np.random.default_rng(9), pool, 16) for _ in range(2)]
        assert a[0] == a[1]

    def test_bad_size(self, small_corpus, rng):
        with pytest.raises(ValidationError):
            sample_batch(rng, self._pool(small_corpus), 0)

    def test_csv_round_trip(self, small_corpus, rng, tmp_path):
        b = sample_batch(rng, self._pool(small_corpus), 12)
        path = tmp_path / "batch.csv"
        write_batch_csv(b, path)
        assert path.read_text().splitlines()[0] == "i1,i2,i3,i4,y"
        assert read_batch_csv(path) == b


def test_training_pool_excludes_unseen(default_corpus):
    s = make_splits(default_corpus, SplitSpec(unseen_category_ids=frozenset({1, 2})))
    pool = Pool.from_corpus(default_corpus, s.train)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        q = sample_positive(rng, pool)
        assert not {pool.labels(i)[0] for i in q.images} & {1, 2}
