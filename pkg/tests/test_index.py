import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from basketrec.index import (
    CatalogIndex,
    IndexParams,
    build_catalog,
    build_graph,
    catalog_vectors,
    load_index,
    make_query_vector,
    make_query_vector_anonymous,
    make_query_vector_asymmetric,
    read_index_header,
    save_index,
    search_graph,
)
from basketrec.model import TripleModel, cohesion_score, symmetric_score
from basketrec.synthetic import random_model


def brute_force(scores, k, exclude=()):
    ids = [j for j in range(len(scores)) if j not in set(exclude)]
    return sorted(ids, key=lambda j: (-scores[j], j))[:k]


class TestQueryVectors:
    def test_known_rows(self):
        P = np.array([[1.0, 2.0], [3.0, 4.0]])
        Q = np.array([[5.0, 6.0], [7.0, 8.0]])
        H = np.array([[9.0, 10.0]])
        m = TripleModel(P, Q, H)
        np.testing.assert_array_equal(make_query_vector(m, 0, 1).values, [3, 4, 9, 10, 7, 8, 9, 10])
        np.testing.assert_array_equal(catalog_vectors(m)[1], [7, 8, 7, 8, 3, 4, 3, 4])
        np.testing.assert_array_equal(make_query_vector_asymmetric(m, 0, 1).values, [3, 4, 9, 10])
        np.testing.assert_array_equal(catalog_vectors(m, "asymmetric")[0], [5, 6, 5, 6])

    @pytest.mark.parametrize("d", [1, 3, 16])
    def test_lengths(self, d):
        m = random_model(4, 2, d)
        assert make_query_vector(m, 1, 2).values.shape == (4 * d,)
        assert make_query_vector_anonymous(m, 2).values.shape == (4 * d,)
        assert make_query_vector_asymmetric(m, None, 2).values.shape == (2 * d,)

    def test_symmetric_dot_term_by_term(self):
        m = random_model(10, 3, 5, seed=1)
        cat = catalog_vectors(m)
        for u, i in [(0, 0), (2, 7), (1, 4)]:
            q = make_query_vector(m, u, i).values
            for j in range(10):
                expected = m.P[i] @ m.Q[j] + m.H[u] @ m.Q[j] + m.Q[i] @ m.P[j] + m.H[u] @ m.P[j]
                assert q @ cat[j] == pytest.approx(expected, rel=1e-12, abs=1e-12)

    def test_anonymous_dot_and_ranking(self):
        m = random_model(20, 3, 4, seed=2)
        idx = build_catalog(m, "exact")
        for i in range(20):
            q = make_query_vector_anonymous(m, i)
            scores = [m.P[i] @ m.Q[j] + m.Q[i] @ m.P[j] for j in range(20)]
            np.testing.assert_allclose(catalog_vectors(m) @ q.values, scores, rtol=1e-12, atol=1e-12)
            assert [j for j, _ in idx.topk(q, 5)] == brute_force(scores, 5)

    def test_anonymous_self_score_tied_duals(self):
        m = random_model(3, 1, 4, seed=3)
        m.Q = m.P.copy()
        q = make_query_vector_anonymous(m, 1).values
        assert q @ catalog_vectors(m)[1] == pytest.approx(2 * m.P[1] @ m.P[1])

    def test_asymmetric_identity_and_argmax(self):
        m = random_model(20, 4, 4, seed=4)
        cat = catalog_vectors(m, "asymmetric")
        for u in range(4):
            for i in range(20):
                dots = cat @ make_query_vector_asymmetric(m, u, i).values
                s = np.array([cohesion_score(m, u, i, j) for j in range(20)])
                np.testing.assert_allclose(dots, s - m.P[i] @ m.H[u], rtol=1e-10, atol=1e-12)
                assert np.argmax(dots) == np.argmax(s)

    def test_asymmetric_zero_user(self):
        m = random_model(8, 2, 3, seed=5)
        m.H[:] = 0
        dots = catalog_vectors(m, "asymmetric") @ make_query_vector_asymmetric(m, 1, 3).values
        np.testing.assert_allclose(dots, m.Q @ m.P[3], rtol=1e-12)

    def test_unknown_ids(self):
        m = random_model(3, 1, 2)
        with pytest.raises(IndexError):
            make_query_vector(m, 1, 0)
        with pytest.raises(IndexError):
            make_query_vector_anonymous(m, 3)


class TestExactBackend:
    def test_single_item(self):
        idx = build_catalog(random_model(1, 1, 3))
        assert [j for j, _ in idx.topk(np.ones(12), 5)] == [0]

    def test_entries_are_concatenations(self):
        m = random_model(6, 2, 3, seed=1)
        idx = build_catalog(m)
        assert idx.vectors.tobytes() == np.hstack([m.Q, m.Q, m.P, m.P]).tobytes()

    def test_exclude_everything(self):
        idx = build_catalog(random_model(5, 1, 2))
        assert idx.topk(np.ones(8), 3, exclude=range(5)) == []

    def test_full_ranking_when_k_exceeds_n(self):
        m = random_model(7, 2, 3, seed=2)
        idx = build_catalog(m)
        q = make_query_vector(m, 1, 2)
        assert sorted(j for j, _ in idx.topk(q, 50)) == list(range(7))

    def test_ranking_equals_symmetric_score(self):
        m = random_model(15, 3, 4, seed=3)
        idx = build_catalog(m)
        for u, i in [(0, 1), (2, 14)]:
            got = [j for j, _ in idx.topk(make_query_vector(m, u, i), 15)]
            sym = [symmetric_score(m, u, i, j) for j in range(15)]
            assert got == brute_force(sym, 15)

    def test_ties_by_ascending_id(self):
        vectors = np.array([[1.0, 0], [2.0, 0], [1.0, 0], [2.0, 0], [0.0, 0]])
        idx = CatalogIndex(vectors)
        assert [j for j, _ in idx.topk(np.array([1.0, 0.0]), 5)] == [1, 3, 0, 2, 4]
        assert [j for j, _ in idx.topk(np.array([1.0, 0.0]), 3)] == [1, 3, 0]

    def test_exclusion(self):
        m = random_model(30, 2, 4, seed=4)
        idx = build_catalog(m)
        q = make_query_vector(m, 0, 0)
        scores = catalog_vectors(m) @ q.values
        assert [j for j, _ in idx.topk(q, 10, exclude=[0, 5, 9])] == brute_force(scores, 10, [0, 5, 9])

    def test_blocked_scan_matches_single_block(self):
        m = random_model(100, 2, 4, seed=5)
        q = make_query_vector(m, 1, 3)
        small = build_catalog(m, params=IndexParams(block_size=7))
        a, b = small.topk(q, 20), build_catalog(m).topk(q, 20)
        assert [j for j, _ in a] == [j for j, _ in b]
        np.testing.assert_allclose([s for _, s in a], [s for _, s in b], rtol=1e-12)

    def test_batch_of_one_and_order_independence(self):
        m = random_model(40, 3, 4, seed=6)
        idx = build_catalog(m)
        qs = [make_query_vector(m, u % 3, i) for u, i in enumerate([3, 9, 27, 1])]
        batch = idx.batch_topk(qs, 5)
        assert idx.batch_topk(qs[:1], 5)[0] == idx.topk(qs[0], 5)
        assert idx.batch_topk(qs[::-1], 5) == batch[::-1]

    def test_bad_k_and_dimension(self):
        idx = build_catalog(random_model(4, 1, 2))
        with pytest.raises(ValueError):
            idx.topk(np.ones(8), 0)
        with pytest.raises(ValueError):
            idx.topk(np.ones(5), 2)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 30), st.integers(1, 6))
    def test_matches_sort_property(self, seed, n, k):
        rng = np.random.default_rng(seed)
        vectors = rng.integers(-2, 3, size=(n, 3)).astype(np.float64)
        q = rng.integers(-2, 3, size=3).astype(np.float64)
        idx = CatalogIndex(vectors)
        assert [j for j, _ in idx.topk(q, k)] == brute_force(vectors @ q, k)


class TestApproximateBackend:
    def test_overlap_with_exact(self):
        m = random_model(5000, 200, 16, seed=7, dtype=np.float32, scale=0.25)
        params = IndexParams(efs=200, seed=1)
        approx = build_catalog(m, "approximate", params)
        exact = build_catalog(m, "exact")
        rng = np.random.default_rng(8)
        overlaps = []
        for _ in range(100):
            q = make_query_vector(m, int(rng.integers(200)), int(rng.integers(5000)))
            a = {j for j, _ in approx.topk(q, 10)}
            e = {j for j, _ in exact.topk(q, 10)}
            overlaps.append(len(a & e) / 10)
        assert np.mean(overlaps) >= 0.95

    def test_exclusion_and_padding(self):
        m = random_model(50, 2, 4, seed=9, dtype=np.float32)
        idx = build_catalog(m, "approximate", IndexParams(M=4, efc=20, efs=10))
        q = make_query_vector(m, 0, 0)
        got = idx.topk(q, 10, exclude=range(45))
        assert {j for j, _ in got} <= set(range(45, 50))
        assert idx.topk(q, 3, exclude=range(50)) == []

    def test_small_catalog_exact_recall(self):
        m = random_model(60, 2, 4, seed=10)
        approx = build_catalog(m, "approximate", IndexParams(M=8, efc=100, efs=100))
        exact = build_catalog(m, "exact")
        q = make_query_vector(m, 1, 5)
        assert approx.topk(q, 60) == exact.topk(q, 60)

    def test_graph_degrees_bounded(self):
        vectors = np.random.default_rng(0).standard_normal((500, 8)).astype(np.float32)
        g = build_graph(vectors, M=6, efc=40, seed=0)
        assert g.deg0.max() <= 12
        assert g.upper_deg.size == 0 or g.upper_deg.max() <= 6
        assert 0 <= g.entry < 500 and g.levels[g.entry] == g.max_level
        ids, sims = search_graph(g, vectors, vectors[:3], ef=20)
        assert ids.shape[0] == 3 and (ids[:, 0] >= 0).all()

    def test_every_node_reachable(self):
        # uneven norms make inner-product pruning orphan nodes unless repaired
        rng = np.random.default_rng(2)
        vectors = (rng.standard_normal((2000, 8)) * rng.lognormal(0, 1, (2000, 1))).astype(np.float32)
        g = build_graph(vectors, M=4, efc=40, seed=0)
        ids, _ = search_graph(g, vectors, vectors[:5], ef=2000)
        for row in ids:
            assert sorted(row.tolist()) == list(range(2000))

    def test_build_deterministic(self):
        vectors = np.random.default_rng(1).standard_normal((300, 8)).astype(np.float32)
        a, b = build_graph(vectors, 8, 50, seed=4), build_graph(vectors, 8, 50, seed=4)
        np.testing.assert_array_equal(a.adj0, b.adj0)
        np.testing.assert_array_equal(a.upper_adj, b.upper_adj)


class TestIndexFile:
    @pytest.mark.parametrize("backend", ["exact", "approximate"])
    @pytest.mark.parametrize("layout", ["symmetric", "asymmetric"])
    def test_round_trip(self, tmp_path, backend, layout):
        m = random_model(200, 5, 4, seed=11, dtype=np.float32)
        idx = build_catalog(m, backend, IndexParams(M=6, efc=30, efs=25, seed=2), layout)
        save_index(idx, tmp_path / "i.bin")
        back = load_index(tmp_path / "i.bin")
        assert (back.backend, back.layout, back.params) == (backend, layout, idx.params)
        assert back.vectors.tobytes() == idx.vectors.tobytes()
        q = np.random.default_rng(0).standard_normal(idx.dim)
        assert back.topk(q, 15) == idx.topk(q, 15)
        header = read_index_header(tmp_path / "i.bin")
        assert header["n"] == 200 and header["dim"] == idx.dim

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "i.bin"
        save_index(build_catalog(random_model(5, 1, 2)), p)
        p.write_bytes(b"ZZZZ" + p.read_bytes()[4:])
        with pytest.raises(ValueError):
            load_index(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "i.bin"
        save_index(build_catalog(random_model(50, 1, 4, dtype=np.float32), "approximate"), p)
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(ValueError):
            load_index(p)


@pytest.mark.slow
def test_batch_faster_than_sequential(capsys):
    m = random_model(50_000, 100, 64, seed=12, dtype=np.float32)
    idx = build_catalog(m, "exact")
    qs = [make_query_vector(m, 0, i) for i in range(8)]
    idx.batch_topk(qs, 60)
    t0 = time.perf_counter()
    for _ in range(5):
        idx.batch_topk(qs, 60)
    batch = time.perf_counter() - t0
    t0 = time.perf_counter()
    for _ in range(5):
        for q in qs:
            idx.topk(q, 60)
    seq = time.perf_counter() - t0
    with capsys.disabled():
        print(f"\nbatch of 8 vs sequential, exact n=50k d=64: {seq / batch:.2f}x")
    assert batch < seq
