import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from modc.pool import Pool
from modc.runtime import CrashSpec, Runtime
from modc.workloads import (
    BadProbabilities, CsrMatrix, EndpointOutOfRange, PartitionSpec, bsp_pagerank, build_csr, leaf_ranges,
    next_ranks, oracle_pagerank, pagerank_driver, pagerank_task_count, read_edge_list, rmat_generate,
    split_point, tree_task_count, write_edge_list,
)


def small_graph(scale=8, seed=3):
    return build_csr(rmat_generate(scale, 8, seed=seed), 1 << scale)


def runtime(workers=4, spares=1, seed=0):
    return Runtime(workers, spares, pool_capacity=256 << 20, seed=seed)


# -- rmat -------------------------------------------------------------------

def test_rmat_rejects_bad_probabilities():
    with pytest.raises(BadProbabilities):
        rmat_generate(4, 4, 0.5, 0.2, 0.1, 0.1)


def test_rmat_is_deterministic():
    assert np.array_equal(rmat_generate(2, seed=9), rmat_generate(2, seed=9))
    assert not np.array_equal(rmat_generate(6, seed=1), rmat_generate(6, seed=2))


def test_rmat_scale_10_is_skewed():
    edges = rmat_generate(10, 16)
    assert edges.shape == (16384, 2)
    assert edges.min() >= 0 and edges.max() < 1024
    indeg = np.bincount(edges[:, 1], minlength=1024)
    # a uniform draw would leave these counts close to Poisson(16)
    _, p = stats.chisquare(indeg)
    assert p < 1e-12
    assert indeg.max() > 4 * indeg.mean()


def test_edge_list_file_roundtrip(tmp_path):
    edges = rmat_generate(5, 4, seed=4)
    path = tmp_path / "g.txt"
    write_edge_list(path, edges, comment="scale 5\nseed 4")
    assert np.array_equal(read_edge_list(path), edges)
    bad = tmp_path / "bad.txt"
    bad.write_text("1 2 3\n")
    with pytest.raises(ValueError):
        read_edge_list(bad)


# -- csr --------------------------------------------------------------------

def test_csr_single_edge():
    m = build_csr([(0, 1)], 2)
    assert m.row_ptr.tolist() == [0, 0, 1]
    assert m.col_idx.tolist() == [0]
    assert m.out_degree.tolist() == [1, 0]


def test_csr_empty():
    m = build_csr(np.zeros((0, 2), dtype=np.int64), 3)
    assert m.row_ptr.tolist() == [0, 0, 0, 0]
    assert m.nnz == 0 and m.out_degree.tolist() == [0, 0, 0]


def test_csr_rejects_out_of_range():
    with pytest.raises(EndpointOutOfRange):
        build_csr([(0, 5)], 5)
    with pytest.raises(EndpointOutOfRange):
        build_csr([(-1, 0)], 5)


def _multiset(edges):
    return sorted(map(tuple, np.asarray(edges).tolist()))


def test_csr_roundtrip_1000_edges():
    rng = np.random.default_rng(7)
    edges = rng.integers(0, 50, size=(1000, 2))
    m = build_csr(edges, 50)
    assert _multiset(m.edges()) == _multiset(edges)
    for v in range(50):
        assert list(m.row(v)) == sorted(m.row(v))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=80))))
def test_csr_roundtrip_property(case):
    n, edges = case
    m = build_csr(np.array(edges, dtype=np.int64).reshape(-1, 2), n)
    assert _multiset(m.edges()) == sorted(edges)
    assert np.all(np.diff(m.row_ptr) >= 0)
    assert m.out_degree.sum() == len(edges)


def test_csr_pool_residency():
    m = small_graph(6)
    pool = Pool(8 << 20)
    back = CsrMatrix.from_pool(pool, m.to_pool(pool))
    assert back.n == m.n
    for a, b in ((back.row_ptr, m.row_ptr), (back.col_idx, m.col_idx), (back.out_degree, m.out_degree)):
        assert np.array_equal(a, b)
    del back, a, b
    pool.close()


# -- decomposition ----------------------------------------------------------

def test_split_examples():
    assert leaf_ranges(0, 30000, 15000) == [(0, 15000), (15000, 30000)]
    assert len(leaf_ranges(0, 100000, 15000)) == 7
    assert tree_task_count(100000, 15000) == 13
    assert leaf_ranges(0, 900, 1000) == [(0, 900)]
    spec = PartitionSpec(0, 30000, 15000)
    assert not spec.is_leaf and all(half.is_leaf for half in spec.split())
    with pytest.raises(ValueError):
        PartitionSpec(5, 5, 10)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 5000), st.integers(1, 20000), st.integers(1, 3000))
def test_leaves_tile_range(begin, rows, target):
    end = begin + rows
    leaves = leaf_ranges(begin, end, target)
    assert leaves[0][0] == begin and leaves[-1][1] == end
    assert all(a[1] == b[0] for a, b in zip(leaves, leaves[1:]))
    assert all(0 < e - b <= target for b, e in leaves)
    assert len(leaves) == -(-rows // target)
    if rows > target:
        assert begin < split_point(begin, end, target) < end


# -- numerics ---------------------------------------------------------------

def test_two_node_example():
    m = build_csr([(0, 1)], 2)
    r = oracle_pagerank(m, 1)
    assert r == pytest.approx([0.2875, 0.7125], abs=1e-15)
    assert abs(r.sum() - 1.0) < 1e-15
    assert np.array_equal(next_ranks(m.to_scipy(), [0.5, 0.5], m.out_degree), r)


def test_no_edges_and_zero_damping():
    m = build_csr(np.zeros((0, 2), dtype=np.int64), 4)
    assert np.allclose(oracle_pagerank(m, 3), 0.25, rtol=0, atol=1e-16)
    g = small_graph(5)
    assert np.allclose(oracle_pagerank(g, 2, delta=0.0), 1 / g.n, rtol=0, atol=1e-16)


def test_self_loop_single_vertex():
    assert oracle_pagerank(build_csr([(0, 0)], 1), 10).tolist() == [1.0]


def test_scipy_step_matches_oracle_bitwise():
    g = small_graph(9)
    hist = oracle_pagerank(g, 4, history=True)
    mat = g.to_scipy()
    for prev, cur in zip(hist, hist[1:]):
        assert next_ranks(mat, prev, g.out_degree).tobytes() == cur.tobytes()
        assert next_ranks(mat, prev, g.out_degree, rows=(17, 200)).tobytes() == cur[17:200].tobytes()


# -- drivers ----------------------------------------------------------------

def test_driver_zero_iterations_is_uniform():
    g = small_graph(5)
    res = pagerank_driver(runtime(), g, 0, 8)
    assert np.array_equal(res.ranks, np.full(g.n, 1 / g.n))


@pytest.mark.parametrize("workers,target", [(1, 64), (3, 17), (6, 256), (8, 1000)])
def test_driver_bitwise_across_schedules(workers, target):
    g = small_graph(8)
    res = pagerank_driver(runtime(workers, seed=workers), g, 5, target)
    assert res.ranks.tobytes() == oracle_pagerank(g, 5).tobytes()
    assert res.stats.tasks_executed == pagerank_task_count(g.n, target, 5)
    for v in res.history[1:]:
        assert abs(v.sum() - 1.0) <= 1e-12


@pytest.mark.parametrize("point", ["pre_running_cas", "mid_task", "post_publish_pre_done", "idle"])
def test_driver_crash_bitwise(point):
    g = small_graph(8)
    rt = runtime(4, seed=5)
    rt.crash = CrashSpec(1, 3, point)
    res = pagerank_driver(rt, g, 5, 32)
    assert res.stats.crash is not None
    assert res.ranks.tobytes() == oracle_pagerank(g, 5).tobytes()
    assert res.stats.tasks_reexecuted <= res.stats.crash["queued"] + 1


def test_bsp_failure_free():
    g = small_graph(8)
    res = bsp_pagerank(runtime(4), g, 6, 20, 4)
    assert res.ranks.tobytes() == oracle_pagerank(g, 6).tobytes()
    assert res.replay_iterations == 0 and res.rollbacks == []
    assert res.checkpoint_time > 0


@pytest.mark.parametrize("crash_iter,replay", [(7, 3), (5, 1), (4, 4), (1, 1)])
def test_bsp_crash_replays_since_checkpoint(crash_iter, replay):
    g = small_graph(8)
    rt = runtime(4)
    rt.crash = CrashSpec(2, crash_iter, "mid_task")
    res = bsp_pagerank(rt, g, 10, 20, 4, )
    assert res.ranks.tobytes() == oracle_pagerank(g, 10).tobytes()
    assert res.replay_iterations == replay == (crash_iter - 1) % 4 + 1


def test_bsp_crash_without_spare():
    g = small_graph(7)
    rt = runtime(3, spares=0)
    rt.crash = CrashSpec(0, 3, "in_barrier_wait")
    res = bsp_pagerank(rt, g, 5, 10, 2)
    assert res.ranks.tobytes() == oracle_pagerank(g, 5).tobytes()
