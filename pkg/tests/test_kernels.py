import numpy as np
from hypothesis import given, settings, strategies as st

from secwit import kernels


def reach(adj, srcs):
    seen, todo = set(srcs), list(srcs)
    while todo:
        v = todo.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                todo.append(w)
    return seen


@st.composite
def graphs(draw):
    n = draw(st.integers(1, 12))
    adj = [sorted(set(draw(st.lists(st.integers(0, n - 1), max_size=3)))) for _ in range(n)]
    acc = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    return n, adj, np.array(acc, dtype=np.bool_)


def on_cycle(adj, v):
    return v in reach(adj, adj[v])


@settings(max_examples=200, deadline=None)
@given(graphs())
def test_nested_dfs_matches_brute_force(g):
    n, adj, acc = g
    indptr, indices = kernels.to_csr(n, adj)
    expected = any(acc[v] and on_cycle(adj, v) for v in reach(adj, [0]))
    for fn in (kernels.nested_dfs, kernels.nested_dfs_py):
        seed = fn(indptr, indices, acc, 0)
        assert (seed >= 0) == expected
        if seed >= 0:
            assert acc[seed] and seed in reach(adj, [0]) and on_cycle(adj, seed)


@settings(max_examples=200, deadline=None)
@given(graphs(), st.integers(0, 11))
def test_paths_and_cycles(g, dst):
    n, adj, _ = g
    dst %= n
    indptr, indices = kernels.to_csr(n, adj)
    a = kernels.bfs_parents(indptr, indices, np.array([0], dtype=np.int64), dst)
    b = kernels.bfs_parents_py(indptr, indices, np.array([0], dtype=np.int64), dst)
    assert (a[dst] == -1) == (b[dst] == -1)
    path = kernels.shortest_path(indptr, indices, 0, dst)
    if dst == 0:
        assert path == [0]
    elif dst in reach(adj, [0]):
        assert path[0] == 0 and path[-1] == dst
        assert all(w in adj[v] for v, w in zip(path, path[1:]))
    else:
        assert path is None
    cyc = kernels.shortest_cycle(indptr, indices, dst)
    assert (cyc is not None) == on_cycle(adj, dst)
    if cyc:
        assert cyc[0] == cyc[-1] == dst
        assert all(w in adj[v] for v, w in zip(cyc, cyc[1:]))


def test_csr_layout():
    indptr, indices = kernels.to_csr(3, [[1, 2], [], [0]])
    assert indptr.tolist() == [0, 2, 2, 3]
    assert indices.tolist() == [1, 2, 0]
