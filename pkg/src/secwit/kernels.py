"""Graph kernels over CSR adjacency (``indptr``, ``indices``).

Every kernel exists twice: the plain Python function (``*_py``) and the
jitted one. Callers use the unsuffixed names, which resolve to the jitted
version unless numba is disabled.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "USE_NUMBA",
    "to_csr",
    "nested_dfs",
    "nested_dfs_py",
    "bfs_parents",
    "bfs_parents_py",
    "shortest_path",
    "shortest_cycle",
]


def to_csr(n, adjacency):
    """Pack a list of successor lists into ``(indptr, indices)`` int64 arrays."""
    indptr = np.zeros(n + 1, dtype=np.int64)
    for v in range(n):
        indptr[v + 1] = indptr[v] + len(adjacency[v])
    indices = np.empty(indptr[n], dtype=np.int64)
    pos = 0
    for v in range(n):
        for w in adjacency[v]:
            indices[pos] = w
            pos += 1
    return indptr, indices


def _nested_dfs(indptr, indices, accepting, root):
    # Iterative nested DFS; cyan marks nodes on the blue stack, so the red
    # search can stop as soon as it closes a cycle through one of them.
    # Returns the accepting seed of a reachable accepting cycle, or -1.
    n = indptr.shape[0] - 1
    color = np.zeros(n, dtype=np.int8)  # 0 white, 1 cyan (on blue stack), 2 blue
    red = np.zeros(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    ptr = np.empty(n, dtype=np.int64)
    rstack = np.empty(n, dtype=np.int64)
    rptr = np.empty(n, dtype=np.int64)
    top = 0
    stack[0] = root
    ptr[0] = indptr[root]
    color[root] = 1
    while top >= 0:
        v = stack[top]
        if ptr[top] < indptr[v + 1]:
            w = indices[ptr[top]]
            ptr[top] += 1
            if color[w] == 0:
                top += 1
                stack[top] = w
                ptr[top] = indptr[w]
                color[w] = 1
            continue
        if accepting[v]:
            # red search from v for any cyan node
            rtop = 0
            rstack[0] = v
            rptr[0] = indptr[v]
            while rtop >= 0:
                x = rstack[rtop]
                if rptr[rtop] < indptr[x + 1]:
                    y = indices[rptr[rtop]]
                    rptr[rtop] += 1
                    if color[y] == 1:
                        return v
                    if not red[y]:
                        red[y] = True
                        rtop += 1
                        rstack[rtop] = y
                        rptr[rtop] = indptr[y]
                else:
                    rtop -= 1
        color[v] = 2
        top -= 1
    return -1


def _bfs_parents(indptr, indices, sources, target):
    # Multi-source BFS; stops once target is labelled. parent[s] = -2 for sources.
    n = indptr.shape[0] - 1
    parent = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    head = 0
    tail = 0
    for s in sources:
        if parent[s] == -1:
            parent[s] = -2
            queue[tail] = s
            tail += 1
    while head < tail:
        v = queue[head]
        head += 1
        if v == target:
            break
        for e in range(indptr[v], indptr[v + 1]):
            w = indices[e]
            if parent[w] == -1:
                parent[w] = v
                queue[tail] = w
                tail += 1
    return parent


nested_dfs_py = _nested_dfs
bfs_parents_py = _bfs_parents
nested_dfs = njit(_nested_dfs)
bfs_parents = njit(_bfs_parents)


def _walk(parent, target):
    path = [target]
    while parent[path[-1]] >= 0:
        path.append(int(parent[path[-1]]))
    path.reverse()
    return path


def shortest_path(indptr, indices, src, dst):
    """Node path ``src .. dst`` (inclusive) or ``None``."""
    parent = bfs_parents(indptr, indices, np.array([src], dtype=np.int64), dst)
    if parent[dst] == -1:
        return None
    return _walk(parent, dst)


def shortest_cycle(indptr, indices, node):
    """Node path ``node, .., node`` of a shortest non-empty cycle, or ``None``."""
    succ = indices[indptr[node]:indptr[node + 1]]
    if node in set(succ.tolist()):
        return [node, node]
    if succ.shape[0] == 0:
        return None
    parent = bfs_parents(indptr, indices, np.unique(succ), node)
    if parent[node] == -1:
        return None
    return [node] + _walk(parent, node)
