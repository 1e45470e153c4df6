"""Independent reference computations used as test oracles.

Nothing here imports the code under test beyond plain data types.
"""

import heapq
import math

import numpy as np

from slicecast.ingest import Link, Node, Topology


def naive_dft(x):
    x = np.asarray(x, dtype=float)
    n = len(x)
    out = []
    for f in range(n // 2 + 1):
        re = sum(x[t] * math.cos(2 * math.pi * f * t / n) for t in range(n))
        im = -sum(x[t] * math.sin(2 * math.pi * f * t / n) for t in range(n))
        out.append(complex(re, im))
    return np.array(out)


def direct_autocorrelation(x):
    x = np.asarray(x, dtype=float)
    n = len(x)
    return np.array([sum(x[t] * x[(t + tau) % n] for t in range(n)) / n for tau in range(n)])


def direct_cross_correlation(q, k):
    n = len(q)
    return np.array([sum(q[t] * k[(t + tau) % n] for t in range(n)) / n for tau in range(n)])


def central_difference(f, arr, h=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place, restored)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-8):
    a = np.asarray(analytic, dtype=float)
    b = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def floyd_warshall(nodes, arcs):
    """All-pairs shortest path costs. ``arcs`` is an iterable of (u, v, cost)."""
    idx = {n: i for i, n in enumerate(nodes)}
    n = len(nodes)
    d = [[math.inf] * n for _ in range(n)]
    for i in range(n):
        d[i][i] = 0.0
    for u, v, c in arcs:
        if c < d[idx[u]][idx[v]]:
            d[idx[u]][idx[v]] = c
    for k in range(n):
        dk = d[k]
        for i in range(n):
            dik = d[i][k]
            if dik == math.inf:
                continue
            di = d[i]
            for j in range(n):
                if dik + dk[j] < di[j]:
                    di[j] = dik + dk[j]
    return {(a, b): d[idx[a]][idx[b]] for a in nodes for b in nodes}


def union_find_jaccard_groups(footprints, theta):
    """Exhaustive pairwise merge: any pair with Jaccard >= theta is joined, transitively."""
    n = len(footprints)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            a, b = footprints[i], footprints[j]
            union = a | b
            jac = len(a & b) / len(union) if union else 1.0
            if jac >= theta:
                parent[find(i)] = find(j)
    return len({find(i) for i in range(n)})


def moving_average_replicate(x, kernel):
    x = np.asarray(x, dtype=float)
    p = (kernel - 1) // 2
    out = np.zeros_like(x)
    n = x.shape[0]
    for t in range(n):
        acc = np.zeros(x.shape[1:])
        for j in range(t - p, t + p + 1):
            acc = acc + x[min(max(j, 0), n - 1)]
        out[t] = acc / kernel
    return out


def bfs_connected(nodes, edges):
    if not nodes:
        return True
    adj = {n: set() for n in nodes}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen = {nodes[0]}
    frontier = [nodes[0]]
    while frontier:
        cur = frontier.pop()
        for nb in adj[cur]:
            if nb not in seen:
                seen.add(nb)
                frontier.append(nb)
    return len(seen) == len(nodes)


def dijkstra_reference(adj, src):
    """Plain heap Dijkstra on ``adj[u] = [(v, w)]`` returning costs only."""
    dist = {src: 0.0}
    heap = [(0.0, src)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist.get(u, math.inf):
            continue
        for v, w in adj.get(u, ()):
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def random_connected(seed, n_max=12):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, n_max + 1))
    names = [f"n{i:02d}" for i in range(n)]
    edges = []
    for i in range(1, n):
        edges.append((names[int(rng.integers(0, i))], names[i], int(rng.integers(0, 10))))
    for _ in range(int(rng.integers(0, n * 2))):
        a, b = rng.choice(n, 2, replace=False)
        edges.append((names[a], names[b], int(rng.integers(0, 10))))
    links = tuple(Link(f"L{k}", a, b, float(rng.integers(1, 100)), float(c)) for k, (a, b, c) in enumerate(edges))
    return Topology("r", tuple(Node(x, 0.0, 0.0) for x in names), links)
