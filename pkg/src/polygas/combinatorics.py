"""Connected-graph weights, oriented-tree counting, interpolation forests.

This module carries the purely combinatorial layer of the cluster
machinery: signed connected-subgraph sums over overlap graphs, counts
and factorial-weighted sums over trees with oriented edges, degree-
constrained tree counts, the forest interpolation identity for functions
of edge couplings, and the local factorial estimates used to control
derivative multiplicities.

Everything here is exact integer or rational arithmetic except
bkar_expand, which integrates smooth interpolation remainders
numerically.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DomainError


# ---------------------------------------------------------------------------
# graphs and trees


@dataclass(frozen=True)
class LabeledGraph:
    """Undirected simple graph on vertices 0..n-1."""

    n: int
    edges: frozenset

    def __post_init__(self):
        for e in self.edges:
            a, b = e
            if not (0 <= a < self.n and 0 <= b < self.n and a != b):
                raise DomainError(f"bad edge {e} for n={self.n}")
            if (b, a) in self.edges and a > b:
                raise DomainError("edges must be stored with a < b")

    def has_edge(self, a: int, b: int) -> bool:
        if a > b:
            a, b = b, a
        return (a, b) in self.edges

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n), dtype=bool)
        for a, b in self.edges:
            A[a, b] = A[b, a] = True
        return A

    def is_connected(self) -> bool:
        if self.n == 0:
            return True
        seen = {0}
        stack = [0]
        adj = [[] for _ in range(self.n)]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == self.n


def graph_from_edges(n: int, edges) -> LabeledGraph:
    norm = frozenset((min(a, b), max(a, b)) for a, b in edges)
    return LabeledGraph(n, norm)


def complete_graph(n: int) -> LabeledGraph:
    return graph_from_edges(n, itertools.combinations(range(n), 2))


@dataclass(frozen=True)
class DTree:
    """Tree on 0..n-1 whose every edge carries an orientation."""

    n: int
    edges: tuple  # tuple of (tail, head) pairs

    def __post_init__(self):
        undirected = {(min(a, b), max(a, b)) for a, b in self.edges}
        if len(undirected) != len(self.edges):
            raise DomainError("duplicate or opposite edges in oriented tree")
        if len(self.edges) != self.n - 1:
            raise DomainError("an oriented tree on n vertices has n-1 edges")
        g = LabeledGraph(self.n, frozenset(undirected))
        if not g.is_connected():
            raise DomainError("underlying graph is not a tree")

    def degree(self, v: int) -> int:
        return sum(1 for a, b in self.edges if v in (a, b))

    def out_neighbors(self, v: int):
        return [b for a, b in self.edges if a == v]


def _prufer_tree(seq, n):
    """Labeled tree edges from a Prufer sequence."""
    import heapq

    degree = [1] * n
    for v in seq:
        degree[v] += 1
    edges = []
    leaves = [v for v in range(n) if degree[v] == 1]
    heapq.heapify(leaves)
    for v in seq:
        leaf = heapq.heappop(leaves)
        edges.append((min(leaf, v), max(leaf, v)))
        degree[leaf] -= 1
        degree[v] -= 1
        if degree[v] == 1:
            heapq.heappush(leaves, v)
    last = [v for v in range(n) if degree[v] == 1]
    edges.append((min(last[0], last[1]), max(last[0], last[1])))
    return edges


def spanning_trees_of_complete(n: int):
    """All labeled trees on n vertices as sorted edge tuples."""
    if n < 1:
        raise DomainError("need n >= 1")
    if n == 1:
        return [()]
    if n == 2:
        return [((0, 1),)]
    out = []
    for seq in itertools.product(range(n), repeat=n - 2):
        out.append(tuple(sorted(_prufer_tree(list(seq), n))))
    return out


def dtrees(n: int):
    """All oriented labeled trees on n vertices."""
    out = []
    for tree in spanning_trees_of_complete(n):
        k = len(tree)
        for bits in itertools.product((0, 1), repeat=k):
            oriented = tuple(
                (a, b) if bit == 0 else (b, a) for (a, b), bit in zip(tree, bits)
            )
            out.append(DTree(n, oriented))
    return out


def count_dtrees(n: int) -> int:
    """Number of oriented labeled trees: n^(n-2) * 2^(n-1)."""
    if n < 1:
        raise DomainError("need n >= 1")
    if n == 1:
        return 1
    return n ** (n - 2) * 2 ** (n - 1)


def cayley_count(degrees) -> int:
    """Labeled trees realizing a prescribed degree sequence.

    The count is (n-2)! / prod (d_i - 1)!.  Degrees must be positive and
    sum to 2(n-1).
    """
    degrees = list(degrees)
    n = len(degrees)
    if n < 2:
        raise DomainError("need at least two vertices")
    if any(d < 1 for d in degrees):
        raise DomainError("tree degrees are at least 1")
    if sum(degrees) != 2 * (n - 1):
        raise DomainError(
            f"degree sum must be 2(n-1) = {2 * (n - 1)}, got {sum(degrees)}"
        )
    out = math.factorial(n - 2)
    for d in degrees:
        out //= math.factorial(d - 1)
    return out


def dtree_factorial_sum(n: int, cap: int = 7) -> int:
    """Sum over oriented trees of the product of total-degree factorials.

    Equals 2^(n-1) * sum over labeled trees of prod_v deg(v)!.  Grows
    like a factorial times a geometric factor; dtree_factorial_bound
    gives the closed-form majorant checked in tests.
    """
    if n < 1:
        raise DomainError("need n >= 1")
    if n > cap:
        raise DomainError(f"n={n} above enumeration cap {cap}")
    if n == 1:
        return 1
    total = 0
    for seq in itertools.product(range(n), repeat=n - 2):
        mult = [1] * n
        for v in seq:
            mult[v] += 1
        prod = 1
        for m in mult:
            prod *= math.factorial(m)
        total += prod
    return 2 ** (n - 1) * total


def dtree_factorial_bound(n: int) -> int:
    """Closed-form majorant (n-2)! * 2^(4(n-1)) for the factorial sum."""
    if n < 1:
        raise DomainError("need n >= 1")
    return math.factorial(max(0, n - 2)) * 2 ** (4 * (n - 1))


# ---------------------------------------------------------------------------
# connected-subgraph weights (Mayer coefficients)

_ursell_cache: dict = {}


def ursell(overlap, cap: int = 8):
    """Signed connected-subgraph sum of the overlap graph.

    overlap is an n x n boolean array (or LabeledGraph); entry (i, j)
    true means polymers i and j are incompatible.  The result is the
    integer sum over connected spanning subgraphs G of the overlap graph
    of (-1)^(number of edges of G); it vanishes unless the overlap graph
    is connected, and for n = 1 it is 1.

    Computed by subset convolution: with A(S) = 1 if S is overlap-free
    and 0 otherwise, the connected part rho satisfies
    A(S) = sum over T containing min(S) of rho(T) * A(S - T).
    """
    if isinstance(overlap, LabeledGraph):
        A = overlap.adjacency()
    else:
        A = np.asarray(overlap, dtype=bool)
    n = A.shape[0]
    if A.shape != (n, n):
        raise DomainError("overlap matrix must be square")
    if n > cap:
        raise DomainError(f"n={n} above cap {cap}")
    if not np.array_equal(A, A.T):
        raise DomainError("overlap matrix must be symmetric")
    key = (n, A.tobytes())
    hit = _ursell_cache.get(key)
    if hit is not None:
        return hit

    full = (1 << n) - 1
    # indicator that a subset is overlap-free
    edges = [
        (i, j) for i in range(n) for j in range(i + 1, n) if A[i, j]
    ]
    free = [1] * (full + 1)
    for S in range(full + 1):
        for i, j in edges:
            if (S >> i) & 1 and (S >> j) & 1:
                free[S] = 0
                break

    rho = [0] * (full + 1)
    for S in range(1, full + 1):
        low = S & (-S)
        val = free[S]
        # subtract contributions where the part containing the lowest
        # element is a proper subset
        T = (S - 1) & S
        while True:
            if T & low and T != S:
                val -= rho[T] * free[S ^ T]
            if T == 0:
                break
            T = (T - 1) & S
        rho[S] = val
    out = rho[full]
    _ursell_cache[key] = out
    return out


def _bareiss_determinant(M) -> int:
    """Integer determinant by fraction-free elimination."""
    A = [[int(x) for x in row] for row in M]
    n = len(A)
    if n == 0:
        return 1
    sign = 1
    prev = 1
    for k in range(n - 1):
        if A[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if A[i][k] != 0), None)
            if swap is None:
                return 0
            A[k], A[swap] = A[swap], A[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                A[i][j] = (A[i][j] * A[k][k] - A[i][k] * A[k][j]) // prev
        prev = A[k][k]
    return sign * A[n - 1][n - 1]


def spanning_tree_count(graph: LabeledGraph) -> int:
    """Number of spanning trees, via the Laplacian minor determinant."""
    n = graph.n
    if n == 0:
        return 0
    if n == 1:
        return 1
    lap = [[0] * n for _ in range(n)]
    for a, b in graph.edges:
        lap[a][a] += 1
        lap[b][b] += 1
        lap[a][b] -= 1
        lap[b][a] -= 1
    minor = [row[1:] for row in lap[1:]]
    return _bareiss_determinant(minor)


def ursell_tree_bound(overlap, cap: int = 8):
    """Absolute connected-subgraph weight and its spanning-tree majorant.

    Returns (|rho|, number of spanning trees of the overlap graph).  The
    first never exceeds the second; both vanish when the graph is
    disconnected.
    """
    if isinstance(overlap, LabeledGraph):
        g = overlap
    else:
        A = np.asarray(overlap, dtype=bool)
        g = graph_from_edges(
            A.shape[0],
            [
                (i, j)
                for i in range(A.shape[0])
                for j in range(i + 1, A.shape[0])
                if A[i, j]
            ],
        )
    rho = ursell(g, cap=cap)
    trees = spanning_tree_count(g) if g.is_connected() else 0
    return abs(rho), trees


# ---------------------------------------------------------------------------
# set partitions


def set_partitions(items):
    """Yield all partitions of a sequence as lists of tuples."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for sub in set_partitions(rest):
        yield [(first,)] + sub
        for i in range(len(sub)):
            yield sub[:i] + [(first,) + sub[i]] + sub[i + 1 :]


# ---------------------------------------------------------------------------
# forest interpolation


class ExpEdgeFunction:
    """exp of an affine function of the edge couplings; exact derivatives.

    value(S) = scale * exp(sum_e a_e * S_e) with e ranging over the
    upper-triangle pairs of an n x n symmetric coupling matrix.
    """

    def __init__(self, n: int, coeffs: dict, scale: float = 1.0):
        self.n = n
        self.coeffs = {(min(a, b), max(a, b)): v for (a, b), v in coeffs.items()}
        self.scale = scale

    def value(self, S: np.ndarray) -> float:
        acc = 0.0
        for (a, b), c in self.coeffs.items():
            acc += c * S[a, b]
        return self.scale * math.exp(acc)

    def deriv(self, edges, S: np.ndarray) -> float:
        out = self.value(S)
        for a, b in edges:
            out *= self.coeffs.get((min(a, b), max(a, b)), 0.0)
        return out


class NumericEdgeFunction:
    """Mixed edge partials by fourth-order central differences."""

    def __init__(self, n: int, fn, h: float = 0.02):
        self.n = n
        self.fn = fn
        self.h = h

    def value(self, S: np.ndarray) -> float:
        return self.fn(S)

    def deriv(self, edges, S: np.ndarray) -> float:
        edges = list(edges)
        if not edges:
            return self.fn(S)

        def d_one(g, a, b, h):
            def out(M):
                P1 = M.copy()
                P1[a, b] += h
                P1[b, a] = P1[a, b]
                M1 = M.copy()
                M1[a, b] -= h
                M1[b, a] = M1[a, b]
                P2 = M.copy()
                P2[a, b] += 2 * h
                P2[b, a] = P2[a, b]
                M2 = M.copy()
                M2[a, b] -= 2 * h
                M2[b, a] = M2[a, b]
                return (8 * (g(P1) - g(M1)) - (g(P2) - g(M2))) / (12 * h)

            return out

        g = self.fn
        for a, b in edges:
            g = d_one(g, a, b, self.h)
        return g(S)


def forests_of_complete(n: int):
    """All forests (acyclic edge subsets) on n labeled vertices."""
    pairs = list(itertools.combinations(range(n), 2))
    out = []
    for r in range(len(pairs) + 1):
        for combo in itertools.combinations(pairs, r):
            parent = list(range(n))

            def find(x):
                while parent[x] != x:
                    parent[x] = parent[parent[x]]
                    x = parent[x]
                return x

            ok = True
            for a, b in combo:
                ra, rb = find(a), find(b)
                if ra == rb:
                    ok = False
                    break
                parent[ra] = rb
            if ok:
                out.append(combo)
    return out


def _forest_coupling(n: int, forest, svals: dict) -> np.ndarray:
    """Coupling matrix induced by a forest with edge parameters.

    The coupling of (i, j) is the minimum parameter along the forest
    path between them, 1 on the diagonal, 0 across components.
    """
    adj = {v: [] for v in range(n)}
    for a, b in forest:
        adj[a].append(b)
        adj[b].append(a)
    S = np.zeros((n, n))
    np.fill_diagonal(S, 1.0)
    for src in range(n):
        best = {src: np.inf}
        stack = [src]
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in best:
                    e = (min(v, w), max(v, w))
                    best[w] = min(best[v], svals[e])
                    stack.append(w)
        for w, val in best.items():
            if w != src:
                S[src, w] = val
    return S


def bkar_expand(f, n: int, cap: int = 4, quad_order: int = 16):
    """Forest interpolation of a function of pairwise couplings.

    Decomposes f at all-couplings-one into a sum over forests of
    integrated mixed edge derivatives evaluated at path-minimum coupling
    matrices.  Returns (total, {forest: contribution}).  The total
    reproduces f at full coupling, which is the identity checked in
    tests.

    Each forest term is integrated over the ordered sectors of its
    parameter cube so the path-minimum structure is smooth on every
    integration domain.
    """
    if n < 1:
        raise DomainError("need n >= 1")
    if n > cap:
        raise DomainError(f"n={n} above cap {cap}")
    nodes, weights = np.polynomial.legendre.leggauss(quad_order)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights

    contributions = {}
    total = 0.0
    for forest in forests_of_complete(n):
        k = len(forest)
        if k == 0:
            S0 = np.zeros((n, n))
            np.fill_diagonal(S0, 1.0)
            val = f.value(S0)
            contributions[forest] = val
            total += val
            continue
        acc = 0.0
        for order in itertools.permutations(range(k)):
            # map the unit cube onto the sector where the edge with
            # order[0] has the smallest parameter, and so on
            for idx in itertools.product(range(quad_order), repeat=k):
                u = nodes[list(idx)]
                w = np.prod(weights[list(idx)])
                t = np.empty(k)
                prod = 1.0
                jac = 1.0
                for pos in range(k - 1, -1, -1):
                    prod = prod * u[pos] if pos < k - 1 else u[pos]
                    t[pos] = prod
                for pos in range(1, k):
                    jac *= t[pos]
                svals = {}
                for rank, epos in enumerate(order):
                    e = forest[epos]
                    svals[e] = t[rank]
                S = _forest_coupling(n, forest, svals)
                acc += w * jac * f.deriv(list(forest), S)
        contributions[forest] = acc
        total += acc
    return total, contributions


# ---------------------------------------------------------------------------
# local factorial estimates


def _norm_rowcol(gamma: np.ndarray) -> float:
    g = np.abs(np.asarray(gamma, dtype=float))
    return float(max(g.sum(axis=0).max(), g.sum(axis=1).max()))


@dataclass
class FactorialBoundReport:
    lhs_anchored: float
    rhs_anchored: float
    lhs_pinned: float
    rhs_pinned: float

    @property
    def ok(self) -> bool:
        return (
            self.lhs_anchored <= self.rhs_anchored + 1e-12
            and self.lhs_pinned <= self.rhs_pinned + 1e-12
        )


def local_factorial_bound_check(
    gamma, anchor, X, d: int, cap_states: int = 300000
) -> FactorialBoundReport:
    """Exhaustively verify the two multiplicity-factorial estimates.

    gamma: nonnegative coupling matrix over sites 0..m-1.
    anchor: nonnegative per-site anchoring weights (summable decay
    profile toward the distinguished set).
    X: the distinguished site subset.
    d: number of coupled pairs.

    First form: both endpoints range over all sites, each left endpoint
    carries its anchor weight, and repeated left endpoints contribute
    the factorial of their multiplicity.  Bounded by
    (1/2) (2 |gamma| |anchor|_1)^d d! e^{|X|}.

    Second form: right endpoints range over X, repeated right endpoints
    contribute the square root of their multiplicity factorial.  Bounded
    by (1/2) (2 |gamma|)^d d! e^{|X|}.
    """
    gamma = np.asarray(gamma, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    if np.any(gamma < 0) or np.any(anchor < 0):
        raise DomainError("gamma and anchor must be nonnegative")
    m = gamma.shape[0]
    X = sorted(set(int(x) for x in X))
    if any(not 0 <= x < m for x in X):
        raise DomainError("X must be a subset of the site range")
    if d < 1:
        raise DomainError("need d >= 1")
    if m ** (2 * d) > cap_states:
        raise DomainError(
            f"enumeration size {m ** (2 * d)} above cap {cap_states}"
        )

    gnorm = _norm_rowcol(gamma)
    anorm = float(anchor.sum())

    lhs1 = 0.0
    for xs in itertools.product(range(m), repeat=d):
        base = 1.0
        mult = [0] * m
        for x in xs:
            base *= anchor[x]
            mult[x] += 1
        if base == 0.0:
            continue
        for x in range(m):
            base *= math.factorial(mult[x])
        ysum = 1.0
        for x in xs:
            ysum *= gamma[x, :].sum()
        lhs1 += base * ysum
    rhs1 = 0.5 * (2.0 * gnorm * anorm) ** d * math.factorial(d) * math.exp(len(X))

    lhs2 = 0.0
    if X:
        for ys in itertools.product(X, repeat=d):
            mult = {x: 0 for x in X}
            for y in ys:
                mult[y] += 1
            base = 1.0
            for y in X:
                base *= math.sqrt(math.factorial(mult[y]))
            gsum = 1.0
            for y in ys:
                gsum *= gamma[:, y].sum()
            lhs2 += base * gsum
    rhs2 = 0.5 * (2.0 * gnorm) ** d * math.factorial(d) * math.exp(len(X))

    return FactorialBoundReport(lhs1, rhs1, lhs2, rhs2)


def balance_inequality_margin(x: float, dim: int) -> float:
    """Margin of the elementary bound 1 + x <= sqrt(dim) exp(x^2 / dim).

    Returns rhs - lhs; nonnegative for every real x when dim >= 2.  The
    dim = 1 case genuinely fails near x = 1/2 and is excluded from the
    guarantee.
    """
    if dim < 1:
        raise DomainError("dim must be >= 1")
    return math.sqrt(dim) * math.exp(x * x / dim) - (1.0 + x)


# ---------------------------------------------------------------------------
# footprint connectivity


def coarse_footprint(X, hier) -> frozenset:
    """Coarse cells meeting a paved set (each ell-block lies in one)."""
    cells = set()
    for m in X.blocks:
        center = np.array([hier.spec.ell * c for c in m])
        cells.add(tuple(int(c) for c in hier.coarse_cell_of_site(center)))
    return frozenset(cells)


def connectivity_graph(footprints) -> LabeledGraph:
    """Graph on parts with edges between parts sharing a coarse cell.

    footprints: list of sets of coarse-cell labels (use coarse_footprint
    to produce them from paved sets).
    """
    n = len(footprints)
    fps = [frozenset(f) for f in footprints]
    edges = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if fps[i] & fps[j]
    ]
    return graph_from_edges(n, edges)
