"""
Tour construction: nearest-neighbor and greedy heuristics with selection
traces, exact solvers for small instances, and a 2-opt baseline.

Every solver is a pure function of its inputs; tie rules are explicit so
repeated runs give bit-identical tours.
"""

import itertools
import logging
import math
import statistics
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    from .errors import HeuristicInvariantError, SizeLimitError
    from .spaces import PointSet, distances_from, paired_distances
except ImportError:
    from errors import HeuristicInvariantError, SizeLimitError
    from spaces import PointSet, distances_from, paired_distances

logger = logging.getLogger(__name__)

EXACT_DP_MAX = 20
BRUTE_FORCE_MAX = 10
# 2-opt only accepts exchanges that gain more than this
IMPROVEMENT_EPS = 1e-12


class SolverTag(str, Enum):
    NEAREST_NEIGHBOR = "nearest-neighbor"
    GREEDY = "greedy"
    EXACT_DP = "exact-dp"
    BRUTE_FORCE = "brute-force"
    TWO_OPT = "two-opt"


SOLVER_ALIASES = {
    'nn': SolverTag.NEAREST_NEIGHBOR,
    'nearest-neighbor': SolverTag.NEAREST_NEIGHBOR,
    'greedy': SolverTag.GREEDY,
    'exact': SolverTag.EXACT_DP,
    'exact-dp': SolverTag.EXACT_DP,
    'brute': SolverTag.BRUTE_FORCE,
    'brute-force': SolverTag.BRUTE_FORCE,
    'two-opt': SolverTag.TWO_OPT,
    '2opt': SolverTag.TWO_OPT,
}

HEURISTICS = (SolverTag.NEAREST_NEIGHBOR, SolverTag.GREEDY)


def parse_solver(name: str) -> SolverTag:
    try:
        return SOLVER_ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown solver '{name}' (choose from {', '.join(sorted(SOLVER_ALIASES))})")


@dataclass(frozen=True)
class Tour:
    order: Tuple[int, ...]
    length: float
    solver_tag: SolverTag
    seed: Optional[int] = None
    start: Optional[int] = None

    @property
    def n(self) -> int:
        return len(self.order)

    def to_json_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            'solver': self.solver_tag.value,
            'order': list(self.order),
            'length': self.length,
            'n': self.n,
            'seed': self.seed,
        }
        if self.start is not None:
            data['start'] = self.start
        return data


@dataclass(frozen=True)
class TraceStep:
    center: int
    partner: int
    radius: float


@dataclass(frozen=True)
class SelectionTrace:
    """
    Selection-time data of a heuristic run.

    Nearest-neighbor: n-1 steps (x_i, x_{i+1}, dist) plus the closing edge kept
    apart in `closing`. Greedy: n accepted edges in selection order; the n-th
    one closes the cycle.
    """

    steps: Tuple[TraceStep, ...]
    source: SolverTag
    n: int
    closing: Optional[TraceStep] = None

    @property
    def path_steps(self) -> Tuple[TraceStep, ...]:
        if self.source == SolverTag.GREEDY:
            return self.steps[:-1]
        return self.steps

    @property
    def closing_step(self) -> Optional[TraceStep]:
        if self.source == SolverTag.GREEDY:
            return self.steps[-1] if self.steps else None
        return self.closing


def tour_length(points: PointSet, order: Sequence[int]) -> float:
    """Sum of consecutive distances including the closing edge."""
    idx = np.asarray(order, dtype=np.int64)
    coords = points.points[idx]
    return math.fsum(paired_distances(points.space, coords, np.roll(coords, -1, axis=0)).tolist())


def is_permutation(order: Sequence[int], n: int) -> bool:
    return len(order) == n and sorted(order) == list(range(n))


def _check_tie_rule(tie_rule: str, supported: str):
    if tie_rule != supported:
        raise ValueError(f"unsupported tie rule '{tie_rule}' (only '{supported}')")


def nearest_neighbor_tour(
    points: PointSet,
    start: int = 0,
    tie_rule: str = 'lowest-index',
    distance_matrix: Optional[np.ndarray] = None,
) -> Tuple[Tour, SelectionTrace]:
    """Grow a path by jumping to the nearest unvisited point, then close it."""
    n = len(points)
    if n < 2:
        raise SizeLimitError('nearest_neighbor_tour', n, 2)
    if not 0 <= start < n:
        raise ValueError(f'start {start} is not a point index in [0, {n - 1}]')
    _check_tie_rule(tie_rule, 'lowest-index')

    coords = points.points
    spec = points.space

    def row(i: int) -> np.ndarray:
        if distance_matrix is not None:
            return distance_matrix[i].copy()
        return distances_from(spec, coords[i], coords)

    visited = np.zeros(n, dtype=bool)
    visited[start] = True
    order = [start]
    steps: List[TraceStep] = []
    current = start
    for _ in range(n - 1):
        d = row(current)
        d[visited] = np.inf
        # argmin returns the first minimum, i.e. the lowest index among ties
        nxt = int(np.argmin(d))
        steps.append(TraceStep(current, nxt, float(d[nxt])))
        visited[nxt] = True
        order.append(nxt)
        current = nxt

    closing = TraceStep(current, start, float(row(current)[start]))
    length = math.fsum([s.radius for s in steps] + [closing.radius])
    tour = Tour(tuple(order), length, SolverTag.NEAREST_NEIGHBOR, seed=points.seed, start=start)
    trace = SelectionTrace(tuple(steps), SolverTag.NEAREST_NEIGHBOR, n, closing=closing)
    return tour, trace


def nearest_neighbor_all_starts(points: PointSet) -> Dict[str, Any]:
    """Run nearest-neighbor from every start; the worst start is what an adversary picks."""
    matrix = points.distance_matrix()
    lengths = [nearest_neighbor_tour(points, s, distance_matrix=matrix)[0].length for s in range(len(points))]
    worst = max(range(len(lengths)), key=lambda s: (lengths[s], -s))
    best = min(range(len(lengths)), key=lambda s: (lengths[s], s))
    return {
        'lengths': lengths,
        'min': lengths[best],
        'median': statistics.median(lengths),
        'max': lengths[worst],
        'best_start': best,
        'worst_start': worst,
    }


def _candidate_edges(points: PointSet) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All pairs i < j in lexicographic order with their lengths."""
    n = len(points)
    coords = points.points
    heads, tails, lengths = [], [], []
    for i in range(n - 1):
        heads.append(np.full(n - i - 1, i, dtype=np.int32))
        tails.append(np.arange(i + 1, n, dtype=np.int32))
        lengths.append(distances_from(points.space, coords[i], coords[i + 1:]))
    return np.concatenate(heads), np.concatenate(tails), np.concatenate(lengths)


def greedy_tour(points: PointSet, tie_rule: str = 'length-then-lex') -> Tuple[Tour, SelectionTrace]:
    """
    Accept edges shortest first while every degree stays <= 2 and no cycle
    shorter than n closes; union-find tracks the path fragments.
    """
    n = len(points)
    if n < 3:
        raise SizeLimitError('greedy_tour', n, 3)
    _check_tie_rule(tie_rule, 'length-then-lex')

    heads, tails, lengths = _candidate_edges(points)
    # stable sort keeps the lexicographic (i, j) order among equal lengths
    ranking = np.argsort(lengths, kind='stable')

    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    degree = np.zeros(n, dtype=np.int8)
    adjacency: List[List[int]] = [[] for _ in range(n)]
    steps: List[TraceStep] = []
    chunk = max(4 * n, 1024)
    pos = 0
    while len(steps) < n and pos < len(ranking):
        idx = ranking[pos:pos + chunk]
        pos += chunk
        ci = heads[idx]
        cj = tails[idx]
        # degrees only grow, so edges failing here can never be accepted later
        open_edges = np.flatnonzero((degree[ci] < 2) & (degree[cj] < 2))
        for e in open_edges:
            u = int(ci[e])
            v = int(cj[e])
            if degree[u] >= 2 or degree[v] >= 2:
                continue
            ru, rv = find(u), find(v)
            if ru == rv and len(steps) < n - 1:
                continue
            if ru != rv:
                parent[ru] = rv
            degree[u] += 1
            degree[v] += 1
            adjacency[u].append(v)
            adjacency[v].append(u)
            steps.append(TraceStep(u, v, float(lengths[idx[e]])))
            if len(steps) == n:
                break

    if len(steps) != n:
        raise HeuristicInvariantError(f'greedy accepted {len(steps)} edges, expected {n}')
    if find(steps[-1].center) != find(steps[-1].partner) or any(len(a) != 2 for a in adjacency):
        raise HeuristicInvariantError('greedy edges do not form a single Hamiltonian cycle')

    order = [0]
    prev, current = -1, 0
    for _ in range(n - 1):
        a, b = adjacency[current]
        nxt = min(a, b) if prev < 0 else (b if a == prev else a)
        order.append(nxt)
        prev, current = current, nxt
    if len(set(order)) != n:
        raise HeuristicInvariantError('greedy cycle does not visit every point exactly once')

    length = math.fsum(s.radius for s in steps)
    tour = Tour(tuple(order), length, SolverTag.GREEDY, seed=points.seed)
    return tour, SelectionTrace(tuple(steps), SolverTag.GREEDY, n)


def exact_tour_dp(points: PointSet) -> Tour:
    """Held-Karp over (subset, endpoint) states, one popcount layer at a time."""
    n = len(points)
    if not 3 <= n <= EXACT_DP_MAX:
        raise SizeLimitError('exact_tour_dp', n, 3, EXACT_DP_MAX)

    matrix = points.distance_matrix()
    m = n - 1  # point 0 is the fixed start; bit k stands for point k + 1
    full = 1 << m
    sub = matrix[1:, 1:]
    dp = np.full((full, m), np.inf)
    parent = np.full((full, m), -1, dtype=np.int8)
    for k in range(m):
        dp[1 << k, k] = matrix[0, k + 1]

    masks = np.arange(full, dtype=np.int64)
    popcount = np.zeros(full, dtype=np.int64)
    for k in range(m):
        popcount += (masks >> k) & 1

    for size in range(2, m + 1):
        layer = masks[popcount == size]
        for j in range(m):
            sel = layer[((layer >> j) & 1) == 1]
            if not len(sel):
                continue
            cand = dp[sel ^ (1 << j)] + sub[:, j][None, :]
            best = np.argmin(cand, axis=1)
            dp[sel, j] = cand[np.arange(len(sel)), best]
            parent[sel, j] = best

    last = int(np.argmin(dp[full - 1] + matrix[1:, 0]))
    path = []
    mask, j = full - 1, last
    while j >= 0:
        path.append(j + 1)
        prev = int(parent[mask, j])
        mask ^= 1 << j
        j = prev
    order = (0,) + tuple(reversed(path))
    return Tour(order, tour_length(points, order), SolverTag.EXACT_DP, seed=points.seed)


def brute_force_tour(points: PointSet) -> Tour:
    """Enumerate the (n-1)!/2 distinct cycles through point 0."""
    n = len(points)
    if not 3 <= n <= BRUTE_FORCE_MAX:
        raise SizeLimitError('brute_force_tour', n, 3, BRUTE_FORCE_MAX)

    d = points.distance_matrix().tolist()
    best_cost = math.inf
    best: Tuple[int, ...] = ()
    for perm in itertools.permutations(range(1, n)):
        if perm[0] > perm[-1]:
            continue  # reversed copy of a cycle already seen
        cost = d[0][perm[0]] + d[perm[-1]][0]
        for a, b in zip(perm, perm[1:]):
            cost += d[a][b]
        if cost < best_cost:
            best_cost = cost
            best = perm
    order = (0,) + best
    return Tour(order, tour_length(points, order), SolverTag.BRUTE_FORCE, seed=points.seed)


def two_opt_improve(points: PointSet, tour: Tour, max_passes: int = 50) -> Tour:
    """First-improvement 2-opt; never returns a longer tour than it was given."""
    n = tour.n
    if not is_permutation(tour.order, len(points)):
        raise ValueError('tour order is not a permutation of the point indices')
    unchanged = Tour(tour.order, tour.length, SolverTag.TWO_OPT, seed=tour.seed, start=tour.start)
    if n < 4:
        return unchanged

    matrix = points.distance_matrix()
    route = np.array(tour.order, dtype=np.int64)
    moved = False
    for _ in range(max_passes):
        improved = False
        for i in range(n - 2):
            a, b = route[i], route[i + 1]
            # with i = 0 the edge ending at position n - 1 shares route[0]
            last = n - 1 if i > 0 else n - 2
            js = np.arange(i + 2, last + 1)
            if not len(js):
                continue
            c = route[js]
            d = route[(js + 1) % n]
            delta = matrix[a, c] + matrix[b, d] - matrix[a, b] - matrix[c, d]
            hits = np.flatnonzero(delta < -IMPROVEMENT_EPS)
            if hits.size:
                j = int(js[hits[0]])
                route[i + 1:j + 1] = route[i + 1:j + 1][::-1].copy()
                improved = True
                moved = True
        if not improved:
            break

    if not moved:
        return unchanged
    order = tuple(int(x) for x in route)
    length = tour_length(points, order)
    if length > tour.length:
        return unchanged
    return Tour(order, length, SolverTag.TWO_OPT, seed=tour.seed, start=tour.start)


def verify_trace(points: PointSet, trace: SelectionTrace, rtol: float = 1e-12) -> Dict[str, Any]:
    """Re-scan a trace: NN radii must be minimal over the unvisited set, greedy radii nondecreasing."""
    violations: List[Dict[str, Any]] = []
    if trace.source == SolverTag.NEAREST_NEIGHBOR:
        if len(trace.steps) != trace.n - 1:
            violations.append({'step': None, 'reason': f'{len(trace.steps)} steps for n = {trace.n}'})
        unvisited = np.ones(trace.n, dtype=bool)
        if trace.steps:
            unvisited[trace.steps[0].center] = False
        for k, step in enumerate(trace.steps):
            d = points.distances_from_index(step.center)[unvisited]
            nearest = float(d.min()) if d.size else math.inf
            if nearest < step.radius * (1.0 - rtol):
                violations.append({'step': k, 'reason': 'closer unvisited point', 'radius': step.radius,
                                   'nearest': nearest})
            unvisited[step.partner] = False
    else:
        if len(trace.steps) != trace.n:
            violations.append({'step': None, 'reason': f'{len(trace.steps)} edges for n = {trace.n}'})
        path = trace.path_steps
        for k in range(1, len(path)):
            if path[k].radius < path[k - 1].radius:
                violations.append({'step': k, 'reason': 'edge shorter than its predecessor',
                                   'radius': path[k].radius, 'previous': path[k - 1].radius})
    return {'source': trace.source.value, 'ok': not violations, 'violations': violations}


def solve(points: PointSet, solver: SolverTag, start: int = 0,
          two_opt_passes: int = 50) -> Tuple[Tour, Optional[SelectionTrace]]:
    """Dispatch by tag; two-opt polishes a nearest-neighbor tour."""
    if solver == SolverTag.NEAREST_NEIGHBOR:
        return nearest_neighbor_tour(points, start)
    if solver == SolverTag.GREEDY:
        return greedy_tour(points)
    if solver == SolverTag.EXACT_DP:
        return exact_tour_dp(points), None
    if solver == SolverTag.BRUTE_FORCE:
        return brute_force_tour(points), None
    seed_tour, _ = nearest_neighbor_tour(points, start)
    return two_opt_improve(points, seed_tour, two_opt_passes), None
