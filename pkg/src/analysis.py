"""
Executable versions of the two tour-length bounds.

Upper bound (heuristic tours): the ball family read off a selection trace,
the (★) ordering property, its dyadic partition by radius, the packing
count per class and the L <= sum of radii chain.

Lower bound (optimal tours): isolated points at probe radius
r = (1 / (D n))^(1/d), their count Z, and the accounting L >= Z * r.

Checks never raise on a failed invariant; they return a CheckReport whose
violations list carries the outcome.
"""

import logging
import math
import statistics
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import stats as sp_stats
from scipy.spatial import cKDTree

try:
    from .errors import (
        EmptyTraceError,
        FamilyMismatchError,
        InsufficientDataError,
        RadiusExceedsDiameterError,
    )
    from .solvers import SelectionTrace, SolverTag, Tour
    from .spaces import (
        Metric,
        PointSet,
        RegularityWitness,
        SpaceKind,
        SpaceSpec,
        derive_seed,
        distances_from,
        sample,
    )
except ImportError:
    from errors import (
        EmptyTraceError,
        FamilyMismatchError,
        InsufficientDataError,
        RadiusExceedsDiameterError,
    )
    from solvers import SelectionTrace, SolverTag, Tour
    from spaces import (
        Metric,
        PointSet,
        RegularityWitness,
        SpaceKind,
        SpaceSpec,
        derive_seed,
        distances_from,
        sample,
    )

logger = logging.getLogger(__name__)

# relative slack for comparisons between recomputed distances
RTOL = 1e-12
LENGTH_TOL = 1e-9
MAX_REPORTED_VIOLATIONS = 50


class CheckReport(BaseModel):
    check: str
    instance_id: str = ""
    violations: List[Dict[str, Any]] = []
    statistics: Dict[str, Any] = {}

    @property
    def violation_count(self) -> int:
        return int(self.statistics.get('violation_count', len(self.violations)))

    @property
    def passed(self) -> bool:
        return self.violation_count == 0


@dataclass(frozen=True)
class Ball:
    center: int
    radius: float
    step: int


@dataclass(frozen=True)
class BallFamily:
    balls: Tuple[Ball, ...]
    source: SolverTag
    n_points: int
    closing_edge: Optional[float] = None
    dropped_zero: int = 0

    def __len__(self) -> int:
        return len(self.balls)

    @property
    def radii(self) -> np.ndarray:
        return np.array([b.radius for b in self.balls], dtype=float)

    @property
    def centers(self) -> np.ndarray:
        return np.array([b.center for b in self.balls], dtype=np.int64)


@dataclass(frozen=True)
class DyadicDecomposition:
    classes: Dict[int, Tuple[Ball, ...]]
    diam: float
    n_points: int
    k0: Optional[int] = None
    d: Optional[float] = None
    packing_constant: Optional[float] = None

    def class_of(self, ball: Ball) -> int:
        for k, members in self.classes.items():
            if ball in members:
                return k
        raise KeyError(ball)


@dataclass(frozen=True)
class IsolationStats:
    r: float
    z: int
    z_indicators: Tuple[bool, ...]
    lower_bound: float
    n: int
    d: float
    d_upper: float
    max_ball_occupancy: int = 0
    crowding_threshold: float = 0.0

    @property
    def fraction(self) -> float:
        return self.z / self.n if self.n else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'r': self.r,
            'z': self.z,
            'n': self.n,
            'fraction': self.fraction,
            'lower_bound': self.lower_bound,
            'd': self.d,
            'd_upper': self.d_upper,
            'max_ball_occupancy': self.max_ball_occupancy,
            'crowding_threshold': self.crowding_threshold,
        }


class ExponentFit(NamedTuple):
    slope: float
    intercept: float
    stderr: float

    @property
    def empirical_constant(self) -> float:
        return math.exp(self.intercept)


def _capped(violations: List[Dict[str, Any]], entry: Dict[str, Any]):
    if len(violations) < MAX_REPORTED_VIOLATIONS:
        violations.append(entry)


# --- ball families ----------------------------------------------------------

def extract_ball_family(trace: SelectionTrace, source: Optional[SolverTag] = None) -> BallFamily:
    """
    Nearest-neighbor: ball i is centered at the i-th visited point with the
    step distance as radius. Greedy: each non-closing edge gives one ball per
    endpoint, radius = edge length, in selection order. Zero radii are dropped.
    """
    if not trace.steps:
        raise EmptyTraceError('cannot build a ball family from an empty trace')
    source = trace.source if source is None else source
    if source != trace.source:
        raise FamilyMismatchError(f'trace comes from {trace.source.value}, not {source.value}')

    balls: List[Ball] = []
    dropped = 0
    for k, step in enumerate(trace.path_steps):
        if step.radius <= 0.0:
            dropped += 1 if source == SolverTag.NEAREST_NEIGHBOR else 2
            continue
        balls.append(Ball(step.center, step.radius, k))
        if source == SolverTag.GREEDY:
            balls.append(Ball(step.partner, step.radius, k))
    if dropped:
        logger.info(f"Dropped {dropped} zero-radius balls (duplicate points) from the {source.value} family")

    closing = trace.closing_step
    return BallFamily(
        balls=tuple(balls),
        source=source,
        n_points=trace.n,
        closing_edge=closing.radius if closing is not None else None,
        dropped_zero=dropped,
    )


def check_star_property(family: BallFamily, points: PointSet, instance_id: str = "") -> CheckReport:
    """For every pair i < j the earlier open ball must not contain the later center."""
    centers = family.centers
    radii = family.radii
    coords = points.points[centers] if len(centers) else np.empty((0, points.space.ambient_dim))
    violations: List[Dict[str, Any]] = []
    count = weak = shared = 0
    for i in range(len(family) - 1):
        d = distances_from(points.space, coords[i], coords[i + 1:])
        inside = d < radii[i] * (1.0 - RTOL)
        weak += int(np.count_nonzero(d < np.minimum(radii[i], radii[i + 1:]) * (1.0 - RTOL)))
        for off in np.flatnonzero(inside):
            j = i + 1 + int(off)
            same = bool(centers[i] == centers[j])
            count += 1
            shared += same
            _capped(violations, {
                'i': i, 'j': j,
                'center_i': int(centers[i]), 'center_j': int(centers[j]),
                'distance': float(d[off]), 'radius_i': float(radii[i]),
                'shared_center': same,
            })

    m = len(family)
    if count and family.source == SolverTag.GREEDY and count > shared:
        logger.warning(f"Research note: greedy family {instance_id or ''} has {count - shared} "
                       f"(★) violations between distinct centers")
    return CheckReport(
        check='star',
        instance_id=instance_id,
        violations=violations,
        statistics={
            'source': family.source.value,
            'balls': m,
            'pairs': m * (m - 1) // 2,
            'violation_count': count,
            'weak_violation_count': weak,
            'shared_center_violations': shared,
            'distinct_center_violations': count - shared,
            'dropped_zero': family.dropped_zero,
        },
    )


# --- dyadic packing ---------------------------------------------------------

def dyadic_class(radius: float, diam: float) -> int:
    """Index j with radius / diam in (2^-j, 2^-(j-1)]."""
    if radius <= 0.0:
        raise ValueError(f'radius must be positive, got {radius}')
    x = radius / diam
    if x > 1.0:
        if x > 1.0 + RTOL:
            raise RadiusExceedsDiameterError(f'radius {radius} exceeds the diameter {diam}')
        x = 1.0
    mantissa, exponent = math.frexp(x)
    # x = mantissa * 2^exponent with mantissa in [0.5, 1)
    return 2 - exponent if mantissa == 0.5 else 1 - exponent


def packing_constant(witness: RegularityWitness, diam: float) -> float:
    """C with |class k| <= C 2^(kd): disjoint balls of radius 2^-(k+1) diam each carry c_lower r^d mass."""
    return 2.0 ** witness.d / (witness.c_lower * diam ** witness.d)


def smallest_saturating_class(n: int, constant: float, d: float) -> int:
    """Smallest k >= 1 with constant * 2^(kd) >= n."""
    k = max(1, math.ceil(math.log2(max(n, 1) / constant) / d)) if n > constant else 1
    while constant * 2.0 ** (k * d) < n:
        k += 1
    while k > 1 and constant * 2.0 ** ((k - 1) * d) >= n:
        k -= 1
    return k


def dyadic_partition(family: BallFamily, diam: float,
                     witness: Optional[RegularityWitness] = None) -> DyadicDecomposition:
    classes: Dict[int, List[Ball]] = {}
    for ball in family.balls:
        classes.setdefault(dyadic_class(ball.radius, diam), []).append(ball)
    k0 = constant = d = None
    if witness is not None:
        constant = packing_constant(witness, diam)
        d = witness.d
        k0 = smallest_saturating_class(family.n_points, constant, d)
    return DyadicDecomposition(
        classes={k: tuple(v) for k, v in sorted(classes.items())},
        diam=diam,
        n_points=family.n_points,
        k0=k0,
        d=d,
        packing_constant=constant,
    )


def check_packing(decomp: DyadicDecomposition, points: PointSet, witness: RegularityWitness,
                  instance_id: str = "") -> CheckReport:
    """
    (a) balls of class k shrunk to radius 2^-(k+1) diam are pairwise disjoint,
        i.e. their centers are at least 2^-k diam apart;
    (b) |class k| against C_pack 2^(kd), reported only.
    """
    constant = decomp.packing_constant or packing_constant(witness, decomp.diam)
    violations: List[Dict[str, Any]] = []
    count = 0
    per_class: Dict[str, Dict[str, Any]] = {}
    exceedances: List[int] = []
    for k, members in decomp.classes.items():
        threshold = 2.0 ** -k * decomp.diam
        coords = points.points[[b.center for b in members]]
        radii = np.array([b.radius for b in members])
        own_half_overlaps = 0
        min_gap = math.inf
        for a in range(len(members) - 1):
            d = distances_from(points.space, coords[a], coords[a + 1:])
            if d.size:
                min_gap = min(min_gap, float(d.min()))
            own_half_overlaps += int(np.count_nonzero(d < (radii[a] + radii[a + 1:]) / 2.0 * (1.0 - RTOL)))
            for off in np.flatnonzero(d < threshold * (1.0 - RTOL)):
                b = a + 1 + int(off)
                count += 1
                _capped(violations, {
                    'class': k, 'a': members[a].step, 'b': members[b].step,
                    'center_a': members[a].center, 'center_b': members[b].center,
                    'distance': float(d[off]), 'required': threshold,
                })
        bound = constant * 2.0 ** (k * witness.d)
        if len(members) > bound:
            exceedances.append(k)
        per_class[str(k)] = {
            'count': len(members),
            'count_bound': bound,
            'shrunk_radius': threshold / 2.0,
            'min_center_distance': None if min_gap == math.inf else min_gap,
            'own_half_radius_overlaps': own_half_overlaps,
        }
    return CheckReport(
        check='packing',
        instance_id=instance_id,
        violations=violations,
        statistics={
            'violation_count': count,
            'packing_constant': constant,
            'd': witness.d,
            'k0': decomp.k0,
            'classes': per_class,
            'count_bound_exceedances': exceedances,
        },
    )


def bound_chain(family: BallFamily, tour: Tour, decomp: DyadicDecomposition,
                instance_id: str = "") -> CheckReport:
    """L <= sum of radii + closing edge, plus per-class sums against the packing envelope."""
    if family.n_points != tour.n or family.source != tour.solver_tag:
        raise FamilyMismatchError(
            f'family ({family.source.value}, n={family.n_points}) does not match '
            f'tour ({tour.solver_tag.value}, n={tour.n})'
        )
    if family.closing_edge is None:
        raise FamilyMismatchError('ball family carries no closing edge')

    radii_sum = math.fsum(b.radius for b in family.balls)
    closing = family.closing_edge
    length = tour.length
    tol = LENGTH_TOL * max(1.0, length)
    violations: List[Dict[str, Any]] = []
    if length > radii_sum + closing + tol:
        violations.append({'inequality': 'L <= sum_radii + closing_edge', 'L': length,
                           'rhs': radii_sum + closing})
    if length > radii_sum + decomp.diam + tol:
        violations.append({'inequality': 'L <= sum_radii + diam', 'L': length,
                           'rhs': radii_sum + decomp.diam})

    class_sums: Dict[str, Dict[str, Any]] = {}
    truncated = tail = 0.0
    for k, members in decomp.classes.items():
        entry: Dict[str, Any] = {'count': len(members), 'sum_radii': math.fsum(b.radius for b in members)}
        if decomp.packing_constant is not None and decomp.d is not None:
            entry['envelope'] = decomp.packing_constant * 2.0 ** (k * (decomp.d - 1.0)) * decomp.diam
        if decomp.k0 is not None and k > decomp.k0:
            tail += entry['sum_radii']
        class_sums[str(k)] = entry

    statistics_: Dict[str, Any] = {
        'source': family.source.value,
        'violation_count': len(violations),
        'L': length,
        'sum_radii': radii_sum,
        'closing_edge': closing,
        'gap': radii_sum + closing - length,
        'tight': abs(radii_sum + closing - length) <= tol,
        'diam': decomp.diam,
        'classes': class_sums,
    }
    if decomp.k0 is not None and decomp.packing_constant is not None and decomp.d is not None:
        truncated = math.fsum(
            decomp.packing_constant * 2.0 ** (k * (decomp.d - 1.0)) * decomp.diam
            for k in range(1, decomp.k0 + 1)
        )
        tail_bound = decomp.n_points * 2.0 ** -decomp.k0 * decomp.diam
        statistics_.update({
            'k0': decomp.k0,
            'truncated_envelope': truncated,
            'tail_sum': tail,
            'tail_bound': tail_bound,
            'theorem_bound': truncated + tail_bound + decomp.diam,
        })
    return CheckReport(check='bound-chain', instance_id=instance_id, violations=violations,
                       statistics=statistics_)


# --- isolated points --------------------------------------------------------

def _kdtree(points: PointSet) -> Tuple[cKDTree, float]:
    spec = points.space
    p = 2.0 if spec.metric == Metric.EUCLIDEAN else np.inf
    boxsize = 1.0 if spec.kind == SpaceKind.FLAT_TORUS else None
    return cKDTree(points.points, boxsize=boxsize), p


def probe_radius(n: int, witness: RegularityWitness) -> float:
    return (1.0 / (witness.d_upper * n)) ** (1.0 / witness.d)


def isolation_stats(points: PointSet, witness: RegularityWitness,
                    radius: Optional[float] = None) -> IsolationStats:
    """Count points with no other sample point strictly within r = (1/(D n))^(1/d)."""
    n = len(points)
    r = probe_radius(n, witness) if radius is None else radius
    threshold = math.log(n) ** 2 if n > 1 else 0.0
    if n == 1:
        return IsolationStats(r, 1, (True,), r, 1, witness.d, witness.d_upper, 0, threshold)

    tree, p = _kdtree(points)
    dists, _ = tree.query(points.points, k=2, p=p)
    indicators = dists[:, 1] >= r
    z = int(np.count_nonzero(indicators))
    occupancy = tree.query_ball_point(points.points, r * (1.0 - RTOL), p=p, return_length=True)
    max_other = int(np.max(occupancy)) - 1
    if max_other > threshold:
        logger.info(f"A probe ball holds {max_other} other points, above log^2 n = {threshold:.1f}")
    return IsolationStats(
        r=r,
        z=z,
        z_indicators=tuple(bool(x) for x in indicators),
        lower_bound=z * r,
        n=n,
        d=witness.d,
        d_upper=witness.d_upper,
        max_ball_occupancy=max_other,
        crowding_threshold=threshold,
    )


def verify_lower_bound(points: PointSet, stats: IsolationStats, tour: Tour,
                       instance_id: str = "") -> CheckReport:
    """Every isolated point has two tour edges of length >= r, each shared by at most two of them."""
    if tour.n != len(points):
        raise FamilyMismatchError(f'tour has {tour.n} points, instance has {len(points)}')
    violations = []
    if tour.length < stats.lower_bound - LENGTH_TOL:
        violations.append({'L': tour.length, 'lower_bound': stats.lower_bound, 'z': stats.z, 'r': stats.r})
    n = len(points)
    scale = n ** (1.0 - 1.0 / stats.d)
    return CheckReport(
        check='lower-bound',
        instance_id=instance_id,
        violations=violations,
        statistics={
            'violation_count': len(violations),
            'solver': tour.solver_tag.value,
            'L': tour.length,
            'lower_bound': stats.lower_bound,
            'z': stats.z,
            'r': stats.r,
            'd': stats.d,
            'd_upper': stats.d_upper,
            'empirical_constant': tour.length / scale,
            'lower_bound_constant': stats.lower_bound / scale,
        },
    )


def isolation_concentration(spec: SpaceSpec, n: int, trials: int, seed: int,
                            witness: RegularityWitness) -> Dict[str, Any]:
    """Monte Carlo view of how tightly Z concentrates around its mean."""
    zs = [isolation_stats(sample(spec, n, derive_seed(seed, n, t)), witness).z for t in range(trials)]
    mean = statistics.fmean(zs)
    max_drop = max(mean - z for z in zs)
    return {
        'n': n,
        'trials': trials,
        'mean_z': mean,
        'mean_fraction': mean / n,
        'std_z': statistics.pstdev(zs),
        'min_z': min(zs),
        'fraction_of_trials_above_third': sum(z >= n / 3.0 for z in zs) / trials,
        'expected_fraction_lower': math.exp(-1.0),
        'max_downward_deviation': max_drop,
        'deviation_scale': n ** (2.0 / 3.0),
        'concentrated': max_drop <= n ** (2.0 / 3.0),
        'z': zs,
    }


# --- scaling ----------------------------------------------------------------

def fit_exponent(records: Iterable[Sequence[float]]) -> ExponentFit:
    """Least squares of log(length) on log(n)."""
    data = np.asarray([tuple(r)[:2] for r in records], dtype=float)
    if data.ndim != 2 or len(data) < 3:
        raise InsufficientDataError(f'need at least 3 (n, length) records, got {len(data)}')
    if len(np.unique(data[:, 0])) < 3:
        raise InsufficientDataError('need at least 3 distinct n values')
    if np.any(data <= 0):
        raise InsufficientDataError('n and length must be positive for a log-log fit')
    fit = sp_stats.linregress(np.log(data[:, 0]), np.log(data[:, 1]))
    return ExponentFit(float(fit.slope), float(fit.intercept), float(fit.stderr))


def mean_length_by_n(records: Iterable[Sequence[float]]) -> Dict[int, float]:
    grouped: Dict[int, List[float]] = {}
    for n, length in ((int(r[0]), float(r[1])) for r in records):
        grouped.setdefault(n, []).append(length)
    return {n: statistics.fmean(v) for n, v in sorted(grouped.items())}


def trend_is_monotone(records: Iterable[Sequence[float]]) -> bool:
    """Mean length per n must not decrease as n grows."""
    means = list(mean_length_by_n(records).values())
    return all(b >= a for a, b in zip(means, means[1:]))


# --- check suites -----------------------------------------------------------

def check_suite(points: PointSet, tour: Tour, trace: Optional[SelectionTrace],
                witness: RegularityWitness, checks: Sequence[str],
                stats: Optional[IsolationStats] = None, instance_id: str = "") -> List[CheckReport]:
    """Run the named checks on one solved instance; trace-based checks need a heuristic trace."""
    reports: List[CheckReport] = []
    diam = points.space.diameter
    trace_checks = [c for c in checks if c in ('star', 'packing', 'bound-chain')]
    if trace_checks and trace is not None:
        family = extract_ball_family(trace)
        if 'star' in trace_checks:
            reports.append(check_star_property(family, points, instance_id))
        if 'packing' in trace_checks or 'bound-chain' in trace_checks:
            decomp = dyadic_partition(family, diam, witness)
            if 'packing' in trace_checks:
                reports.append(check_packing(decomp, points, witness, instance_id))
            if 'bound-chain' in trace_checks:
                reports.append(bound_chain(family, tour, decomp, instance_id))
    if 'isolation' in checks or 'lower-bound' in checks:
        stats = stats or isolation_stats(points, witness)
        if 'isolation' in checks:
            reports.append(CheckReport(check='isolation', instance_id=instance_id,
                                       statistics={'violation_count': 0, **stats.to_dict()}))
        if 'lower-bound' in checks:
            reports.append(verify_lower_bound(points, stats, tour, instance_id))
    for report in reports:
        report.statistics['source'] = tour.solver_tag.value
    return reports


def is_guaranteed_failure(report: CheckReport) -> bool:
    """Greedy (★) and greedy packing outcomes are research data, not failures."""
    if report.passed or report.check == 'isolation':
        return False
    if report.check in ('star', 'packing') and report.statistics.get('source') == SolverTag.GREEDY.value:
        return False
    return True
