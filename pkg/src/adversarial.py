"""
Search for small instances on which the heuristics do badly relative to the
optimum, and tabulate heuristic/optimal ratios on random instances.
"""

import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, validator
from scipy.spatial import cKDTree

try:
    from .errors import SizeLimitError
    from .solvers import (
        EXACT_DP_MAX,
        exact_tour_dp,
        greedy_tour,
        nearest_neighbor_all_starts,
        nearest_neighbor_tour,
        two_opt_improve,
    )
    from .spaces import PointSet, SpaceKind, SpaceSpec, derive_seed, sample, similarity_dimension
except ImportError:
    from errors import SizeLimitError
    from solvers import (
        EXACT_DP_MAX,
        exact_tour_dp,
        greedy_tour,
        nearest_neighbor_all_starts,
        nearest_neighbor_tour,
        two_opt_improve,
    )
    from spaces import PointSet, SpaceKind, SpaceSpec, derive_seed, sample, similarity_dimension

logger = logging.getLogger(__name__)

SEARCH_MIN_N = 6
SEARCH_MAX_N = 14
REJECTIONS_BEFORE_HALVING = 50
REFERENCE_CLOUD_SIZE = 20_000
RATIO_TOL = 1e-9


class AdversarialResult(BaseModel):
    space: SpaceSpec
    coordinates: List[List[float]]
    ratio_nn: float
    ratio_greedy: float
    opt_length: float
    opt_vs_random_scale: float
    nn_worst_length: float
    nn_worst_start: int
    greedy_length: float
    exact_order: Tuple[int, ...]
    initial_ratio_nn: float
    trajectory: List[Tuple[int, float]]
    seed: int
    iterations: int
    restart: int = 0
    restarts: int = 1
    baseline: Optional[Dict[str, Any]] = None

    @validator('ratio_nn', 'ratio_greedy')
    def validate_ratio(cls, v):
        if v < 1.0 - RATIO_TOL:
            raise ValueError(f'heuristic beat the exact optimum (ratio {v})')
        return v

    @property
    def points(self) -> PointSet:
        return PointSet(np.array(self.coordinates), self.space, self.seed)

    def to_json_dict(self) -> Dict[str, Any]:
        n = len(self.coordinates)
        return {
            'space': self.space.tag,
            'n': n,
            'seed': self.seed,
            'iterations': self.iterations,
            'restarts': self.restarts,
            'restart': self.restart,
            'ratio_nn': self.ratio_nn,
            'ratio_greedy': self.ratio_greedy,
            'initial_ratio_nn': self.initial_ratio_nn,
            'opt_length': self.opt_length,
            'opt_vs_random_scale': self.opt_vs_random_scale,
            'nn_worst_length': self.nn_worst_length,
            'nn_worst_start': self.nn_worst_start,
            'greedy_length': self.greedy_length,
            'points': self.coordinates,
            'tour': {
                'solver': 'exact-dp',
                'order': list(self.exact_order),
                'length': self.opt_length,
                'n': n,
                'seed': None,
            },
            'trajectory': [list(step) for step in self.trajectory],
            'baseline': self.baseline,
        }


def scale_exponent(spec: SpaceSpec) -> float:
    """1 - 1/d with d the similarity (or ambient) dimension."""
    return 1.0 - 1.0 / similarity_dimension(spec)


def instance_ratios(points: PointSet) -> Dict[str, Any]:
    """NN (worst start) and greedy lengths over the exact optimum, all recomputed."""
    n = len(points)
    sweep = nearest_neighbor_all_starts(points)
    greedy, _ = greedy_tour(points)
    exact = exact_tour_dp(points)
    opt = exact.length
    if opt > 0.0:
        ratio_nn = sweep['max'] / opt
        ratio_greedy = greedy.length / opt
    else:
        # every tour over coincident points has length 0
        ratio_nn = ratio_greedy = 1.0
    return {
        'n': n,
        'ratio_nn': ratio_nn,
        'ratio_greedy': ratio_greedy,
        'opt_length': opt,
        'opt_scale': opt / n ** scale_exponent(points.space),
        'nn_worst_length': sweep['max'],
        'nn_worst_start': sweep['worst_start'],
        'greedy_length': greedy.length,
        'exact_order': exact.order,
    }


def _worst_nn_ratio(points: PointSet) -> float:
    opt = exact_tour_dp(points).length
    worst = nearest_neighbor_all_starts(points)['max']
    return worst / opt if opt > 0.0 else 1.0


class _Projector:
    """Maps a perturbed coordinate back into the space."""

    def __init__(self, spec: SpaceSpec, seed: int):
        self.spec = spec
        self.tree: Optional[cKDTree] = None
        self.cloud: Optional[np.ndarray] = None
        if spec.kind == SpaceKind.IFS_ATTRACTOR:
            self.cloud = sample(spec, REFERENCE_CLOUD_SIZE, derive_seed(seed, 'reference')).points
            self.tree = cKDTree(self.cloud)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.spec.kind == SpaceKind.UNIT_CUBE:
            return np.clip(x, 0.0, 1.0)
        if self.spec.kind == SpaceKind.FLAT_TORUS:
            y = np.mod(x, 1.0)
            return np.where(y >= 1.0, 0.0, y)
        _, idx = self.tree.query(x)
        return self.cloud[idx].copy()


def _climb(spec: SpaceSpec, n: int, iterations: int, seed: int, restart: int,
           step_frac: float, project: _Projector) -> Dict[str, Any]:
    rng = np.random.default_rng(derive_seed(seed, 'restart', restart))
    coords = np.array(sample(spec, n, derive_seed(seed, n, 'start', restart)).points)
    incumbent = _worst_nn_ratio(PointSet(coords, spec))
    initial = incumbent
    trajectory: List[Tuple[int, float]] = [(0, incumbent)]
    step = step_frac * spec.diameter
    rejections = 0

    for it in range(1, iterations + 1):
        i = int(rng.integers(n))
        moved = project(coords[i] + rng.normal(0.0, step, size=spec.ambient_dim))
        candidate = coords.copy()
        candidate[i] = moved
        ratio = _worst_nn_ratio(PointSet(candidate, spec))
        if ratio > incumbent:
            coords = candidate
            incumbent = ratio
            trajectory.append((it, ratio))
            rejections = 0
            continue
        rejections += 1
        if rejections >= REJECTIONS_BEFORE_HALVING:
            step /= 2.0
            rejections = 0

    logger.info(f"Restart {restart}: NN ratio {initial:.4f} -> {incumbent:.4f} "
                f"({len(trajectory) - 1} accepted moves)")
    return {'restart': restart, 'coords': coords, 'ratio': incumbent,
            'initial': initial, 'trajectory': trajectory}


def adversarial_search(
    spec: SpaceSpec,
    n: int,
    iterations: int,
    seed: int,
    restarts: int = 1,
    step_frac: float = 0.05,
    threads: int = 1,
    baseline_trials: int = 0,
) -> AdversarialResult:
    """
    Hill-climb on the worst-start NN ratio: move one point by a Gaussian step
    (projected back into the space) and keep the move only if the ratio grows.
    The step halves after 50 consecutive rejections. Restarts are independent
    and the best one wins, ties going to the lowest restart index.
    """
    if not SEARCH_MIN_N <= n <= SEARCH_MAX_N:
        raise SizeLimitError('adversarial_search', n, SEARCH_MIN_N, SEARCH_MAX_N)
    if iterations < 0:
        raise ValueError(f'iterations must be >= 0, got {iterations}')
    if restarts < 1:
        raise ValueError(f'restarts must be >= 1, got {restarts}')

    project = _Projector(spec, seed)
    runs: List[Dict[str, Any]] = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        futures = {
            executor.submit(_climb, spec, n, iterations, seed, r, step_frac, project): r
            for r in range(restarts)
        }
        for future in as_completed(futures):
            runs.append(future.result())

    best = max(runs, key=lambda run: (run['ratio'], -run['restart']))
    points = PointSet(best['coords'], spec, seed)
    ratios = instance_ratios(points)
    baseline = None
    if baseline_trials > 0:
        baseline = compare_to_baseline(random_baseline(spec, n, baseline_trials, seed, threads), ratios)

    return AdversarialResult(
        space=spec,
        coordinates=points.coordinates(),
        ratio_nn=ratios['ratio_nn'],
        ratio_greedy=ratios['ratio_greedy'],
        opt_length=ratios['opt_length'],
        opt_vs_random_scale=ratios['opt_scale'],
        nn_worst_length=ratios['nn_worst_length'],
        nn_worst_start=ratios['nn_worst_start'],
        greedy_length=ratios['greedy_length'],
        exact_order=ratios['exact_order'],
        initial_ratio_nn=best['initial'],
        trajectory=best['trajectory'],
        seed=seed,
        iterations=iterations,
        restart=best['restart'],
        restarts=restarts,
        baseline=baseline,
    )


def _profile_row(spec: SpaceSpec, n: int, trial: int, seed: int, two_opt_passes: int) -> Dict[str, Any]:
    trial_seed = derive_seed(seed, n, trial)
    points = sample(spec, n, trial_seed)
    if n <= EXACT_DP_MAX:
        ratios = instance_ratios(points)
        exact = True
    else:
        # upper proxy for the optimum: the better of 2-opt from NN and from greedy
        sweep = nearest_neighbor_all_starts(points)
        greedy, _ = greedy_tour(points)
        nn, _ = nearest_neighbor_tour(points, 0)
        proxy = min(two_opt_improve(points, nn, two_opt_passes).length,
                    two_opt_improve(points, greedy, two_opt_passes).length)
        ratios = {
            'ratio_nn': sweep['max'] / proxy if proxy > 0 else 1.0,
            'ratio_greedy': greedy.length / proxy if proxy > 0 else 1.0,
            'opt_length': proxy,
            'opt_scale': proxy / n ** scale_exponent(spec),
        }
        exact = False
    return {
        'n': n,
        'trial': trial,
        'seed': trial_seed,
        'ratio_nn': ratios['ratio_nn'],
        'ratio_greedy': ratios['ratio_greedy'],
        'opt_length': ratios['opt_length'],
        'opt_scale': ratios['opt_scale'],
        'exact': exact,
    }


def ratio_profile(spec: SpaceSpec, n_grid: Sequence[int], trials: int, seed: int,
                  two_opt_passes: int = 50, threads: int = 1) -> List[Dict[str, Any]]:
    """One (n, ratio, opt_scale) row per random instance, ordered by (n, trial)."""
    for n in n_grid:
        if n < 3:
            raise SizeLimitError('ratio_profile', n, 3)
    proxied = [n for n in n_grid if n > EXACT_DP_MAX]
    if proxied:
        logger.warning(f"n = {proxied} exceed the exact range; ratios use a 2-opt proxy for the optimum")

    cells = [(n, t) for n in n_grid for t in range(trials)]
    rows: Dict[Tuple[int, int], Dict[str, Any]] = {}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        futures = {executor.submit(_profile_row, spec, n, t, seed, two_opt_passes): (n, t) for n, t in cells}
        for future in as_completed(futures):
            rows[futures[future]] = future.result()
    return [rows[cell] for cell in cells]


def baseline_rows(spec: SpaceSpec, n: int, trials: int, seed: int, threads: int = 1) -> List[Dict[str, Any]]:
    return ratio_profile(spec, [n], trials, derive_seed(seed, 'baseline'), threads=threads)


def summarize_baseline(rows: Sequence[Dict[str, Any]]) -> Dict[str, Any]:
    return {
        'n': rows[0]['n'],
        'trials': len(rows),
        'median_ratio_nn': statistics.median(r['ratio_nn'] for r in rows),
        'median_ratio_greedy': statistics.median(r['ratio_greedy'] for r in rows),
        'median_opt_scale': statistics.median(r['opt_scale'] for r in rows),
        'mean_opt_scale': statistics.fmean(r['opt_scale'] for r in rows),
    }


def scatter_rows(rows: Sequence[Dict[str, Any]]) -> List[Tuple[int, float, float, float]]:
    return [(r['n'], r['ratio_nn'], r['ratio_greedy'], r['opt_scale']) for r in rows]


def trajectory_is_monotone(trajectory: Sequence[Tuple[int, float]]) -> bool:
    return all(b[1] >= a[1] and b[0] > a[0] for a, b in zip(trajectory, trajectory[1:]))


def median_ratio(rows: Sequence[Dict[str, Any]], key: str = 'ratio_nn') -> float:
    values = [r[key] for r in rows]
    return statistics.median(values) if values else math.nan


def random_baseline(spec: SpaceSpec, n: int, trials: int, seed: int, threads: int = 1) -> Dict[str, Any]:
    """Medians over random instances, the yardstick for what "unusually short" means."""
    return summarize_baseline(baseline_rows(spec, n, trials, seed, threads))


def compare_to_baseline(baseline: Dict[str, Any], ratios: Dict[str, Any]) -> Dict[str, Any]:
    """Express one instance's ratio and optimum scale relative to the random medians."""
    out = dict(baseline)
    if baseline['median_opt_scale'] > 0:
        out['opt_scale_vs_median'] = ratios['opt_scale'] / baseline['median_opt_scale']
    out['ratio_nn_vs_median'] = ratios['ratio_nn'] / baseline['median_ratio_nn']
    out['ratio_nn_above_median'] = ratios['ratio_nn'] > baseline['median_ratio_nn']
    out['opt_scale_below_median'] = ratios['opt_scale'] < baseline['median_opt_scale']
    return out
