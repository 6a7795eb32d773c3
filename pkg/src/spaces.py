"""
Bounded metric spaces carrying d-Ahlfors-regular probability measures.

Three kinds of space are supported:
- unit-cube: [0,1]^dim under Lebesgue measure
- flat-torus: [0,1)^dim with wrap-around distances
- ifs-attractor: attractor of equal-ratio similitudes x -> r*x + t under its
  natural self-similar measure (Sierpinski gasket, carpet, or any user IFS)

Sampling is a pure function of (spec, n, seed). Regularity constants are
estimated from samples; they are witnesses, not proofs.
"""

import hashlib
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ValidationError, root_validator, validator

try:
    from .errors import (
        DegenerateRegressionError,
        DimensionMismatchError,
        SizeLimitError,
        SpaceConfigError,
    )
except ImportError:
    from errors import (
        DegenerateRegressionError,
        DimensionMismatchError,
        SizeLimitError,
        SpaceConfigError,
    )

logger = logging.getLogger(__name__)

DEFAULT_DEPTH = 30
# rows per block when materializing distance rows or IFS addresses
_BLOCK_ROWS = 65536


class SpaceKind(str, Enum):
    UNIT_CUBE = "unit-cube"
    FLAT_TORUS = "flat-torus"
    IFS_ATTRACTOR = "ifs-attractor"


class Metric(str, Enum):
    EUCLIDEAN = "euclidean"
    CHEBYSHEV = "chebyshev"


class IFSMap(BaseModel):
    """One similitude x -> ratio * x + translation."""

    ratio: float
    translation: Tuple[float, ...]

    class Config:
        allow_mutation = False

    @validator('ratio')
    def validate_ratio(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError(f'contraction ratio must lie in (0, 1), got {v}')
        return v

    @property
    def fixed_point(self) -> Tuple[float, ...]:
        return tuple(t / (1.0 - self.ratio) for t in self.translation)


class SpaceSpec(BaseModel):
    kind: SpaceKind
    ambient_dim: int
    metric: Metric = Metric.EUCLIDEAN
    ifs_maps: Tuple[IFSMap, ...] = ()
    address_depth: int = DEFAULT_DEPTH
    name: str = ""

    class Config:
        allow_mutation = False

    @validator('ambient_dim')
    def validate_dim(cls, v):
        if v < 1:
            raise ValueError(f'ambient_dim must be >= 1, got {v}')
        return v

    @validator('address_depth')
    def validate_depth(cls, v):
        if v < 1:
            raise ValueError(f'address_depth must be >= 1, got {v}')
        return v

    @root_validator(skip_on_failure=True)
    def validate_maps(cls, values):
        kind = values['kind']
        maps = values['ifs_maps']
        dim = values['ambient_dim']
        if kind != SpaceKind.IFS_ATTRACTOR:
            if maps:
                raise ValueError(f'ifs_maps are only allowed for {SpaceKind.IFS_ATTRACTOR.value}')
            return values
        if not maps:
            raise ValueError('ifs-attractor needs a non-empty map list')
        if len(maps) < 2:
            raise ValueError(f'ifs-attractor needs at least 2 maps, got {len(maps)}')
        first = maps[0].ratio
        ratios = [m.ratio for m in maps]
        if any(not math.isclose(r, first, rel_tol=1e-12, abs_tol=0.0) for r in ratios):
            raise ValueError(f'ifs maps must share one contraction ratio (unequal ratios: {sorted(set(ratios))})')
        for m in maps:
            if len(m.translation) != dim:
                raise ValueError(
                    f'translation {m.translation} has dimension {len(m.translation)}, ambient_dim is {dim}'
                )
        return values

    @property
    def tag(self) -> str:
        return self.name or self.kind.value

    @property
    def ratio(self) -> Optional[float]:
        return self.ifs_maps[0].ratio if self.ifs_maps else None

    @property
    def diameter(self) -> float:
        if self.kind == SpaceKind.UNIT_CUBE:
            return math.sqrt(self.ambient_dim) if self.metric == Metric.EUCLIDEAN else 1.0
        if self.kind == SpaceKind.FLAT_TORUS:
            return math.sqrt(self.ambient_dim) / 2.0 if self.metric == Metric.EUCLIDEAN else 0.5
        # Homotheties map the convex hull of their fixed points into itself,
        # so the attractor's diameter is the fixed points' diameter.
        fixed = np.array([m.fixed_point for m in self.ifs_maps])
        return float(pairwise_distances(self, fixed, wrap=False).max())

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.kind != SpaceKind.IFS_ATTRACTOR:
            return np.zeros(self.ambient_dim), np.ones(self.ambient_dim)
        fixed = np.array([m.fixed_point for m in self.ifs_maps])
        return fixed.min(axis=0), fixed.max(axis=0)

    def to_toml_dict(self) -> Dict[str, Any]:
        table: Dict[str, Any] = {
            'kind': self.kind.value,
            'dim': self.ambient_dim,
            'metric': self.metric.value,
            'depth': self.address_depth,
        }
        if self.name:
            table['name'] = self.name
        if self.ifs_maps:
            table['ifs'] = {
                'ratio': self.ifs_maps[0].ratio,
                'translations': [list(m.translation) for m in self.ifs_maps],
            }
        return table


class RegularityWitness(BaseModel):
    """Constants of C r^d <= mu(B(p, r)) <= D r^d, estimated or known."""

    d: float
    c_lower: float
    d_upper: float
    source: str = "estimated"

    class Config:
        allow_mutation = False

    @validator('d', 'c_lower', 'd_upper')
    def validate_positive(cls, v, field):
        if not v > 0:
            raise ValueError(f'{field.name} must be positive, got {v}')
        return v

    @root_validator(skip_on_failure=True)
    def validate_order(cls, values):
        if values['c_lower'] > values['d_upper']:
            raise ValueError(f"c_lower ({values['c_lower']}) must not exceed d_upper ({values['d_upper']})")
        return values

    @property
    def supports_bounds(self) -> bool:
        return self.d > 1.0


@dataclass(frozen=True, eq=False)
class PointSet:
    """Ordered sample X_n with its space; seed is None for loaded sets."""

    points: np.ndarray
    space: SpaceSpec
    seed: Optional[int] = None

    def __post_init__(self):
        arr = np.array(self.points, dtype=float, copy=True)
        if arr.ndim == 1 and self.space.ambient_dim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2 or arr.shape[1] != self.space.ambient_dim:
            raise DimensionMismatchError(
                f'points have shape {arr.shape}, space {self.space.tag} has ambient_dim {self.space.ambient_dim}'
            )
        if arr.size and not np.all(np.isfinite(arr)):
            raise SpaceConfigError('points must have finite coordinates')
        _check_inside(self.space, arr)
        arr.setflags(write=False)
        object.__setattr__(self, 'points', arr)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def n(self) -> int:
        return len(self)

    def distance(self, i: int, j: int) -> float:
        return distance(self.space, self.points[i], self.points[j])

    def distances_from_index(self, i: int) -> np.ndarray:
        return distances_from(self.space, self.points[i], self.points)

    def distance_matrix(self) -> np.ndarray:
        return pairwise_distances(self.space, self.points)

    def coordinates(self) -> List[List[float]]:
        return self.points.tolist()


def _check_inside(spec: SpaceSpec, arr: np.ndarray, tol: float = 1e-9):
    if not arr.size:
        return
    lo, hi = spec.bounding_box()
    if spec.kind == SpaceKind.FLAT_TORUS:
        outside = np.any((arr < 0.0) | (arr >= 1.0), axis=1)
    else:
        outside = np.any((arr < lo - tol) | (arr > hi + tol), axis=1)
    if np.any(outside):
        first = int(np.flatnonzero(outside)[0])
        raise SpaceConfigError(
            f'point {first} {arr[first].tolist()} lies outside the bounding box of {spec.tag}'
        )


def make_space(**params) -> SpaceSpec:
    """Validate SpaceSpec parameters, turning pydantic errors into SpaceConfigError."""
    try:
        return SpaceSpec(**params)
    except ValidationError as e:
        messages = '; '.join(err['msg'] for err in e.errors())
        raise SpaceConfigError(messages) from e


def gasket_maps() -> List[IFSMap]:
    return [
        IFSMap(ratio=0.5, translation=(0.0, 0.0)),
        IFSMap(ratio=0.5, translation=(0.5, 0.0)),
        IFSMap(ratio=0.5, translation=(0.25, math.sqrt(3.0) / 4.0)),
    ]


def carpet_maps() -> List[IFSMap]:
    return [
        IFSMap(ratio=1.0 / 3.0, translation=(i / 3.0, j / 3.0))
        for i in range(3)
        for j in range(3)
        if (i, j) != (1, 1)
    ]


def preset_space(
    name: str,
    dim: int = 2,
    metric: str = "euclidean",
    depth: int = DEFAULT_DEPTH,
    ratio: Optional[float] = None,
    translations: Optional[Sequence[Sequence[float]]] = None,
) -> SpaceSpec:
    """Build one of the shipped spaces: cube, torus, gasket, carpet or ifs."""
    if name == 'cube':
        return make_space(kind='unit-cube', ambient_dim=dim, metric=metric, name='cube')
    if name == 'torus':
        return make_space(kind='flat-torus', ambient_dim=dim, metric=metric, name='torus')
    if name == 'gasket':
        return make_space(kind='ifs-attractor', ambient_dim=2, metric=metric,
                          ifs_maps=gasket_maps(), address_depth=depth, name='gasket')
    if name == 'carpet':
        return make_space(kind='ifs-attractor', ambient_dim=2, metric=metric,
                          ifs_maps=carpet_maps(), address_depth=depth, name='carpet')
    if name == 'ifs':
        if ratio is None or not translations:
            raise SpaceConfigError('ifs space needs a ratio and a non-empty translation list')
        maps = [{'ratio': ratio, 'translation': tuple(t)} for t in translations]
        return make_space(kind='ifs-attractor', ambient_dim=len(translations[0]), metric=metric,
                          ifs_maps=maps, address_depth=depth, name='ifs')
    raise SpaceConfigError(f"unknown space '{name}' (choose cube, torus, gasket, carpet or ifs)")


def space_from_toml_dict(table: Dict[str, Any]) -> SpaceSpec:
    """Inverse of SpaceSpec.to_toml_dict; also accepts a `preset` key."""
    if 'preset' in table:
        ifs = table.get('ifs', {})
        return preset_space(
            table['preset'],
            dim=int(table.get('dim', 2)),
            metric=table.get('metric', 'euclidean'),
            depth=int(table.get('depth', DEFAULT_DEPTH)),
            ratio=ifs.get('ratio'),
            translations=ifs.get('translations'),
        )
    params: Dict[str, Any] = {
        'kind': table.get('kind'),
        'ambient_dim': table.get('dim'),
        'metric': table.get('metric', 'euclidean'),
        'address_depth': table.get('depth', DEFAULT_DEPTH),
        'name': table.get('name', ''),
    }
    ifs = table.get('ifs')
    if ifs:
        params['ifs_maps'] = [
            {'ratio': ifs['ratio'], 'translation': tuple(t)} for t in ifs.get('translations', [])
        ]
    return make_space(**params)


def similarity_dimension(spec: SpaceSpec) -> float:
    """log(m) / log(1/r) for m equal-ratio maps; ambient_dim otherwise."""
    if spec.kind != SpaceKind.IFS_ATTRACTOR:
        return float(spec.ambient_dim)
    m = len(spec.ifs_maps)
    return math.log(m) / math.log(1.0 / spec.ifs_maps[0].ratio)


def truncation_error(spec: SpaceSpec) -> float:
    """Upper bound on the distance from a depth-truncated address point to its limit."""
    if spec.kind != SpaceKind.IFS_ATTRACTOR:
        return 0.0
    return spec.ifs_maps[0].ratio ** spec.address_depth * spec.diameter


# --- distances --------------------------------------------------------------

def _norm(spec: SpaceSpec, diff: np.ndarray, wrap: bool = True) -> np.ndarray:
    gaps = np.abs(diff)
    if wrap and spec.kind == SpaceKind.FLAT_TORUS:
        gaps = np.minimum(gaps, 1.0 - gaps)
    if spec.metric == Metric.EUCLIDEAN:
        return np.sqrt(np.sum(gaps * gaps, axis=-1))
    return np.max(gaps, axis=-1)


def distance(spec: SpaceSpec, a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape or a.shape[0] != spec.ambient_dim:
        raise DimensionMismatchError(
            f'cannot measure {a.shape[0]}-d and {b.shape[0]}-d points in a {spec.ambient_dim}-d space'
        )
    return float(_norm(spec, (a - b)[None, :])[0])


def distances_from(spec: SpaceSpec, point: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Distances from one point to every row of `points`."""
    return _norm(spec, points - point[None, :])


def paired_distances(spec: SpaceSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-by-row distances dist(a[k], b[k])."""
    return _norm(spec, a - b)


def pairwise_distances(spec: SpaceSpec, a: np.ndarray, b: Optional[np.ndarray] = None,
                       wrap: bool = True) -> np.ndarray:
    b = a if b is None else b
    out = np.empty((a.shape[0], b.shape[0]))
    step = max(1, _BLOCK_ROWS // max(1, b.shape[0]))
    for lo in range(0, a.shape[0], step):
        block = a[lo:lo + step]
        out[lo:lo + step] = _norm(spec, block[:, None, :] - b[None, :, :], wrap=wrap)
    return out


def check_metric_axioms(spec: SpaceSpec, n_triples: int = 10_000, seed: int = 0) -> Dict[str, Any]:
    """Spot-check symmetry and the triangle inequality on random triples."""
    pts = sample(spec, 3 * n_triples, seed).points
    a, b, c = pts[0::3], pts[1::3], pts[2::3]
    ab = _norm(spec, a - b)
    ba = _norm(spec, b - a)
    bc = _norm(spec, b - c)
    ac = _norm(spec, a - c)
    max_asymmetry = float(np.max(np.abs(ab - ba)))
    max_triangle_excess = float(np.max(ac - (ab + bc)))
    return {
        'n_triples': n_triples,
        'max_asymmetry': max_asymmetry,
        'max_triangle_excess': max_triangle_excess,
        'nonnegative': bool(np.all(ab >= 0.0)),
        'ok': max_asymmetry == 0.0 and max_triangle_excess <= 1e-12 and bool(np.all(ab >= 0.0)),
    }


# --- sampling ---------------------------------------------------------------

def derive_seed(master_seed: int, *keys: Any) -> int:
    """Stable 64-bit seed for one (n, trial, ...) cell, independent of scheduling order."""
    text = ':'.join(str(k) for k in (master_seed, *keys))
    return int.from_bytes(hashlib.sha256(text.encode('utf-8')).digest()[:8], 'big')


def sample(spec: SpaceSpec, n: int, seed: int) -> PointSet:
    """Draw n i.i.d. points from the space's probability measure."""
    if n < 1:
        raise SizeLimitError('sample', n, 1)
    rng = np.random.default_rng(seed)
    if spec.kind != SpaceKind.IFS_ATTRACTOR:
        return PointSet(rng.random((n, spec.ambient_dim)), spec, seed)

    translations = np.array([m.translation for m in spec.ifs_maps])
    ratio = spec.ifs_maps[0].ratio
    depth = spec.address_depth
    weights = ratio ** np.arange(depth)
    base = np.array(spec.ifs_maps[0].fixed_point)
    tail = ratio ** depth * base

    coords = np.empty((n, spec.ambient_dim))
    rows = max(1, _BLOCK_ROWS // depth)
    for lo in range(0, n, rows):
        hi = min(n, lo + rows)
        addresses = rng.integers(0, len(spec.ifs_maps), size=(hi - lo, depth))
        # f_{a1} o ... o f_{aD}(base) = sum_k r^(k-1) t_{a_k} + r^D base
        coords[lo:hi] = np.einsum('k,nkd->nd', weights, translations[addresses]) + tail
    return PointSet(coords, spec, seed)


def empirical_ball_measure(points: PointSet, center: Sequence[float], radius: float) -> float:
    """Fraction of the sample strictly inside B(center, radius)."""
    d = distances_from(points.space, np.asarray(center, dtype=float), points.points)
    return float(np.count_nonzero(d < radius)) / len(points)


# --- dimension and regularity ----------------------------------------------

def box_counting_dimension(points: np.ndarray, sizes: Optional[Sequence[float]] = None,
                           origin: Optional[Sequence[float]] = None, extent: Optional[float] = None) -> float:
    """Slope of log(occupied boxes) against log(1/box size)."""
    points = np.asarray(points, dtype=float)
    lo = points.min(axis=0) if origin is None else np.asarray(origin, dtype=float)
    if extent is None:
        extent = float(np.max(points.max(axis=0) - lo))
    if sizes is None:
        sizes = [2.0 ** -k for k in range(2, 8)]
    sizes = np.asarray(sizes, dtype=float)

    counts = []
    for size in sizes:
        cells = np.floor((points - lo) / (size * extent)).astype(np.int64)
        cells = np.clip(cells, 0, int(math.ceil(1.0 / size)) - 1)
        counts.append(len(np.unique(cells, axis=0)))
    counts = np.asarray(counts, dtype=float)
    if len(sizes) < 2 or np.any(counts == 0):
        raise DegenerateRegressionError('box counting needs at least two non-empty scales',
                                        {'sizes': sizes.tolist(), 'counts': counts.tolist()})
    coeffs = np.polyfit(np.log(sizes), np.log(counts), 1)
    return float(-coeffs[0])


def analytic_witness(spec: SpaceSpec) -> Optional[RegularityWitness]:
    """Known constants for the flat euclidean spaces where they have closed forms."""
    if spec.metric != Metric.EUCLIDEAN:
        return None
    if spec.kind == SpaceKind.UNIT_CUBE and spec.ambient_dim == 2:
        # corner ball at r = diam has measure 1 = r^2 / 2; interior balls pi r^2
        return RegularityWitness(d=2.0, c_lower=0.5, d_upper=math.pi, source='analytic')
    if spec.kind == SpaceKind.FLAT_TORUS and spec.ambient_dim == 2:
        return RegularityWitness(d=2.0, c_lower=2.0, d_upper=math.pi, source='analytic')
    if spec.kind == SpaceKind.UNIT_CUBE and spec.ambient_dim == 1:
        return RegularityWitness(d=1.0, c_lower=1.0, d_upper=2.0, source='analytic')
    return None


def estimate_regularity(
    spec: SpaceSpec,
    n_probe: int = 20_000,
    n_radii: int = 24,
    seed: int = 0,
    n_centers: int = 256,
    r_min_frac: float = 1e-3,
    fit_max_frac: float = 0.05,
    min_fit_count: float = 20.0,
    min_constant_count: float = 100.0,
) -> RegularityWitness:
    """
    Monte Carlo witness for the Ahlfors constants.

    Ball measures mu(B(p, r)) are estimated as the fraction of n_probe sampled
    points inside each ball, for sampled centers p and a log-spaced radius grid
    in (0, diameter]. Each radius is summarised by the median over centers,
    which follows the interior of the space while fewer than half of the
    centers sit within r of its boundary.

    d is the slope of log median-measure against log r over the small radii
    (r <= fit_max_frac * diameter, widened fourfold when too few radii qualify).
    d_upper is the largest median measure / r^d over radii whose median count
    reaches min_constant_count; c_lower is the smallest single-center
    measure / r^d over the same radii.
    """
    if n_probe < 100:
        raise SizeLimitError('estimate_regularity n_probe', n_probe, 100)
    if n_radii < 3:
        raise DegenerateRegressionError('need at least 3 radii', {'n_radii': n_radii})

    probe = sample(spec, n_probe, seed)
    diam = spec.diameter
    radii = diam * np.logspace(math.log10(r_min_frac), 0.0, n_radii)
    rng = np.random.default_rng(seed)
    centers = rng.choice(n_probe, size=min(n_centers, n_probe), replace=False)

    measures = np.empty((len(centers), n_radii))
    for row, idx in enumerate(centers):
        d = np.sort(distances_from(spec, probe.points[idx], probe.points))
        # open ball; the center itself is excluded from the count
        counts = np.searchsorted(d, radii, side='left') - 1
        measures[row] = counts / (n_probe - 1)

    median_measure = np.median(measures, axis=0)
    median_count = median_measure * (n_probe - 1)
    usable = (median_count >= min_fit_count) & (median_measure < 1.0)
    fit = usable & (radii <= fit_max_frac * diam)
    if np.count_nonzero(fit) < 3:
        fit = usable & (radii <= 4.0 * fit_max_frac * diam)
        logger.debug(f"Widened the fit window for {spec.tag} to {4.0 * fit_max_frac:g} x diameter")
    diagnostic = {
        'radii': radii.tolist(),
        'median_measure': median_measure.tolist(),
        'usable_radii': int(np.count_nonzero(fit)),
    }
    if np.count_nonzero(fit) < 3:
        raise DegenerateRegressionError('too few radii with non-empty, non-full balls', diagnostic)

    slope, _ = np.polyfit(np.log(radii[fit]), np.log(median_measure[fit]), 1)
    d_est = float(slope)
    if not d_est > 0:
        raise DegenerateRegressionError(f'non-positive dimension estimate {d_est}', diagnostic)

    reliable = median_count >= min_constant_count
    if not np.any(reliable):
        raise DegenerateRegressionError('no radius has enough points to bound the measure', diagnostic)
    scale = radii[reliable] ** d_est
    c_lower = float((measures[:, reliable] / scale).min())
    d_upper = float((median_measure[reliable] / scale).max())
    if not c_lower > 0:
        raise DegenerateRegressionError('empty ball among reliable radii; raise n_probe', diagnostic)

    witness = RegularityWitness(d=d_est, c_lower=c_lower, d_upper=d_upper, source='estimated')
    if not witness.supports_bounds:
        logger.warning(f"Estimated dimension {d_est:.3f} for {spec.tag} is <= 1; bounds need d > 1")
    logger.debug(f"Regularity witness for {spec.tag}: {witness.dict()}")
    return witness


def resolve_witness(
    spec: SpaceSpec,
    d: Optional[float] = None,
    c_lower: Optional[float] = None,
    d_upper: Optional[float] = None,
    seed: int = 0,
    n_probe: int = 20_000,
    analytic: bool = False,
) -> RegularityWitness:
    """
    Monte Carlo estimate by default; analytic=True takes the closed-form
    constants instead, for the spaces that have them. Explicit values override either.
    """
    base = None
    if analytic:
        base = analytic_witness(spec)
        if base is None:
            raise SpaceConfigError(f'no analytic regularity constants for {spec.tag} '
                                   f'({spec.kind.value}, {spec.ambient_dim}-d, {spec.metric.value})')
    if base is None:
        if None not in (d, c_lower, d_upper):
            base = RegularityWitness(d=d, c_lower=c_lower, d_upper=d_upper, source='override')
        else:
            base = estimate_regularity(spec, n_probe=n_probe, seed=seed)
    overrides = {k: v for k, v in (('d', d), ('c_lower', c_lower), ('d_upper', d_upper)) if v is not None}
    if not overrides:
        return base
    merged = {**base.dict(), **overrides, 'source': 'override'}
    try:
        witness = RegularityWitness(**merged)
    except ValidationError as e:
        raise SpaceConfigError('; '.join(err['msg'] for err in e.errors())) from e
    if not witness.supports_bounds:
        logger.warning(f"Witness dimension {witness.d} for {spec.tag} is <= 1; bounds need d > 1")
    return witness
