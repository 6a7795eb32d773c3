"""
Unit tests for the proof checks: ball families, (★), dyadic packing, the
bound chain, isolated points and exponent fits.
"""

import math
import os
import sys
import unittest

import numpy as np

# Add the src directory to path so we can import our modules
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(project_root, 'src'))

from analysis import (
    Ball,
    BallFamily,
    CheckReport,
    bound_chain,
    check_packing,
    check_star_property,
    check_suite,
    dyadic_class,
    dyadic_partition,
    extract_ball_family,
    fit_exponent,
    is_guaranteed_failure,
    isolation_concentration,
    isolation_stats,
    mean_length_by_n,
    packing_constant,
    smallest_saturating_class,
    trend_is_monotone,
    verify_lower_bound,
)
from errors import (
    EmptyTraceError,
    FamilyMismatchError,
    InsufficientDataError,
    RadiusExceedsDiameterError,
)
from solvers import SelectionTrace, SolverTag, exact_tour_dp, greedy_tour, nearest_neighbor_tour
from spaces import PointSet, RegularityWitness, analytic_witness, derive_seed, preset_space, sample

SQUARE = preset_space('cube', dim=2)
SQUARE_WITNESS = analytic_witness(SQUARE)
GASKET = preset_space('gasket')
# dimension of the gasket with generous constants; only the shapes matter here
GASKET_WITNESS = RegularityWitness(d=math.log(3) / math.log(2), c_lower=0.5, d_upper=4.0, source='override')
ALL_CHECKS = ['star', 'packing', 'bound-chain', 'isolation', 'lower-bound']


def square_corners() -> PointSet:
    return PointSet(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), SQUARE)


def collinear() -> PointSet:
    return PointSet(np.array([[0.0, 0.0], [0.1, 0.0], [0.3, 0.0], [0.7, 0.0]]), SQUARE)


class TestBallFamily(unittest.TestCase):
    """extract_ball_family"""

    def test_square_corners(self):
        _, trace = nearest_neighbor_tour(square_corners())
        family = extract_ball_family(trace)
        self.assertEqual(len(family), 3)
        self.assertEqual(family.radii.tolist(), [1.0, 1.0, 1.0])
        self.assertEqual(family.centers.tolist(), [0, 1, 2])
        self.assertEqual(family.closing_edge, 1.0)

    def test_collinear_radii(self):
        _, trace = nearest_neighbor_tour(collinear())
        family = extract_ball_family(trace)
        np.testing.assert_allclose(family.radii, [0.1, 0.2, 0.4])

    def test_zero_radius_dropped(self):
        pts = PointSet(np.array([[0.0, 0.0], [0.0, 0.0], [0.5, 0.0]]), SQUARE)
        _, trace = nearest_neighbor_tour(pts)
        family = extract_ball_family(trace)
        self.assertEqual(family.dropped_zero, 1)
        self.assertEqual(len(family), 1)

    def test_empty_trace(self):
        with self.assertRaises(EmptyTraceError):
            extract_ball_family(SelectionTrace((), SolverTag.NEAREST_NEIGHBOR, 1))

    def test_greedy_two_balls_per_edge(self):
        pts = sample(SQUARE, 30, seed=2)
        _, trace = greedy_tour(pts)
        family = extract_ball_family(trace)
        self.assertEqual(len(family), 2 * 29)
        self.assertEqual(family.closing_edge, trace.steps[-1].radius)

    def test_source_mismatch(self):
        _, trace = nearest_neighbor_tour(square_corners())
        with self.assertRaises(FamilyMismatchError):
            extract_ball_family(trace, SolverTag.GREEDY)


class TestStarProperty(unittest.TestCase):
    """check_star_property"""

    def test_nn_families_clean(self):
        for space in (SQUARE, GASKET):
            for seed in range(25):
                pts = sample(space, 200, seed)
                _, trace = nearest_neighbor_tour(pts)
                report = check_star_property(extract_ball_family(trace), pts)
                self.assertTrue(report.passed, f'{space.tag} seed {seed}: {report.violations[:3]}')
                self.assertEqual(report.statistics['weak_violation_count'], 0)

    def test_mutual_containment_reported(self):
        pts = PointSet(np.array([[0.0, 0.0], [0.5, 0.0]]), SQUARE)
        family = BallFamily((Ball(0, 1.0, 0), Ball(1, 1.0, 1)), SolverTag.NEAREST_NEIGHBOR, 2)
        report = check_star_property(family, pts)
        self.assertFalse(report.passed)
        self.assertEqual(report.violations[0]['i'], 0)
        self.assertEqual(report.violations[0]['j'], 1)

    def test_single_ball(self):
        pts = PointSet(np.array([[0.0, 0.0], [0.5, 0.0]]), SQUARE)
        family = BallFamily((Ball(0, 0.5, 0),), SolverTag.NEAREST_NEIGHBOR, 2)
        report = check_star_property(family, pts)
        self.assertTrue(report.passed)
        self.assertEqual(report.statistics['pairs'], 0)

    def test_greedy_shared_centers_reported_separately(self):
        _, trace = greedy_tour(square_corners())
        report = check_star_property(extract_ball_family(trace), square_corners())
        stats = report.statistics
        self.assertEqual(stats['violation_count'],
                         stats['shared_center_violations'] + stats['distinct_center_violations'])
        self.assertGreater(stats['shared_center_violations'], 0)
        self.assertEqual(stats['source'], 'greedy')
        self.assertFalse(is_guaranteed_failure(report))

    def test_nn_violation_is_failure(self):
        report = CheckReport(check='star', violations=[{'i': 0, 'j': 1}],
                             statistics={'violation_count': 1, 'source': 'nearest-neighbor'})
        self.assertTrue(is_guaranteed_failure(report))

    def test_report_schema(self):
        _, trace = nearest_neighbor_tour(square_corners())
        data = check_star_property(extract_ball_family(trace), square_corners(), 'corners').dict()
        self.assertEqual(set(data), {'check', 'instance_id', 'violations', 'statistics'})
        self.assertEqual(data['instance_id'], 'corners')


class TestDyadicPacking(unittest.TestCase):
    """dyadic_partition / check_packing"""

    def test_class_boundaries(self):
        self.assertEqual(dyadic_class(0.75, 1.0), 1)
        self.assertEqual(dyadic_class(0.5, 1.0), 2)
        self.assertEqual(dyadic_class(0.3, 1.0), 2)
        self.assertEqual(dyadic_class(1.0, 1.0), 1)
        self.assertEqual(dyadic_class(0.25, 1.0), 3)
        self.assertEqual(dyadic_class(0.3, 2.0), 3)

    def test_radius_exceeds_diameter(self):
        family = BallFamily((Ball(0, 2.0, 0),), SolverTag.NEAREST_NEIGHBOR, 2)
        with self.assertRaises(RadiusExceedsDiameterError):
            dyadic_partition(family, 1.0)

    def test_partition_covers_family(self):
        pts = sample(SQUARE, 300, seed=1)
        _, trace = nearest_neighbor_tour(pts)
        family = extract_ball_family(trace)
        decomp = dyadic_partition(family, SQUARE.diameter, SQUARE_WITNESS)
        self.assertEqual(sum(len(v) for v in decomp.classes.values()), len(family))
        for k, members in decomp.classes.items():
            for ball in members:
                x = ball.radius / SQUARE.diameter
                self.assertTrue(2.0 ** -k < x <= 2.0 ** (1 - k))

    def test_packing_constant_and_k0(self):
        constant = packing_constant(SQUARE_WITNESS, SQUARE.diameter)
        self.assertAlmostEqual(constant, 4.0)
        self.assertEqual(smallest_saturating_class(1000, constant, 2.0), 4)
        self.assertEqual(smallest_saturating_class(1, constant, 2.0), 1)
        decomp = dyadic_partition(BallFamily((Ball(0, 0.1, 0),), SolverTag.NEAREST_NEIGHBOR, 1000),
                                  SQUARE.diameter, SQUARE_WITNESS)
        self.assertEqual(decomp.k0, 4)

    def test_square_corners_disjoint(self):
        pts = square_corners()
        _, trace = nearest_neighbor_tour(pts)
        decomp = dyadic_partition(extract_ball_family(trace), SQUARE.diameter, SQUARE_WITNESS)
        report = check_packing(decomp, pts, SQUARE_WITNESS)
        self.assertTrue(report.passed)
        self.assertEqual(report.statistics['classes']['1']['count'], 3)

    def test_identical_balls_violate(self):
        pts = PointSet(np.array([[0.0, 0.0], [1.0, 1.0]]), SQUARE)
        family = BallFamily((Ball(0, 0.5, 0), Ball(0, 0.5, 1)), SolverTag.NEAREST_NEIGHBOR, 2)
        decomp = dyadic_partition(family, SQUARE.diameter, SQUARE_WITNESS)
        report = check_packing(decomp, pts, SQUARE_WITNESS)
        self.assertFalse(report.passed)
        self.assertEqual(report.violations[0]['distance'], 0.0)

    def test_random_nn_families_disjoint(self):
        for space, witness in ((SQUARE, SQUARE_WITNESS), (GASKET, GASKET_WITNESS)):
            for seed in range(25):
                pts = sample(space, 200, seed)
                _, trace = nearest_neighbor_tour(pts)
                decomp = dyadic_partition(extract_ball_family(trace), space.diameter, witness)
                report = check_packing(decomp, pts, witness)
                self.assertTrue(report.passed, f'{space.tag} seed {seed}: {report.violations[:3]}')


class TestBoundChain(unittest.TestCase):
    """bound_chain"""

    def _chain(self, pts):
        tour, trace = nearest_neighbor_tour(pts)
        family = extract_ball_family(trace)
        decomp = dyadic_partition(family, pts.space.diameter, SQUARE_WITNESS)
        return bound_chain(family, tour, decomp)

    def test_square_corners(self):
        report = self._chain(square_corners())
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.statistics['L'], 4.0)
        self.assertAlmostEqual(report.statistics['sum_radii'], 3.0)
        self.assertAlmostEqual(report.statistics['closing_edge'], 1.0)
        self.assertTrue(report.statistics['tight'])

    def test_collinear(self):
        report = self._chain(collinear())
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.statistics['sum_radii'], 0.7)
        self.assertAlmostEqual(report.statistics['closing_edge'], 0.7)

    def test_random_nn_tight(self):
        for seed in range(20):
            report = self._chain(sample(SQUARE, 150, seed))
            self.assertTrue(report.passed)
            self.assertTrue(report.statistics['tight'])
            self.assertIn('theorem_bound', report.statistics)
            self.assertGreaterEqual(report.statistics['theorem_bound'], report.statistics['L'])

    def test_greedy_chain_holds(self):
        pts = sample(SQUARE, 150, seed=7)
        tour, trace = greedy_tour(pts)
        family = extract_ball_family(trace)
        decomp = dyadic_partition(family, SQUARE.diameter, SQUARE_WITNESS)
        self.assertTrue(bound_chain(family, tour, decomp).passed)

    def test_mismatch(self):
        pts = sample(SQUARE, 20, seed=0)
        _, trace = nearest_neighbor_tour(pts)
        greedy, _ = greedy_tour(pts)
        family = extract_ball_family(trace)
        decomp = dyadic_partition(family, SQUARE.diameter, SQUARE_WITNESS)
        with self.assertRaises(FamilyMismatchError):
            bound_chain(family, greedy, decomp)


class TestIsolation(unittest.TestCase):
    """isolation_stats / verify_lower_bound"""

    def test_two_far_points(self):
        pts = PointSet(np.array([[0.0, 0.0], [1.0, 1.0]]), SQUARE)
        self.assertEqual(isolation_stats(pts, SQUARE_WITNESS).z, 2)
        stats = isolation_stats(pts, SQUARE_WITNESS, radius=1.414)
        self.assertEqual(stats.z, 2)
        self.assertAlmostEqual(stats.lower_bound, 2 * 1.414)

    def test_single_point(self):
        stats = isolation_stats(PointSet(np.array([[0.2, 0.2]]), SQUARE), SQUARE_WITNESS)
        self.assertEqual(stats.z, 1)

    def test_probe_radius(self):
        stats = isolation_stats(sample(SQUARE, 1000, seed=0), SQUARE_WITNESS)
        self.assertAlmostEqual(stats.r, math.sqrt(1.0 / (math.pi * 1000)))
        self.assertEqual(stats.z, sum(stats.z_indicators))

    def test_duplicates_not_isolated(self):
        pts = PointSet(np.array([[0.1, 0.1], [0.1, 0.1], [0.9, 0.9]]), SQUARE)
        stats = isolation_stats(pts, SQUARE_WITNESS, radius=0.5)
        self.assertEqual(stats.z_indicators, (False, False, True))

    def test_torus_wraps(self):
        torus = preset_space('torus', dim=2)
        witness = analytic_witness(torus)
        pts = PointSet(np.array([[0.01, 0.5], [0.99, 0.5], [0.5, 0.5]]), torus)
        stats = isolation_stats(pts, witness, radius=0.05)
        self.assertEqual(stats.z_indicators, (False, False, True))

    def test_mean_fraction_above_third(self):
        fractions = [isolation_stats(sample(SQUARE, 1000, seed), SQUARE_WITNESS).fraction for seed in range(10)]
        self.assertGreaterEqual(sum(fractions) / len(fractions), 0.33)

    def test_concentration_summary(self):
        summary = isolation_concentration(SQUARE, 500, 5, seed=3, witness=SQUARE_WITNESS)
        self.assertEqual(len(summary['z']), 5)
        self.assertGreaterEqual(summary['mean_fraction'], 0.33)
        self.assertAlmostEqual(summary['expected_fraction_lower'], math.exp(-1))

    def test_lower_bound_under_exact_tours(self):
        for seed in range(20):
            pts = sample(SQUARE, 8 + seed % 5, seed)
            stats = isolation_stats(pts, SQUARE_WITNESS)
            report = verify_lower_bound(pts, stats, exact_tour_dp(pts))
            self.assertTrue(report.passed)
            self.assertGreater(report.statistics['empirical_constant'], 0.0)

    def test_two_points_lower_bound(self):
        pts = PointSet(np.array([[0.0, 0.0], [0.6, 0.8]]), SQUARE)
        tour, _ = nearest_neighbor_tour(pts)
        stats = isolation_stats(pts, SQUARE_WITNESS)
        self.assertEqual(stats.z, 2)
        self.assertTrue(verify_lower_bound(pts, stats, tour).passed)

    def test_lower_bound_mismatch(self):
        pts = sample(SQUARE, 10, seed=0)
        other = sample(SQUARE, 11, seed=0)
        stats = isolation_stats(pts, SQUARE_WITNESS)
        with self.assertRaises(FamilyMismatchError):
            verify_lower_bound(pts, stats, exact_tour_dp(other))


class TestCheckSuite(unittest.TestCase):
    """check_suite / is_guaranteed_failure"""

    def test_nn_suite_clean(self):
        pts = sample(GASKET, 150, seed=5)
        tour, trace = nearest_neighbor_tour(pts)
        reports = check_suite(pts, tour, trace, GASKET_WITNESS, ALL_CHECKS)
        self.assertEqual([r.check for r in reports], ALL_CHECKS)
        self.assertFalse(any(is_guaranteed_failure(r) for r in reports))

    def test_exact_tour_gets_lower_bound_only(self):
        pts = sample(SQUARE, 9, seed=5)
        reports = check_suite(pts, exact_tour_dp(pts), None, SQUARE_WITNESS, ALL_CHECKS)
        self.assertEqual([r.check for r in reports], ['isolation', 'lower-bound'])

    def test_greedy_star_is_informational(self):
        pts = square_corners()
        tour, trace = greedy_tour(pts)
        reports = check_suite(pts, tour, trace, SQUARE_WITNESS, ['star', 'bound-chain'])
        star = reports[0]
        self.assertFalse(star.passed)
        self.assertFalse(is_guaranteed_failure(star))
        self.assertTrue(reports[1].passed)


class TestExponentFit(unittest.TestCase):
    """fit_exponent / trend_is_monotone"""

    def test_square_root_law(self):
        records = [(n, n ** 0.5) for n in (128, 256, 512, 1024, 2048)]
        fit = fit_exponent(records)
        self.assertAlmostEqual(fit.slope, 0.5, delta=1e-12)
        self.assertAlmostEqual(fit.intercept, 0.0, delta=1e-10)

    def test_linear_law(self):
        fit = fit_exponent([(n, 3.0 * n) for n in (10, 20, 40, 80)])
        self.assertAlmostEqual(fit.slope, 1.0, delta=1e-12)
        self.assertAlmostEqual(fit.intercept, math.log(3.0), delta=1e-10)
        self.assertAlmostEqual(fit.empirical_constant, 3.0, delta=1e-9)

    def test_too_few_points(self):
        with self.assertRaises(InsufficientDataError):
            fit_exponent([(10, 1.0), (20, 1.5)])
        with self.assertRaises(InsufficientDataError):
            fit_exponent([(10, 1.0), (10, 1.1), (20, 1.5), (20, 1.4)])

    def test_nonpositive_length(self):
        with self.assertRaises(InsufficientDataError):
            fit_exponent([(10, 1.0), (20, 0.0), (40, 2.0)])

    def test_trend(self):
        self.assertTrue(trend_is_monotone([(10, 1.0), (10, 1.2), (20, 1.5), (40, 2.0)]))
        self.assertFalse(trend_is_monotone([(10, 2.0), (20, 1.0), (40, 3.0)]))

    def test_nn_scaling_slope(self):
        records = []
        for n in (128, 256, 512, 1024):
            for trial in range(4):
                tour, _ = nearest_neighbor_tour(sample(SQUARE, n, 1000 * n + trial))
                records.append((n, tour.length))
        self.assertTrue(0.42 <= fit_exponent(records).slope <= 0.58)

    def test_heuristic_lengths_grow_across_grid(self):
        grid = (64, 128, 256, 512)
        for spec in (SQUARE, GASKET):
            nn_records, greedy_records = [], []
            for n in grid:
                for trial in range(3):
                    points = sample(spec, n, derive_seed(9, n, trial))
                    nn_records.append((n, nearest_neighbor_tour(points)[0].length))
                    greedy_records.append((n, greedy_tour(points)[0].length))
            self.assertTrue(trend_is_monotone(nn_records), spec.tag)
            self.assertTrue(trend_is_monotone(greedy_records), spec.tag)
            self.assertEqual(list(mean_length_by_n(nn_records)), list(grid))


if __name__ == '__main__':
    unittest.main(verbosity=2)
