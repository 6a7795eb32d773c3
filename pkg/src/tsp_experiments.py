#!/usr/bin/env python3
"""
Command-line front end for the TSP heuristic experiments on Ahlfors-regular
spaces: sample point sets, solve and verify instances, run scaling grids and
adversarial searches. Payloads go to stdout or --out; status lines go to stderr.
"""

import argparse
import logging
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

try:
    from .adversarial import (
        adversarial_search,
        baseline_rows,
        compare_to_baseline,
        instance_ratios,
        scatter_rows,
        summarize_baseline,
    )
    from .analysis import (
        check_suite,
        fit_exponent,
        is_guaranteed_failure,
        isolation_stats,
        mean_length_by_n,
        trend_is_monotone,
    )
    from .errors import (
        EXIT_CONFIG,
        EXIT_OK,
        EXIT_VIOLATION,
        InsufficientDataError,
        SpaceConfigError,
        TSPExperimentError,
    )
    from .experiment_config import (
        GUARANTEED_CHECKS,
        ExperimentConfig,
        load_experiment_config,
        parse_checks,
        trial_seed,
    )
    from .records import (
        ExperimentRecord,
        OrderedRecordWriter,
        load_points_csv,
        points_to_csv_text,
        save_points_csv,
        save_scatter_csv,
        save_space_toml,
        write_json,
    )
    from .solvers import SolverTag, nearest_neighbor_all_starts, parse_solver, solve, verify_trace
    from .spaces import (
        RegularityWitness,
        SpaceSpec,
        preset_space,
        resolve_witness,
        sample,
        similarity_dimension,
        truncation_error,
    )
except ImportError:
    from adversarial import (
        adversarial_search,
        baseline_rows,
        compare_to_baseline,
        instance_ratios,
        scatter_rows,
        summarize_baseline,
    )
    from analysis import (
        check_suite,
        fit_exponent,
        is_guaranteed_failure,
        isolation_stats,
        mean_length_by_n,
        trend_is_monotone,
    )
    from errors import (
        EXIT_CONFIG,
        EXIT_OK,
        EXIT_VIOLATION,
        InsufficientDataError,
        SpaceConfigError,
        TSPExperimentError,
    )
    from experiment_config import (
        GUARANTEED_CHECKS,
        ExperimentConfig,
        load_experiment_config,
        parse_checks,
        trial_seed,
    )
    from records import (
        ExperimentRecord,
        OrderedRecordWriter,
        load_points_csv,
        points_to_csv_text,
        save_points_csv,
        save_scatter_csv,
        save_space_toml,
        write_json,
    )
    from solvers import SolverTag, nearest_neighbor_all_starts, parse_solver, solve, verify_trace
    from spaces import (
        RegularityWitness,
        SpaceSpec,
        preset_space,
        resolve_witness,
        sample,
        similarity_dimension,
        truncation_error,
    )

logger = logging.getLogger(__name__)

DEFAULT_TRACE_CHECKS = 'star,packing,bound-chain'
_quiet = False


def status(message: str):
    """Emoji status line on stderr; stdout is reserved for payloads."""
    if not _quiet:
        print(message, file=sys.stderr)


# --- argument helpers -------------------------------------------------------

def parse_translations(text: Optional[str]) -> Optional[List[Tuple[float, ...]]]:
    """'0,0;0.5,0;0.25,0.433' -> [(0.0, 0.0), (0.5, 0.0), (0.25, 0.433)]"""
    if not text:
        return None
    try:
        return [tuple(float(x) for x in part.split(',')) for part in text.split(';') if part.strip()]
    except ValueError as e:
        raise SpaceConfigError(f'could not parse translations {text!r}: {e}') from e


def space_from_args(args: argparse.Namespace) -> SpaceSpec:
    return preset_space(
        args.space,
        dim=args.dim,
        metric=args.metric,
        depth=args.depth,
        ratio=args.ratio,
        translations=parse_translations(args.translations),
    )


def witness_from_args(spec: SpaceSpec, args: argparse.Namespace) -> RegularityWitness:
    witness = resolve_witness(spec, d=args.d_estimate, c_lower=args.c_lower, d_upper=args.d_upper,
                              seed=args.seed, analytic=args.witness == 'analytic')
    status(f"📐 Witness ({witness.source}): d = {witness.d:.4f}, c_lower = {witness.c_lower:.4g}, "
           f"D = {witness.d_upper:.4g}")
    return witness


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f'expected a positive integer, got {text}')
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=0, help='Master seed (default: 0)')
    common.add_argument('-o', '--out', help='Output file (default: stdout)')
    common.add_argument('--format', choices=['csv', 'json'], help='Payload format where a command offers both')
    common.add_argument('-w', '--threads', type=_positive_int, default=1, help='Worker threads (default: 1)')
    common.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    common.add_argument('-q', '--quiet', action='store_true', help='Only warnings and payloads')

    space = argparse.ArgumentParser(add_help=False)
    space.add_argument('--space', choices=['cube', 'torus', 'gasket', 'carpet', 'ifs'], default='cube',
                       help='Space preset (default: cube)')
    space.add_argument('--dim', type=int, default=2, help='Ambient dimension for cube/torus (default: 2)')
    space.add_argument('--metric', choices=['euclidean', 'chebyshev'], default='euclidean')
    space.add_argument('--depth', type=int, default=30, help='IFS address depth (default: 30)')
    space.add_argument('--ratio', type=float, help='Contraction ratio for --space ifs')
    space.add_argument('--translations', help='IFS translations as "x,y;x,y;..." for --space ifs')
    space.add_argument('--d-estimate', type=float, help='Override the regularity dimension d')
    space.add_argument('--c-lower', type=float, help='Override the lower regularity constant')
    space.add_argument('--d-upper', type=float, help='Override the upper regularity constant D')
    space.add_argument('--witness', choices=['estimated', 'analytic'], default='estimated',
                       help='Monte Carlo estimate (default) or closed-form constants where known')

    parser = argparse.ArgumentParser(
        prog='tsp_experiments',
        description='TSP heuristics on Ahlfors-regular spaces: sampling, solving, proof checks and scaling runs',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Exit codes:
  0 success, 2 usage/config error, 3 size limit, 4 unreadable input, 5 invariant violation

Examples:
  %(prog)s sample --space cube --dim 2 --n 100 --seed 7 -o square.csv
  %(prog)s sample --space gasket --n 1000 --depth 25
  %(prog)s solve --input square.csv --solver nn --start 0 --verify
  %(prog)s solve --space torus --n 200 --solver greedy --all-starts
  %(prog)s verify --space cube --n 500 --trials 100 --checks star,packing
  %(prog)s verify --n 1000 --trials 50 --checks isolation --witness analytic
  %(prog)s scaling configs/square_scaling.toml --threads 8
  %(prog)s adversarial --n 8 --iterations 10000 --restarts 4 --baseline-trials 200
        """
    )
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('sample', parents=[common, space], help='Write a sampled point set')
    p.add_argument('--n', type=int, required=True, help='Number of points')
    p.add_argument('--space-toml', help='Also write the space definition as TOML')
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser('solve', parents=[common, space], help='Solve one instance and emit tour JSON')
    p.add_argument('--input', help='Point-set CSV (default: sample --n points)')
    p.add_argument('--n', type=int, help='Number of points to sample when no --input is given')
    p.add_argument('--solver', default='nn', help='nn, greedy, exact, brute or two-opt (default: nn)')
    p.add_argument('--start', type=int, default=0, help='NN start index (default: 0)')
    p.add_argument('--verify', action='store_true', help='Embed star/packing/bound-chain reports')
    p.add_argument('--all-starts', action='store_true', help='Add the NN start sweep summary')
    p.add_argument('--two-opt-passes', type=int, default=50, help='2-opt pass limit (default: 50)')
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser('verify', parents=[common, space], help='Run proof checks over random instances')
    p.add_argument('--n', type=int, required=True)
    p.add_argument('--trials', type=_positive_int, default=10)
    p.add_argument('--checks', default=DEFAULT_TRACE_CHECKS,
                   help='Comma list of star, packing, bound-chain, isolation, lower-bound')
    p.add_argument('--solvers', default='nn', help='Comma list of solvers (default: nn)')
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser('scaling', parents=[common], help='Run a scaling grid from a TOML config')
    p.add_argument('config', help='Experiment config TOML')
    p.add_argument('--append', action='store_true', help='Append to an existing records CSV')
    p.set_defaults(handler=cmd_scaling)

    p = sub.add_parser('adversarial', parents=[common, space], help='Hill-climb for bad NN instances')
    p.add_argument('--n', type=int, required=True, help='Instance size, 6..14')
    p.add_argument('--iterations', type=int, default=1000)
    p.add_argument('--restarts', type=_positive_int, default=1)
    p.add_argument('--step-frac', type=float, default=0.05, help='Initial step as a fraction of the diameter')
    p.add_argument('--baseline-trials', type=int, default=0, help='Random instances for the median baseline')
    p.add_argument('--scatter', help='CSV of (n, ratio_nn, ratio_greedy, opt_scale) for the baseline')
    p.set_defaults(handler=cmd_adversarial)
    return parser


# --- commands ---------------------------------------------------------------

def cmd_sample(args: argparse.Namespace) -> int:
    spec = space_from_args(args)
    points = sample(spec, args.n, args.seed)
    status(f"📐 {spec.tag}: diameter {spec.diameter:.6g}, dimension {similarity_dimension(spec):.4f}")
    if truncation_error(spec) > 0:
        status(f"📐 Address truncation error <= {truncation_error(spec):.3g}")

    if args.format == 'json':
        write_json({'space': spec.to_toml_dict(), 'n': len(points), 'seed': args.seed,
                    'points': points.coordinates()}, args.out)
    elif args.out:
        save_points_csv(points, args.out)
    else:
        sys.stdout.write(points_to_csv_text(points))
    if args.space_toml:
        save_space_toml(spec, args.space_toml)
    if args.out:
        status(f"📁 Wrote {len(points)} points to {args.out}")
    return EXIT_OK


def _load_or_sample(args: argparse.Namespace, spec: SpaceSpec):
    if args.input:
        points = load_points_csv(args.input, spec)
        status(f"📁 Loaded {len(points)} points from {args.input}")
        return points
    if args.n is None:
        raise SpaceConfigError('solve needs --input or --n')
    return sample(spec, args.n, args.seed)


def cmd_solve(args: argparse.Namespace) -> int:
    spec = space_from_args(args)
    solver = parse_solver(args.solver)
    points = _load_or_sample(args, spec)
    tour, trace = solve(points, solver, start=args.start, two_opt_passes=args.two_opt_passes)
    payload = tour.to_json_dict()
    status(f"✅ {solver.value}: length {tour.length:.6f} over {tour.n} points")

    exit_code = EXIT_OK
    if args.all_starts and solver in (SolverTag.NEAREST_NEIGHBOR, SolverTag.TWO_OPT):
        sweep = nearest_neighbor_all_starts(points)
        payload['start_sweep'] = {k: sweep[k] for k in ('min', 'median', 'max', 'worst_start')}
    if args.verify and trace is not None:
        witness = witness_from_args(spec, args)
        reports = check_suite(points, tour, trace, witness, parse_checks(DEFAULT_TRACE_CHECKS),
                              instance_id=f'seed={args.seed}')
        payload['trace_check'] = verify_trace(points, trace)
        payload['reports'] = [r.dict() for r in reports]
        for r in reports:
            mark = '✅' if r.passed else ('❌' if is_guaranteed_failure(r) else '⚠️')
            status(f"{mark} {r.check}: {r.violation_count} violations")
        if any(is_guaranteed_failure(r) for r in reports) or not payload['trace_check']['ok']:
            exit_code = EXIT_VIOLATION
    elif args.verify:
        status(f"⚠️ {solver.value} keeps no selection trace; nothing to verify")
    write_json(payload, args.out)
    return exit_code


def _verify_trial(spec: SpaceSpec, n: int, seed: int, solvers: Sequence[SolverTag],
                  checks: Sequence[str], witness: RegularityWitness) -> Dict[str, Any]:
    points = sample(spec, n, seed)
    stats = isolation_stats(points, witness) if ('isolation' in checks or 'lower-bound' in checks) else None
    out: Dict[str, Any] = {'seed': seed, 'z': stats.z if stats else None, 'reports': {}}
    if stats:
        out['max_ball_occupancy'] = stats.max_ball_occupancy
    for solver in solvers:
        tour, trace = solve(points, solver)
        out['reports'][solver.value] = check_suite(points, tour, trace, witness, checks, stats,
                                                   instance_id=f'n={n},seed={seed}')
    return out


def cmd_verify(args: argparse.Namespace) -> int:
    spec = space_from_args(args)
    checks = parse_checks(args.checks)
    solvers = [parse_solver(s) for s in args.solvers.split(',') if s.strip()]
    witness = witness_from_args(spec, args)
    status(f"🔍 Verifying {', '.join(checks)} on {args.trials} instances of n = {args.n} ({spec.tag})")

    trials: Dict[int, Dict[str, Any]] = {}
    with ThreadPoolExecutor(max_workers=args.threads) as executor:
        futures = {
            executor.submit(_verify_trial, spec, args.n, trial_seed(args.seed, args.n, t), solvers, checks,
                            witness): t
            for t in range(args.trials)
        }
        for future in as_completed(futures):
            trials[futures[future]] = future.result()

    summary: Dict[str, Any] = {}
    failed = False
    for solver in solvers:
        per_check: Dict[str, Any] = {}
        for t in range(args.trials):
            for r in trials[t]['reports'][solver.value]:
                entry = per_check.setdefault(r.check, {'violations': 0, 'instances_failed': 0})
                entry['violations'] += r.violation_count
                entry['instances_failed'] += 0 if r.passed else 1
                if is_guaranteed_failure(r):
                    failed = True
                    if len(entry.setdefault('examples', [])) < 3:
                        entry['examples'].append(r.dict())
        for check, entry in per_check.items():
            entry['informational'] = check not in GUARANTEED_CHECKS or (
                solver == SolverTag.GREEDY and check in ('star', 'packing'))
            mark = '✅' if not entry['violations'] else ('⚠️' if entry['informational'] else '❌')
            status(f"{mark} {solver.value} {check}: {entry['violations']} violations in "
                   f"{entry['instances_failed']}/{args.trials} instances")
        summary[solver.value] = per_check

    payload: Dict[str, Any] = {
        'space': spec.tag,
        'n': args.n,
        'trials': args.trials,
        'seed': args.seed,
        'checks': checks,
        'witness': witness.dict(),
        'results': summary,
    }
    if 'isolation' in checks:
        fractions = [trials[t]['z'] / args.n for t in range(args.trials)]
        payload['isolation'] = {
            'mean_z_fraction': statistics.fmean(fractions),
            'min_z_fraction': min(fractions),
            'std_z_fraction': statistics.pstdev(fractions),
            'fraction_of_trials_above_third': sum(f >= 1.0 / 3.0 for f in fractions) / len(fractions),
            'max_ball_occupancy': max(trials[t]['max_ball_occupancy'] for t in range(args.trials)),
        }
        status(f"📊 Mean z/n = {payload['isolation']['mean_z_fraction']:.4f} (guarantee e^-1 = 0.3679)")
    payload['passed'] = not failed
    write_json(payload, args.out)
    return EXIT_VIOLATION if failed else EXIT_OK


def _scaling_cell(config: ExperimentConfig, n: int, trial: int, d: float,
                  witness: RegularityWitness) -> Tuple[List[ExperimentRecord], bool]:
    seed = trial_seed(config.master_seed, n, trial)
    records: List[ExperimentRecord] = []
    violated = False
    try:
        points = sample(config.space, n, seed)
        stats = isolation_stats(points, witness)
    except TSPExperimentError as e:
        logger.error(f"Cell n={n} trial={trial} could not be sampled: {e}")
        return [ExperimentRecord(config.space.tag, d, s.value, n, seed, trial, error=f'{type(e).__name__}: {e}')
                for s in config.solvers], False

    for solver in config.solvers:
        record = ExperimentRecord(config.space.tag, d, solver.value, n, seed, trial,
                                  z=stats.z, r=stats.r, lower_bound=stats.lower_bound)
        try:
            started = time.perf_counter()
            tour, trace = solve(points, solver, two_opt_passes=config.two_opt_passes)
            record.wall_time = time.perf_counter() - started
            record.length = tour.length
            if config.checks:
                for report in check_suite(points, tour, trace, witness, config.checks, stats,
                                          instance_id=f'n={n},trial={trial}'):
                    record.checks[report.check] = report.passed
                    violated = violated or is_guaranteed_failure(report)
        except TSPExperimentError as e:
            logger.error(f"Cell n={n} trial={trial} solver={solver.value} failed: {e}")
            record.error = f'{type(e).__name__}: {e}'
        records.append(record)
    return records, violated


def _scaling_summary(config: ExperimentConfig, records: Sequence[ExperimentRecord],
                     witness: RegularityWitness) -> List[Dict[str, Any]]:
    expected = 1.0 - 1.0 / similarity_dimension(config.space)
    summary = []
    for solver in config.solvers:
        data = [(r.n, r.length) for r in records if r.solver == solver.value and r.error is None]
        entry: Dict[str, Any] = {'solver': solver.value, 'expected': expected, 'witness_d': witness.d,
                                 'n_records': len(data)}
        try:
            fit = fit_exponent(data)
            entry.update({'slope': fit.slope, 'intercept': fit.intercept, 'stderr': fit.stderr,
                          'empirical_constant': fit.empirical_constant})
        except InsufficientDataError as e:
            entry['error'] = str(e)
        if data:
            entry['mean_length_by_n'] = {str(n): v for n, v in mean_length_by_n(data).items()}
            entry['monotone_trend'] = trend_is_monotone(data)
        summary.append(entry)
    return summary


def cmd_scaling(args: argparse.Namespace) -> int:
    config = load_experiment_config(args.config)
    threads = args.threads if args.threads > 1 else config.threads
    csv_path = Path(args.out or config.output.csv)
    overrides = config.witness
    witness = resolve_witness(config.space, d=overrides.d, c_lower=overrides.c_lower,
                              d_upper=overrides.d_upper, seed=config.master_seed,
                              analytic=overrides.analytic)
    cells = [(n, t) for n in config.n_grid for t in range(config.trials_per_n)]
    status(f"🧪 Scaling grid: {config.space.tag}, solvers {[s.value for s in config.solvers]}, "
           f"{len(config.n_grid)} sizes x {config.trials_per_n} trials, {threads} threads")

    collected: Dict[Tuple[int, int], List[ExperimentRecord]] = {}
    violated = False
    with OrderedRecordWriter(csv_path, cells, append=args.append) as writer:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            futures = {executor.submit(_scaling_cell, config, n, t, witness.d, witness): (n, t)
                       for n, t in cells}
            for future in as_completed(futures):
                key = futures[future]
                records, bad = future.result()
                collected[key] = records
                violated = violated or bad
                writer.add(key, records)
                n, t = key
                if t == config.trials_per_n - 1:
                    logger.info(f"Finished trial {t} at n = {n}")

    records = [r for cell in cells for r in collected[cell]]
    errors = sum(r.error is not None for r in records)
    summary = _scaling_summary(config, records, witness)
    write_json(summary, config.output.json_path)
    status(f"📁 Records: {csv_path} ({len(records)} rows), summary: {config.output.json_path}")
    for entry in summary:
        if 'slope' in entry:
            status(f"📊 {entry['solver']}: slope {entry['slope']:.4f} +- {entry['stderr']:.4f} "
                   f"(expected {entry['expected']:.4f})")
        else:
            status(f"⚠️ {entry['solver']}: {entry['error']}")
    if errors:
        status(f"⚠️ {errors} records carry an error tag")
    if violated:
        status("❌ Guaranteed invariants were violated; see the checks column")
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_adversarial(args: argparse.Namespace) -> int:
    spec = space_from_args(args)
    status(f"🎯 Adversarial search on {spec.tag}: n = {args.n}, {args.iterations} iterations, "
           f"{args.restarts} restarts")
    result = adversarial_search(spec, args.n, args.iterations, args.seed, restarts=args.restarts,
                                step_frac=args.step_frac, threads=args.threads)
    trials = args.baseline_trials or (100 if args.scatter else 0)
    if trials:
        rows = baseline_rows(spec, args.n, trials, args.seed, args.threads)
        result.baseline = compare_to_baseline(summarize_baseline(rows), instance_ratios(result.points))
        if args.scatter:
            save_scatter_csv(scatter_rows(rows), args.scatter)
            status(f"📁 Scatter rows: {args.scatter}")
    status(f"✅ NN ratio {result.initial_ratio_nn:.4f} -> {result.ratio_nn:.4f}, "
           f"greedy ratio {result.ratio_greedy:.4f}, opt scale {result.opt_vs_random_scale:.4f}")
    write_json(result.to_json_dict(), args.out)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    global _quiet
    parser = build_parser()
    args = parser.parse_args(argv)
    _quiet = args.quiet
    level = logging.DEBUG if args.verbose else (logging.WARNING if args.quiet else logging.INFO)
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s', stream=sys.stderr)

    try:
        return args.handler(args)
    except TSPExperimentError as e:
        print(f"❌ {e}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
