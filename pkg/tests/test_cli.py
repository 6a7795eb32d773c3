"""
End-to-end tests of the tsp_experiments command line: payloads, exit codes
and determinism across thread counts.
"""

import contextlib
import io
import json
import os
import sys
import tempfile
import unittest
from pathlib import Path

# Add the src directory to path so we can import our modules
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(project_root, 'src'))

from errors import EXIT_CONFIG, EXIT_OK, EXIT_PARSE, EXIT_SIZE_LIMIT
from records import read_records_csv
from tsp_experiments import build_parser, main, parse_translations


def run_cli(*argv):
    """Run main() and capture (exit code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


class CLITestCase(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def write(self, name: str, text: str) -> Path:
        path = self.tmp / name
        path.write_text(text, encoding='utf-8')
        return path


class TestParser(unittest.TestCase):
    """build_parser / parse_translations"""

    def test_subcommands(self):
        parser = build_parser()
        for command in ('sample', 'solve', 'verify', 'adversarial'):
            args = parser.parse_args([command, '--n', '8'])
            self.assertEqual(args.command, command)
        self.assertEqual(parser.parse_args(['scaling', 'grid.toml']).config, 'grid.toml')

    def test_translations(self):
        self.assertEqual(parse_translations('0,0;0.5,0'), [(0.0, 0.0), (0.5, 0.0)])
        self.assertIsNone(parse_translations(None))
        with self.assertRaises(ValueError):
            parse_translations('0,a;1,1')

    def test_threads_must_be_positive(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit):
                build_parser().parse_args(['verify', '--n', '10', '--threads', '0'])


class TestSample(CLITestCase):
    """sample"""

    def test_byte_identical_reruns(self):
        _, first, _ = run_cli('sample', '--space', 'cube', '--dim', '2', '--n', '4', '--seed', '11', '-q')
        _, second, _ = run_cli('sample', '--space', 'cube', '--dim', '2', '--n', '4', '--seed', '11', '-q')
        self.assertEqual(first, second)
        lines = first.splitlines()
        self.assertEqual(lines[0], 'x0,x1')
        self.assertEqual(len(lines), 5)

    def test_gasket_file(self):
        out = self.tmp / 'gasket.csv'
        toml = self.tmp / 'gasket.toml'
        code, _, _ = run_cli('sample', '--space', 'gasket', '--n', '1000', '--depth', '25', '-o', str(out),
                             '--space-toml', str(toml), '-q')
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(out.read_text().splitlines()), 1001)
        self.assertIn('[space]', toml.read_text())

    def test_json_format(self):
        code, stdout, _ = run_cli('sample', '--space', 'torus', '--n', '5', '--format', 'json', '-q')
        self.assertEqual(code, EXIT_OK)
        data = json.loads(stdout)
        self.assertEqual(data['n'], 5)
        self.assertEqual(len(data['points']), 5)

    def test_zero_dimension(self):
        code, stdout, stderr = run_cli('sample', '--space', 'cube', '--dim', '0', '--n', '4')
        self.assertEqual(code, EXIT_CONFIG)
        self.assertEqual(stdout, '')
        self.assertIn('ambient_dim', stderr)

    def test_bad_translations(self):
        code, _, _ = run_cli('sample', '--space', 'ifs', '--ratio', '0.5', '--translations', '0,x', '--n', '4',
                             '-q')
        self.assertEqual(code, EXIT_CONFIG)


class TestSolve(CLITestCase):
    """solve"""

    SQUARE_CSV = 'x0,x1\n0,0\n1,0\n1,1\n0,1\n'

    def test_square_all_solvers(self):
        path = self.write('square.csv', self.SQUARE_CSV)
        for solver in ('nn', 'greedy', 'exact', 'brute', 'two-opt'):
            code, stdout, _ = run_cli('solve', '--input', str(path), '--solver', solver, '-q')
            self.assertEqual(code, EXIT_OK, solver)
            tour = json.loads(stdout)
            self.assertAlmostEqual(tour['length'], 4.0)
            self.assertEqual(sorted(tour['order']), [0, 1, 2, 3])

    def test_nn_order_from_start(self):
        path = self.write('square.csv', self.SQUARE_CSV)
        _, stdout, _ = run_cli('solve', '--input', str(path), '--solver', 'nn', '--start', '0', '-q')
        self.assertEqual(json.loads(stdout)['order'], [0, 1, 2, 3])

    def test_verify_embeds_reports(self):
        code, stdout, _ = run_cli('solve', '--n', '200', '--seed', '3', '--solver', 'nn', '--verify',
                                  '--all-starts', '-q')
        self.assertEqual(code, EXIT_OK)
        payload = json.loads(stdout)
        self.assertTrue(payload['trace_check']['ok'])
        self.assertEqual([r['check'] for r in payload['reports']], ['star', 'packing', 'bound-chain'])
        self.assertLessEqual(payload['start_sweep']['min'], payload['start_sweep']['max'])

    def test_exact_size_limit(self):
        code, _, stderr = run_cli('solve', '--n', '25', '--solver', 'exact')
        self.assertEqual(code, EXIT_SIZE_LIMIT)
        self.assertIn('n = 25', stderr)

    def test_unparseable_input(self):
        path = self.write('bad.csv', 'x0,x1\n0.1,zebra\n')
        code, _, _ = run_cli('solve', '--input', str(path), '-q')
        self.assertEqual(code, EXIT_PARSE)

    def test_header_width_mismatch(self):
        path = self.write('cube3.csv', 'x0,x1,x2\n0.1,0.2,0.3\n0.4,0.5,0.6\n0.7,0.8,0.9\n')
        code, _, stderr = run_cli('solve', '--input', str(path), '--dim', '2')
        self.assertEqual(code, EXIT_PARSE)
        self.assertIn('3 coordinates per point', stderr)

    def test_missing_input(self):
        code, _, _ = run_cli('solve', '--input', str(self.tmp / 'nope.csv'), '-q')
        self.assertEqual(code, EXIT_PARSE)

    def test_unknown_solver(self):
        code, _, _ = run_cli('solve', '--n', '10', '--solver', 'christofides', '-q')
        self.assertEqual(code, EXIT_CONFIG)

    def test_out_file(self):
        out = self.tmp / 'tour.json'
        code, stdout, _ = run_cli('solve', '--n', '12', '--solver', 'greedy', '-o', str(out), '-q')
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(stdout, '')
        self.assertEqual(json.loads(out.read_text())['solver'], 'greedy')


class TestVerify(CLITestCase):
    """verify"""

    def test_nn_checks_pass(self):
        code, stdout, _ = run_cli('verify', '--space', 'cube', '--n', '150', '--trials', '5',
                                  '--checks', 'star,packing,bound-chain', '-q')
        self.assertEqual(code, EXIT_OK)
        payload = json.loads(stdout)
        self.assertTrue(payload['passed'])
        self.assertEqual(payload['results']['nearest-neighbor']['star']['violations'], 0)

    def test_isolation_fraction(self):
        code, stdout, _ = run_cli('verify', '--n', '1000', '--trials', '5', '--checks', 'isolation,lower-bound',
                                  '--threads', '2', '--witness', 'analytic', '-q')
        self.assertEqual(code, EXIT_OK)
        self.assertGreaterEqual(json.loads(stdout)['isolation']['mean_z_fraction'], 0.33)

    def test_greedy_findings_do_not_fail(self):
        code, stdout, _ = run_cli('verify', '--space', 'gasket', '--n', '80', '--trials', '3',
                                  '--solvers', 'nn,greedy', '--checks', 'star,packing,bound-chain',
                                  '--d-estimate', '1.585', '--c-lower', '0.5', '--d-upper', '4', '-q')
        self.assertEqual(code, EXIT_OK)
        results = json.loads(stdout)['results']
        self.assertTrue(results['greedy']['star']['informational'])
        self.assertFalse(results['nearest-neighbor']['star']['informational'])

    def test_unknown_check(self):
        code, _, stderr = run_cli('verify', '--n', '10', '--checks', 'star,bogus')
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn('bogus', stderr)

    def test_threads_do_not_change_payload(self):
        argv = ('verify', '--space', 'gasket', '--n', '120', '--trials', '6', '--solvers', 'nn,greedy',
                '--checks', 'star,packing,bound-chain,isolation,lower-bound', '--seed', '4', '-q')
        code, single, _ = run_cli(*argv, '--threads', '1')
        self.assertEqual(code, EXIT_OK)
        code, pooled, _ = run_cli(*argv, '--threads', '8')
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(single, pooled)

    def test_witness_is_estimated_unless_asked(self):
        argv = ('verify', '--n', '50', '--trials', '1', '--checks', 'lower-bound', '-q')
        _, stdout, _ = run_cli(*argv)
        self.assertEqual(json.loads(stdout)['witness']['source'], 'estimated')
        _, stdout, _ = run_cli(*argv, '--witness', 'analytic')
        witness = json.loads(stdout)['witness']
        self.assertEqual(witness['source'], 'analytic')
        self.assertEqual(witness['c_lower'], 0.5)

    def test_no_analytic_witness_for_gasket(self):
        code, _, stderr = run_cli('verify', '--space', 'gasket', '--n', '50', '--witness', 'analytic')
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn('analytic', stderr)


class TestScaling(CLITestCase):
    """scaling"""

    def config(self, name: str, n_grid: str = '[8, 16, 32]', witness: str = '') -> Path:
        return self.write(name, f"""
n_grid = {n_grid}
trials_per_n = 2
master_seed = 5
solvers = ["nn", "greedy"]
checks = ["star", "bound-chain", "lower-bound"]

[space]
preset = "cube"
dim = 2
{witness}
[output]
csv = "{(self.tmp / (name + '.csv')).as_posix()}"
json = "{(self.tmp / (name + '.json')).as_posix()}"
""")

    def test_threads_do_not_change_records(self):
        path = self.config('grid')
        code, _, _ = run_cli('scaling', str(path), '--threads', '1', '-q')
        self.assertEqual(code, EXIT_OK)
        single = (self.tmp / 'grid.csv').read_bytes()
        code, _, _ = run_cli('scaling', str(path), '--threads', '4', '-q')
        self.assertEqual(code, EXIT_OK)
        self.assertEqual((self.tmp / 'grid.csv').read_bytes(), single)

        rows = read_records_csv(self.tmp / 'grid.csv')
        self.assertEqual(len(rows), 3 * 2 * 2)
        self.assertEqual([(r['n'], r['trial'], r['solver']) for r in rows[:4]],
                         [('8', '0', 'nearest-neighbor'), ('8', '0', 'greedy'),
                          ('8', '1', 'nearest-neighbor'), ('8', '1', 'greedy')])
        self.assertTrue(all(r['error'] == '' for r in rows))
        self.assertTrue((self.tmp / 'grid.timing.csv').exists())

        summary = json.loads((self.tmp / 'grid.json').read_text())
        self.assertEqual([s['solver'] for s in summary], ['nearest-neighbor', 'greedy'])
        self.assertEqual(summary[0]['n_records'], 6)
        self.assertIn('slope', summary[0])

    def test_out_overrides_csv(self):
        path = self.config('grid')
        out = self.tmp / 'elsewhere.csv'
        code, _, _ = run_cli('scaling', str(path), '-o', str(out), '-q')
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(read_records_csv(out)), 12)

    def test_append(self):
        path = self.config('grid')
        run_cli('scaling', str(path), '-q')
        run_cli('scaling', str(path), '--append', '-q')
        self.assertEqual(len(read_records_csv(self.tmp / 'grid.csv')), 24)

    def test_empty_grid(self):
        code, _, stderr = run_cli('scaling', str(self.config('empty', '[]')))
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn('n_grid', stderr)

    def test_missing_config(self):
        code, _, _ = run_cli('scaling', str(self.tmp / 'missing.toml'), '-q')
        self.assertEqual(code, EXIT_CONFIG)

    def test_witness_table(self):
        path = self.config('closed', witness='\n[witness]\nanalytic = true\n')
        code, _, _ = run_cli('scaling', str(path), '-q')
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(json.loads((self.tmp / 'closed.json').read_text())[0]['witness_d'], 2.0)

        path = self.config('estimated')
        code, _, _ = run_cli('scaling', str(path), '-q')
        self.assertEqual(code, EXIT_OK)
        self.assertNotEqual(json.loads((self.tmp / 'estimated.json').read_text())[0]['witness_d'], 2.0)


class TestAdversarial(CLITestCase):
    """adversarial"""

    def test_deterministic_payload(self):
        argv = ('adversarial', '--n', '6', '--iterations', '30', '--seed', '2', '-q')
        code, first, _ = run_cli(*argv)
        self.assertEqual(code, EXIT_OK)
        _, second, _ = run_cli(*argv)
        self.assertEqual(first, second)
        payload = json.loads(first)
        self.assertGreaterEqual(payload['ratio_nn'], 1.0 - 1e-9)
        self.assertEqual(len(payload['points']), 6)

    def test_scatter_file(self):
        scatter = self.tmp / 'scatter.csv'
        code, stdout, _ = run_cli('adversarial', '--n', '6', '--iterations', '5', '--baseline-trials', '6',
                                  '--scatter', str(scatter), '-q')
        self.assertEqual(code, EXIT_OK)
        lines = scatter.read_text().splitlines()
        self.assertEqual(lines[0], 'n,ratio_nn,ratio_greedy,opt_scale')
        self.assertEqual(len(lines), 7)
        self.assertEqual(json.loads(stdout)['baseline']['trials'], 6)

    def test_size_limit(self):
        code, _, _ = run_cli('adversarial', '--n', '30', '--iterations', '1', '-q')
        self.assertEqual(code, EXIT_SIZE_LIMIT)

    def test_threads_do_not_change_payload(self):
        argv = ('adversarial', '--n', '7', '--iterations', '20', '--restarts', '3', '--baseline-trials', '5',
                '--seed', '8', '-q')
        code, single, _ = run_cli(*argv, '--threads', '1')
        self.assertEqual(code, EXIT_OK)
        code, pooled, _ = run_cli(*argv, '--threads', '8')
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(single, pooled)


if __name__ == '__main__':
    unittest.main(verbosity=2)
