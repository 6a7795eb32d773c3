"""
Run every unit test module and print a summary.

    python tests/run_all_tests.py             # unit tests
    RUN_ACCEPTANCE=1 python tests/run_all_tests.py   # plus the acceptance corpus
"""

import argparse
import os
import sys
import unittest

TEST_MODULES = [
    'test_spaces',
    'test_solvers',
    'test_analysis',
    'test_adversarial',
    'test_cli',
    'test_acceptance',
]


def run_all_tests(verbosity: int = 2) -> bool:
    """Run all unit tests"""
    print("🧪 Running TSP experiment tests")
    print("=" * 50)

    tests_dir = os.path.dirname(os.path.abspath(__file__))
    sys.path.insert(0, tests_dir)
    test_suite = unittest.TestSuite()
    loader = unittest.TestLoader()
    for name in TEST_MODULES:
        test_suite.addTests(loader.loadTestsFromName(name))

    runner = unittest.TextTestRunner(verbosity=verbosity)
    result = runner.run(test_suite)

    print("\n" + "=" * 50)
    print("📋 TEST SUMMARY")
    print("=" * 50)
    print(f"Tests Run: {result.testsRun}")
    print(f"✅ Passed: {result.testsRun - len(result.failures) - len(result.errors) - len(result.skipped)}")
    print(f"❌ Failed: {len(result.failures)}")
    print(f"💥 Errors: {len(result.errors)}")
    print(f"⏭️  Skipped: {len(result.skipped)}")

    if result.failures:
        print("\n❌ Failures:")
        for test, error in result.failures:
            print(f"   └─ {test}: {error}")

    if result.errors:
        print("\n💥 Errors:")
        for test, error in result.errors:
            print(f"   └─ {test}: {error}")

    ran = result.testsRun - len(result.skipped)
    success_rate = ((ran - len(result.failures) - len(result.errors)) / ran * 100) if ran > 0 else 0
    print(f"\nSuccess Rate: {success_rate:.1f}%")

    return result.wasSuccessful()


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description='Run the TSP experiment test suite')
    parser.add_argument('--quiet', '-q', action='store_true', help='Only print the summary')
    args = parser.parse_args()

    success = run_all_tests(verbosity=1 if args.quiet else 2)
    sys.exit(0 if success else 1)
