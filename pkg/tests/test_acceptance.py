"""End-to-end acceptance gate: every shipped claim gets one pass/fail line.

Each test runs one numbered criterion from cutoff_lab.verify at its stated
tolerance and prints the same line the `cutoff-lab verify` subcommand
reports. The slow ones are also tagged with the slow marker so a quick
`pytest -m "not slow"` pass stays under a minute.
"""

import pytest

from cutoff_lab.verify import run_criteria

pytestmark = pytest.mark.acceptance


def _check(number):
    res = run_criteria([number])[0]
    print(res.line())
    assert res.passed, res.line()


def test_01_exact_1d_gap():
    _check(1)


def test_02_detailed_balance():
    _check(2)


def test_03_product_min_gap():
    _check(3)


def test_04_monotone_order():
    _check(4)


def test_05_support_soundness():
    _check(5)


def test_06_barrier_discrepancy():
    _check(6)


def test_07_estimator_oracle():
    _check(7)


@pytest.mark.slow
def test_08_gap_extraction():
    _check(8)


@pytest.mark.slow
def test_09_gap_stabilization():
    _check(9)


@pytest.mark.slow
def test_10_cutoff_diagnostics():
    _check(10)


@pytest.mark.slow
def test_11_support_sparsification():
    _check(11)


def test_12_mt_contraction():
    _check(12)
