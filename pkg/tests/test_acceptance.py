"""Acceptance criteria 1-10, each at its stated tolerance and time limit.

Every test prints one ``criterion NN PASS/FAIL`` line; the lines are
repeated together at the end of the pytest run.
"""
from arwlab import acceptance as acc
from conftest import ACCEPTANCE_LINES


def check(result):
    line = result.line()
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert result.passed, line
    assert result.in_time, f"over the time limit: {line}"


def test_criterion_01_abelianness():
    check(acc.criterion_1())


def test_criterion_02_F_closed_cases():
    check(acc.criterion_2())


def test_criterion_03_F_oracle_agreement():
    check(acc.criterion_3())


def test_criterion_04_rolling_lower_bound():
    check(acc.criterion_4())


def test_criterion_05_exit_density_floor_vs_contrast():
    check(acc.criterion_5())


def test_criterion_06_two_color_monotonicity():
    # The mean ordering holds; exact pathwise dominance under red addition
    # does not hold for this two-color construction (see
    # tests/test_couplings.py::test_documented_red_addition_counterexample),
    # so this test fails by design of the dynamics, not by tolerance.
    check(acc.criterion_6())


def test_criterion_07_branching_bound():
    check(acc.criterion_7())


def test_criterion_08_well_definedness_probe():
    check(acc.criterion_8())


def test_criterion_09_sitewise_vs_particlewise_law():
    check(acc.criterion_9())


def test_criterion_10_determinism(tmp_path):
    check(acc.criterion_10(tmp_path))

