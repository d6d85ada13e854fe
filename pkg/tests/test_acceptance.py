"""Acceptance criteria, one test each; every test prints its pass/fail line."""
import pytest

from qpkam.acceptance import CHECKS, run_check


def _run(index):
    r = run_check(index, seed=0 if index != 9 else 1, jobs=1)
    print(r.line())
    for k, v in r.detail.items():
        print(f"    {k}: {v}")
    return r


@pytest.mark.acceptance
@pytest.mark.parametrize("index", [i for i, _, _ in CHECKS if i != 11],
                         ids=[name.replace(" ", "_") for i, name, _ in CHECKS if i != 11])
def test_criterion(index):
    assert _run(index).passed


@pytest.mark.acceptance
def test_criterion_11_unitarity_and_determinism():
    # kept last: it reruns the command line end to end
    assert _run(11).passed
