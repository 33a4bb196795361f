"""Acceptance gate: one study per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""
import sys
import time

import pytest

from halfcrystal import experiments as exp


def _decay():
    a, b = exp.decay_study(1), exp.decay_study(2)
    metrics = {"slope_d1": a.metrics["slope"], "slope_d2": b.metrics["slope"],
               "outside_mass": max(a.metrics["outside_mass"], b.metrics["outside_mass"])}
    return exp.StudyResult("decay exponents", a.passed and b.passed, metrics, a.rows + b.rows)


# (id, runner, runtime budget in seconds)
CRITERIA = [
    ("01-dispersion", exp.dispersion_study, 10),
    ("02-propagator", exp.propagator_study, 10),
    ("03-dynamics", exp.dynamics_study, 60),
    ("04-sampler", exp.sampler_study, 60),
    ("05-convergence", exp.convergence_study, 300),
    ("06-two-path", exp.two_path_study, 10),
    ("07-stationarity", exp.stationarity_study, 300),
    ("08-gaussianity", exp.gaussianity_study, 600),
    ("09-decay", _decay, 300),
    ("10-decomposition", exp.decomposition_study, 120),
    ("11-uniform-bound", exp.uniform_bound_study, 120),
]


def evaluate(runner, budget):
    start = time.perf_counter()
    res = runner()
    elapsed = time.perf_counter() - start
    ok = res.passed and elapsed < budget
    line = f"{'PASS' if ok else 'FAIL'}  {res.line()[6:]}, runtime={elapsed:.1f}s/{budget}s"
    return ok, line


@pytest.mark.parametrize("cid,runner,budget", CRITERIA, ids=[c[0] for c in CRITERIA])
def test_criterion(cid, runner, budget, capsys):
    ok, line = evaluate(runner, budget)
    with capsys.disabled():
        print(f"\n[{cid}] {line}")
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(r, b) for _, r, b in CRITERIA]
    for (cid, _, _), (_, line) in zip(CRITERIA, results):
        print(f"[{cid}] {line}")
    sys.exit(0 if all(ok for ok, _ in results) else 1)
