import math

import numpy as np
import pytest

from smp_perturb import catalog
from smp_perturb.verify import central_differences, check_expansions, finiteness_route_agreement, rel_err, run_suite


def test_rel_err_scaling():
    assert rel_err([1.0, 2.0], [1.0, 2.5]) == pytest.approx(0.2)
    assert rel_err([1e-14], [0.0], ref=1.0) == pytest.approx(1e-14)
    assert rel_err([1e-3], [0.0]) == pytest.approx(1e-3)


def test_central_differences_accuracy():
    d1, d2 = central_differences(np.exp, 0.3, 1e-3)
    assert d1 == pytest.approx(math.exp(0.3), rel=1e-11)
    assert d2 == pytest.approx(math.exp(0.3), rel=1e-6)


def test_finiteness_route_agreement_cycle(cycle):
    for rho in (-0.5, 0.5):
        for verdicts in finiteness_route_agreement(cycle, 0.0, rho).values():
            assert len(set(verdicts)) == 1


def test_check_expansions_on_m2(M2):
    checks = check_expansions(M2, 0.1, 2)
    assert [c.name for c in checks][-1] == "polynomial-fit oracle"
    assert all(c.passed for c in checks), checks


def test_run_suite_passes():
    m = catalog.random_models(21, 1)[0]
    failed = [c for c in run_suite(m, k=1) if not c.passed]
    assert not failed
