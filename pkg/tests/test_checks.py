import numpy as np
import pytest

from src.pipeline.checks import (CHECKS, check_admm_magnitudes, check_curvature_ordering, check_fisher_vs_hessian,
                                 check_gradients, check_initialization, dft_matrix, run_checks)


def test_dft_matrix_matches_fft(rng):
    x = rng.standard_normal(4)
    np.testing.assert_allclose(dft_matrix(7, 4) @ x, np.fft.fft(x, n=7), atol=1e-12)


@pytest.mark.parametrize("check", [check_initialization, check_gradients, check_curvature_ordering,
                                   check_fisher_vs_hessian])
def test_fast_checks_pass(check):
    result = check(np.random.default_rng(0))
    assert result.passed, result.details


def test_admm_magnitude_check_small_sweep():
    result = check_admm_magnitudes(np.random.default_rng(1), draws=500)
    assert result.passed, result.details


def test_failing_check_is_reported(monkeypatch):
    def broken(rng):
        raise RuntimeError("boom")

    monkeypatch.setitem(CHECKS, "initialization", broken)
    report = run_checks(names=["initialization"])
    assert not report["passed"]
    assert report["checks"][0]["details"]["error"] == "boom"


@pytest.mark.slow
def test_all_checks_pass(tmp_path):
    report = run_checks(seed=0, report_path=str(tmp_path / "report.json"))
    failed = [c["name"] for c in report["checks"] if not c["passed"]]
    assert not failed, failed
    assert (tmp_path / "report.json").exists()
