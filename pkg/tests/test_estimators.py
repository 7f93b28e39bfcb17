import math

import numpy as np
import pytest

from boolperc.estimators import (
    PHI_C_DISKS_2D,
    bracket_threshold_hat,
    covered_volume_fraction,
    critical_covered_volume,
    crossing_indicators,
    crossing_thresholds,
    diameter_moment_probe,
    estimate_covered_volume,
    estimate_crossing,
    estimate_one_arm,
    eta_fattening_probe,
    ladder_verdict,
    lambda_for_covered_volume,
    limit_curve,
    multiscale_crossing_scan,
    one_arm_indicators,
    one_arm_verdict,
    two_scale_curve,
    two_scale_measure,
    wilson_interval,
)
from boolperc.measures import RadiusMeasure, combine, moment
from boolperc.sampler import stream

disk = RadiusMeasure.delta(1.0)
LAMBDA_C = -math.log(1 - PHI_C_DISKS_2D) / math.pi


def zero():
    return combine([(0, disk)], allow_zero=True)


def test_wilson_examples():
    z = 1.959963984540054
    lo, hi = wilson_interval(0, 10)
    assert lo == 0 and hi == pytest.approx(z * z / (10 + z * z))
    lo, hi = wilson_interval(5, 10)
    assert lo == pytest.approx(1 - hi) and lo < 0.5 < hi
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_wilson_coverage_calibration():
    rng = stream(0, 1)
    hits = 0
    for _ in range(1000):
        p = rng.uniform(0.02, 0.98)
        n = int(rng.integers(20, 400))
        lo, hi = wilson_interval(int(rng.binomial(n, p)), n)
        hits += lo <= p <= hi
    assert hits >= 930


def test_crossing_zero_intensity():
    est = estimate_crossing(zero(), 8, 2, 20, seed=0)
    assert est.k == 0 and est.p_hat == 0 and est.lo == 0


def test_crossing_huge_dense_balls():
    a = 0.5
    mu = RadiusMeasure.delta(10 * a, 5.0)
    # a ball of radius 10a centred in B(9a) covers B(a); P(none) = exp(-5 pi (9a)**2)
    assert math.exp(-5 * math.pi * (9 * a) ** 2) < 1e-100
    est = estimate_crossing(mu, a, 2, 50, seed=1)
    assert est.p_hat == 1.0 and est.lo <= 1.0 <= est.hi


def test_crossing_critical_self_consistency():
    mu = combine([(0.359, disk)])
    x = estimate_crossing(mu, 16, 2, 300, seed=1)
    y = estimate_crossing(mu, 16, 2, 300, seed=2)
    assert x.lo <= y.hi and y.lo <= x.hi
    assert x.lo <= x.p_hat <= x.hi


def test_crossing_deterministic_and_worker_independent():
    mu = combine([(0.3, disk)])
    a = crossing_indicators(mu, 6, 2, 24, seed=5, workers=1)
    b = crossing_indicators(mu, 6, 2, 24, seed=5, workers=2)
    assert np.array_equal(a, b)


def test_one_arm_examples():
    assert estimate_one_arm(zero(), 4, 2, 10, seed=0).p_hat == 0
    arm, cross = one_arm_indicators(combine([(0.35, disk)]), 8, 2, 200, seed=3)
    assert not np.any(arm & ~cross)
    assert arm.sum() > 0


def test_one_arm_subcritical_decay():
    mu = combine([(0.2, disk)])
    diag = [estimate_one_arm(mu, r, 2, 2000, seed=4).diagnostic for r in (8, 16, 32)]
    assert diag[0] > diag[1] > diag[2] or (diag[0] > diag[1] and diag[2] == 0)


def test_ladder_verdict():
    assert ladder_verdict([0, 0, 0], 100, 0.05, 0.6)[0] == "subcritical"
    assert ladder_verdict([50, 20, 3], 100, 0.05, 0.6)[0] == "subcritical"
    assert ladder_verdict([90, 95, 99], 100, 0.05, 0.6)[0] == "supercritical"
    assert ladder_verdict([50, 40, 30], 100, 0.05, 0.6)[0] == "inconclusive"
    assert ladder_verdict([1, 30, 3], 100, 0.05, 0.6)[0] == "inconclusive"


def test_thresholds_match_direct_estimates():
    mu, lam_max = disk, 0.5
    th = crossing_thresholds(mu, 6.0, 2, lam_max, 200, seed=3)
    assert np.all((th <= lam_max) | np.isinf(th))
    # the thinned model at lam is exactly Sigma(lam mu): compare with a direct estimate
    direct = estimate_crossing(combine([(0.3, mu)]), 6.0, 2, 400, seed=9)
    p = np.mean(th <= 0.3)
    lo, hi = wilson_interval(int(np.sum(th <= 0.3)), 200)
    assert lo <= direct.hi and direct.lo <= hi and 0 < p < 1


def test_bracket_basic_properties():
    br = bracket_threshold_hat(disk, 2, ladder=(4, 8, 16), n=200, seed=1)
    assert 0 < br.lambda_lo < br.lambda_hi < 1
    assert any(e.lam == 0.0 and e.verdict == "subcritical" for e in br.evidence)
    for e in br.evidence:
        if e.verdict == "subcritical":
            assert e.lam <= br.lambda_lo
        if e.verdict == "supercritical":
            assert e.lam >= br.lambda_hi


def test_bracket_mass_scaling_is_exact():
    a = bracket_threshold_hat(disk, 2, ladder=(4, 8), n=100, seed=2)
    b = bracket_threshold_hat(RadiusMeasure.delta(1.0, 2.0), 2, ladder=(4, 8), n=100, seed=2)
    assert b.lambda_lo == pytest.approx(a.lambda_lo / 2, rel=1e-12)
    assert b.lambda_hi == pytest.approx(a.lambda_hi / 2, rel=1e-12)


def test_bracket_rejects_bad_ladder():
    with pytest.raises(ValueError):
        bracket_threshold_hat(disk, 2, ladder=(8, 4), n=10)


def test_covered_volume_examples():
    assert covered_volume_fraction(zero(), 2) == 0
    for lam in (0.1, 0.35907, 1.0):
        assert critical_covered_volume(lam, disk, 2) == pytest.approx(1 - math.exp(-math.pi * lam), rel=1e-14)
    # 0.35907 truncates lambda_c = 0.359079..., hence the 2e-5 slack
    assert critical_covered_volume(0.35907, disk, 2) == pytest.approx(0.67635, abs=2e-5)
    assert critical_covered_volume(LAMBDA_C, disk, 2) == pytest.approx(PHI_C_DISKS_2D, rel=1e-14)
    assert covered_volume_fraction(RadiusMeasure.pareto(1, 2.5), 2) == 1.0
    assert lambda_for_covered_volume(PHI_C_DISKS_2D, disk, 2) == pytest.approx(LAMBDA_C, rel=1e-14)


def test_empirical_coverage_matches_formula():
    mu = combine([(0.3, disk)])
    mean, se = estimate_covered_volume(mu, 24.0, 2, 50, 2000, seed=0)
    expected = covered_volume_fraction(mu, 2)
    assert abs(mean - expected) < 3 * se


def test_limit_curve():
    assert limit_curve(0.0) == pytest.approx(PHI_C_DISKS_2D)
    assert limit_curve(1.0) == pytest.approx(PHI_C_DISKS_2D)
    assert limit_curve(0.5) == 1 - (1 - PHI_C_DISKS_2D) ** 2
    assert limit_curve(0.5) == pytest.approx(0.89525, abs=1e-5)
    alpha = np.linspace(0.05, 0.95, 19)
    direct = 1 - np.exp(-math.pi * LAMBDA_C * np.minimum(1 / alpha, 1 / (1 - alpha)))
    np.testing.assert_allclose(limit_curve(alpha), direct, rtol=1e-12)


@pytest.mark.parametrize("rho", [2.0, 5.0, 10.0])
def test_two_scale_mixture_moment(rho):
    for alpha in (0.0, 0.1, 0.5, 0.9, 1.0):
        assert moment(two_scale_measure(disk, disk, alpha, rho, 2), 2) == pytest.approx(1.0, rel=1e-12)


def test_two_scale_curve_rows():
    rows = two_scale_curve(disk, disk, [0.5], 2.0, 2, ladder=(2, 4), n=60, seed=0, phi_c=PHI_C_DISKS_2D)
    (row,) = rows
    assert row["ci_lo"] <= row["phi_hat"] <= row["ci_hi"]
    assert row["phi_limit"] == limit_curve(0.5)
    assert row["alpha"] == 0.5 and row["rho"] == 2.0


def test_multiscale_scan_monotone_in_levels():
    out = multiscale_crossing_scan(disk, 0.12, 2.0, 2, [4.0, 8.0], 2, 40, seed=0)
    ind = out["indicators"]
    assert ind.shape == (40, 3, 2)
    assert np.all(np.diff(ind.astype(int), axis=1) >= 0)
    est = out["estimates"]
    assert est[(0, 4.0)].p_hat <= est[(1, 4.0)].p_hat <= est[(2, 4.0)].p_hat


def test_multiscale_scan_subcritical_trend():
    out = multiscale_crossing_scan(disk, 0.05, 10.0, 1, [2.0, 8.0, 32.0], 2, 200, seed=1)
    p = [out["estimates"][(1, a)].p_hat for a in (2.0, 8.0, 32.0)]
    assert p[0] > p[2]


def test_diameter_probe_zero():
    res = diameter_moment_probe(zero(), 1.0, 10.0, 0, 1.0, [2.0, 4.0], 2, 10, seed=0)
    assert all(r["moment"] == 0 for r in res["rows"])


def test_eta_fattening_probe_shape():
    out = eta_fattening_probe(disk, 0.15, 2, (4.0, 8.0, 16.0), [0.01, 0.1], 200, seed=0)
    assert set(out) == {0.01, 0.1}
    assert any(dec for _, dec in out.values())


def test_threshold_ordering_on_shared_evidence():
    for lam in (0.1, 0.25, 0.36, 0.5):
        arm, cross = one_arm_verdict(disk, lam, (4.0, 8.0, 16.0), 2, 200, seed=0)
        assert not (arm == "supercritical" and cross == "subcritical")
        if arm == "supercritical":
            assert cross == "supercritical"
