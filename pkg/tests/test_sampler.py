import math

import numpy as np
import pytest
from scipy import stats

from boolperc.measures import MultiscaleSpec, RadiusMeasure, combine, multiscale_truncated, scale_measure
from boolperc.sampler import (
    DivergentIntensityError,
    Realization,
    fatten,
    read_csv,
    rescale,
    sample_boolean,
    sample_dominated_pair,
    sample_multiscale,
    stream,
    thin,
    unit_ball_volume,
    window_intensity,
    write_csv,
)

delta1 = RadiusMeasure.delta(1.0)


def test_unit_ball_volume():
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)
    assert unit_ball_volume(4) == pytest.approx(math.pi**2 / 2)


def test_window_intensity_examples():
    assert window_intensity(delta1, 3, 2) == pytest.approx(16 * math.pi, rel=1e-12)
    assert window_intensity(combine([(0, delta1)], allow_zero=True), 3, 2) == 0
    nu1, nu2 = RadiusMeasure.atomic([(0.5, 2)]), RadiusMeasure.pareto(1, 5)
    both = combine([(1, nu1), (1, nu2)])
    assert window_intensity(both, 2.5, 3) == pytest.approx(window_intensity(nu1, 2.5, 3) + window_intensity(nu2, 2.5, 3))
    assert window_intensity(RadiusMeasure.pareto(1, 3), 1, 2) == math.inf


def test_window_intensity_multiscale_example():
    spec = MultiscaleSpec(delta1, 2, 1)
    assert window_intensity(multiscale_truncated(spec, 2), 4, 2) == pytest.approx(106 * math.pi, rel=1e-12)


def test_divergent_intensity_raises():
    with pytest.raises(DivergentIntensityError):
        sample_boolean(RadiusMeasure.pareto(1, 2.5), 2, 2, stream(0))


def test_empty_measure_gives_empty_sample():
    real = sample_boolean(combine([(0, delta1)], allow_zero=True), 3, 2, stream(0))
    assert len(real) == 0 and real.balls == []


@pytest.mark.parametrize("mu", [delta1, RadiusMeasure.pareto(0.5, 6), RadiusMeasure.uniform(0.2, 2)])
def test_balls_meet_window(mu):
    real = sample_boolean(mu, 3, 3, stream(1))
    assert len(real) > 0
    assert np.all(np.linalg.norm(real.centers, axis=1) < 3 + real.radii)
    assert all(b.radius > 0 for b in real)


def test_poisson_count_law():
    """Counts over 10**4 replicates: chi-square goodness of fit to Poisson(16 pi)."""
    counts = np.array([len(sample_boolean(delta1, 3, 2, stream(7, 0, 0, k))) for k in range(10_000)])
    mean = 16 * math.pi
    sigma = math.sqrt(mean / len(counts))
    assert abs(counts.mean() - mean) < 4 * sigma
    edges = np.arange(35, 67)
    observed = np.array(
        [np.sum(counts < edges[0])] + [np.sum((counts >= lo) & (counts < hi)) for lo, hi in zip(edges[:-1], edges[1:])] + [np.sum(counts >= edges[-1])]
    )
    cdf = stats.poisson.cdf(edges - 1, mean)
    probs = np.diff(np.concatenate([[0.0], cdf, [1.0]]))
    assert observed.sum() == len(counts)
    res = stats.chisquare(observed, probs * len(counts))
    assert res.pvalue > 0.01


def test_tilted_radius_law_pareto():
    """Radii follow (a + r)**d mu(dr) normalised; compare to the numeric CDF."""
    mu, a, d = RadiusMeasure.pareto(1.0, 6.0), 1.5, 2
    radii = np.concatenate([sample_boolean(mu, a, d, stream(3, k)).radii for k in range(300)])

    def cdf(x):
        from scipy import integrate

        dens = lambda r: (a + r) ** d * r**-6.0
        return integrate.quad(dens, 1, x)[0] / integrate.quad(dens, 1, np.inf)[0]

    res = stats.kstest(radii, np.vectorize(cdf))
    assert res.pvalue > 0.001


def test_centers_uniform_in_enlarged_ball():
    real = sample_boolean(RadiusMeasure.delta(0.5), 2.0, 2, stream(5))
    rad = np.linalg.norm(real.centers, axis=1) / 2.5
    # |c| / (a + r) has CDF x**d
    assert stats.kstest(rad, lambda x: np.clip(x, 0, 1) ** 2).pvalue > 0.001


def test_determinism():
    spec = MultiscaleSpec(delta1, 2, 3)
    x = sample_multiscale(spec, 0.3, 6, 2, seed=42, replicate=3)
    y = sample_multiscale(spec, 0.3, 6, 2, seed=42, replicate=3)
    assert np.array_equal(x.centers, y.centers) and np.array_equal(x.radii, y.radii)
    z = sample_multiscale(spec, 0.3, 6, 2, seed=42, replicate=4)
    assert not np.array_equal(x.radii, z.radii) or not np.array_equal(x.centers, z.centers)
    assert x.seed_manifest == {"seed": 42, "tag": 0, "replicate": 3, "levels": 3}


def test_multiscale_level_zero_is_single_scale():
    x = sample_multiscale(MultiscaleSpec(delta1, 2, 0), 0.4, 5, 2, seed=9, replicate=1)
    y = sample_boolean(combine([(0.4, delta1)]), 5, 2, stream(9, 0, 0, 1))
    assert np.array_equal(x.centers, y.centers) and np.array_equal(x.radii, y.radii)


def test_multiscale_prefix_coupling():
    small = sample_multiscale(MultiscaleSpec(delta1, 2, 2), 0.3, 5, 2, seed=1)
    big = sample_multiscale(MultiscaleSpec(delta1, 2, 3), 0.3, 5, 2, seed=1)
    prefix = big.levels_upto(2)
    assert np.array_equal(small.centers, prefix.centers) and np.array_equal(small.radii, prefix.radii)
    assert len(big) > len(small)


def test_multiscale_mean_count():
    spec = MultiscaleSpec(delta1, 2, 1)
    counts = [len(sample_multiscale(spec, 1.0, 4, 2, seed=2, replicate=k)) for k in range(2000)]
    mean = 106 * math.pi
    assert abs(np.mean(counts) - mean) < 4 * math.sqrt(mean / 2000)


def test_multiscale_layer_radii():
    real = sample_multiscale(MultiscaleSpec(delta1, 3, 2), 0.2, 4, 2, seed=0)
    for k in range(3):
        assert np.allclose(real.radii[real.scale_index == k], 3.0**-k)


def test_auto_levels():
    spec = MultiscaleSpec(delta1, 2, "auto")
    real = sample_multiscale(spec, 0.1, 8, 2, seed=0)
    n = real.seed_manifest["levels"]
    # layer n+1 has radius 2**-(n+1); it is kept until its diameter falls below 8e-3
    assert 2 * 2.0 ** -(n + 1) < 8e-3 or window_intensity(combine([(0.1, scale_measure(delta1, 2.0 ** (n + 1), 2))]), 8, 2) < 1e-3
    assert 2 * 2.0**-n >= 8e-3


def test_fatten_examples():
    empty = Realization.empty(5, 2)
    assert len(fatten(empty, 1)) == 0
    one = Realization.from_balls([[1.0, 2.0]], [0.5], 5)
    f = fatten(one, 0.25)
    assert np.array_equal(f.centers, one.centers) and f.radii.tolist() == [0.75]
    real = sample_boolean(delta1, 3, 2, stream(0))
    assert np.allclose(fatten(fatten(real, 0.2), 0.3).radii, fatten(real, 0.5).radii)
    with pytest.raises(ValueError):
        fatten(real, 0)


def test_rescale_examples():
    real = sample_boolean(delta1, 3, 2, stream(0))
    assert rescale(real, 1) is real
    b = rescale(Realization.from_balls([[2.0, 0.0]], [1.0], 4), 0.5)
    assert b.centers.tolist() == [[1.0, 0.0]] and b.radii.tolist() == [0.5] and b.window_radius == 2


def test_rescale_matches_scaled_measure_in_law():
    """rho**-1 Sigma(mu) has the law of Sigma(H^rho mu): compare window counts."""
    rho, a, d = 2.0, 3.0, 2
    counts = [len(rescale(sample_boolean(delta1, a * rho, d, stream(4, k)), 1 / rho)) for k in range(2000)]
    mean = window_intensity(scale_measure(delta1, rho, d), a, d)
    assert abs(np.mean(counts) - mean) < 4 * math.sqrt(mean / 2000)


def test_thin_and_dominated_pair():
    nu, big = RadiusMeasure.atomic([(1, 0.2), (2, 0.05)]), RadiusMeasure.atomic([(1, 0.4), (2, 0.05), (3, 0.1)])
    small, full = sample_dominated_pair(nu, big, 6, 2, stream(8))
    rows_full = {tuple(c) + (r,) for c, r in zip(full.centers.tolist(), full.radii.tolist())}
    assert all(tuple(c) + (r,) in rows_full for c, r in zip(small.centers.tolist(), small.radii.tolist()))
    assert not np.any(small.radii == 3)
    assert np.sum(small.radii == 2) == np.sum(full.radii == 2)
    with pytest.raises(ValueError):
        sample_dominated_pair(big, nu, 6, 2, stream(8))
    assert len(thin(full, 0.0, stream(1))) == 0


def test_csv_roundtrip(tmp_path):
    real = sample_multiscale(MultiscaleSpec(delta1, 2, 2), 0.3, 4, 3, seed=5)
    path = tmp_path / "balls.csv"
    write_csv(real, path, labels=np.arange(len(real)))
    header = path.read_text().splitlines()[0]
    assert header == "scale_index,x0,x1,x2,radius,label"
    back = read_csv(path, 4)
    assert np.array_equal(back.centers, real.centers) and np.array_equal(back.radii, real.radii)
    assert np.array_equal(back.scale_index, real.scale_index)
