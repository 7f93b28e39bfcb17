"""Monte Carlo estimators built on the sampler and the connectivity layer.

Every replicate draws from its own substream ``(seed, tag, key, replicate)``
so estimates are reproducible and independent of the worker count.

Threshold brackets use common random numbers: each replicate is sampled once
at an intensity ``lam_max`` with an independent uniform mark per ball, and the
model at ``lam <= lam_max`` keeps the balls with mark ``<= lam / lam_max``
(an exact thinning).  One minimum-spanning-tree pass per replicate gives the
smallest ``lam`` at which the replicate crosses, after which ``p_hat(a, lam)``
is available for every ``lam`` at no further sampling cost and is monotone in
``lam``.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import stats

from .connectivity import build, crossing_event, crossing_threshold, one_arm_event, origin_component_diameter
from .measures import MultiscaleSpec, RadiusMeasure, combine, moment, scale_measure, shift_measure
from .sampler import sample_boolean, sample_multiscale, stream, unit_ball_volume

# substream tags
CROSSING, ONE_ARM, THRESHOLD, COVERAGE, MULTISCALE, DIAMETER, FATTENING = 1, 2, 3, 4, 5, 6, 7

# Reference covered volume at criticality for equal disks in the plane.
PHI_C_DISKS_2D = 0.6763475

DEFAULT_LADDER = (1, 2, 4, 8)


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    z = stats.norm.ppf(0.5 + level / 2)
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class CrossingEstimate:
    n: int
    k: int
    p_hat: float
    lo: float
    hi: float
    seed_manifest: dict
    wall_time: float
    diagnostic: float | None = None

    @classmethod
    def from_counts(cls, k: int, n: int, manifest: dict, wall_time: float = 0.0, diagnostic=None):
        lo, hi = wilson_interval(k, n)
        p = k / n if n else 0.0
        return cls(n, int(k), p, min(lo, p), max(hi, p), manifest, wall_time, diagnostic)


def _map(fn, items, workers: int = 1) -> list:
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def float_key(x: float) -> int:
    """Exact integer key for a float (its IEEE bit pattern)."""
    return int(np.float64(x).view(np.int64))


def _sample(model, a: float, d: int, seed: int, tag: int, rep: int):
    if isinstance(model, MultiscaleSpec):
        return sample_multiscale(model, 1.0, a, d, seed, replicate=rep, tag=tag)
    return sample_boolean(model, a, d, stream(seed, tag, float_key(a), rep))


def covered_volume_fraction(mu: RadiusMeasure, d: int) -> float:
    """``1 - exp(-v_d * int r**d mu(dr))``; an infinite moment gives 1."""
    m = moment(mu, d)
    if math.isinf(m):
        return 1.0
    return -math.expm1(-unit_ball_volume(d) * m)


def critical_covered_volume(lam: float, mu: RadiusMeasure, d: int) -> float:
    return covered_volume_fraction(combine([(lam, mu)], allow_zero=True), d)


def lambda_for_covered_volume(phi: float, mu: RadiusMeasure, d: int) -> float:
    """Inverse of ``lam -> critical_covered_volume(lam, mu, d)``."""
    return -math.log1p(-phi) / (unit_ball_volume(d) * moment(mu, d))


def limit_curve(alpha, phi_c: float = PHI_C_DISKS_2D):
    """Covered volume at criticality of the two-scale mixture as ``rho -> infinity``.

    ``1 - exp(-v_d lam_c min(1/alpha, 1/(1 - alpha)))`` rewritten through
    ``v_d lam_c = -log(1 - phi_c)``.
    """
    alpha = np.asarray(alpha, dtype=float)
    with np.errstate(divide="ignore"):
        m = np.minimum(1 / alpha, 1 / (1 - alpha))
    out = 1 - (1 - phi_c) ** m
    return float(out) if out.ndim == 0 else out


# -- crossing and one-arm probabilities ------------------------------------------


def _crossing_one(model, a, d, seed, rep):
    cs = build(_sample(model, a, d, seed, CROSSING, rep))
    return crossing_event(cs, a / 2, a)


def crossing_indicators(mu, a: float, d: int, n: int, seed: int, workers: int = 1) -> np.ndarray:
    """Per-replicate indicators of ``S(a/2) <-> S(a)``."""
    return np.array(_map(partial(_crossing_one, mu, a, d, seed), range(n), workers), dtype=bool)


def estimate_crossing(mu, a: float, d: int, n: int, seed: int, workers: int = 1) -> CrossingEstimate:
    """Estimate ``p(a, mu)``; ``mu`` may be a measure or a ``MultiscaleSpec``."""
    t0 = time.perf_counter()
    hits = crossing_indicators(mu, a, d, n, seed, workers)
    manifest = {"seed": seed, "tag": CROSSING, "a": a, "replicates": n}
    return CrossingEstimate.from_counts(int(hits.sum()), n, manifest, time.perf_counter() - t0)


def _one_arm_one(mu, r, d, seed, rep):
    cs = build(_sample(mu, r, d, seed, ONE_ARM, rep))
    return one_arm_event(cs, r), crossing_event(cs, r / 2, r)


def one_arm_indicators(mu, r: float, d: int, n: int, seed: int, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Coupled indicators ``(0 <-> S(r), S(r/2) <-> S(r))`` on the same replicates."""
    out = _map(partial(_one_arm_one, mu, r, d, seed), range(n), workers)
    arr = np.array(out, dtype=bool).reshape(n, 2)
    return arr[:, 0], arr[:, 1]


def estimate_one_arm(mu, r: float, d: int, n: int, seed: int, workers: int = 1) -> CrossingEstimate:
    """Estimate ``P(0 <-> S(r))``; ``diagnostic`` holds ``r**d * p_hat``."""
    t0 = time.perf_counter()
    arm, _ = one_arm_indicators(mu, r, d, n, seed, workers)
    k = int(arm.sum())
    manifest = {"seed": seed, "tag": ONE_ARM, "r": r, "replicates": n}
    return CrossingEstimate.from_counts(k, n, manifest, time.perf_counter() - t0, diagnostic=r**d * k / n)


# -- per-replicate thresholds and the bracket ------------------------------------


def _threshold_one(mu, a, d, lam_max, seed, tag, rep):
    rng = stream(seed, tag, float_key(a), rep)
    real = sample_boolean(combine([(lam_max, mu)]), a, d, rng)
    marks = 1.0 - rng.random(len(real))
    return lam_max * crossing_threshold(real, marks, a / 2, a)


def crossing_thresholds(
    mu: RadiusMeasure, a: float, d: int, lam_max: float, n: int, seed: int, start: int = 0, workers: int = 1, tag: int = THRESHOLD
) -> np.ndarray:
    """Smallest ``lam`` at which each replicate crosses (``inf`` above ``lam_max``).

    ``mean(thresholds <= lam)`` is then an unbiased estimate of ``p(a, lam mu)``
    for every ``lam <= lam_max``.
    """
    fn = partial(_threshold_one, mu, a, d, lam_max, seed, tag)
    return np.array(_map(fn, range(start, start + n), workers), dtype=float)


@dataclass
class LadderEvidence:
    lam: float
    n: int
    p_hat: list[float]
    ci: list[tuple[float, float]]
    verdict: str


def ladder_verdict(counts, n: int, p_low: float, p_high: float) -> tuple[str, list, list]:
    """Verdict from crossing counts along an increasing scale ladder.

    supercritical: ``p_hat(a_max) >= p_high``.
    subcritical: ``p_hat(a_max) <= p_low`` and ``p_hat`` decreases along the
    ladder (it ends below where it starts, or at zero, and no step rises above
    the previous step's Wilson interval).
    Anything else is inconclusive.
    """
    p = [k / n for k in counts]
    ci = [wilson_interval(k, n) for k in counts]
    if p[-1] >= p_high:
        return "supercritical", p, ci
    no_rise = all(p[i + 1] <= ci[i][1] for i in range(len(p) - 1))
    decreasing = no_rise and (p[-1] < p[0] or p[-1] == 0)
    if decreasing and p[-1] <= p_low:
        return "subcritical", p, ci
    return "inconclusive", p, ci


@dataclass
class ThresholdBracket:
    lambda_lo: float
    lambda_hi: float
    ladder: tuple[float, ...]
    p_low: float
    p_high: float
    n: int
    seed: int
    inconclusive: bool
    evidence: list[LadderEvidence] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lambda_lo + self.lambda_hi)

    def contains(self, lam: float) -> bool:
        return self.lambda_lo <= lam <= self.lambda_hi


class _ThresholdPool:
    """Frozen per-replicate thresholds for each ladder rung, grown on demand."""

    def __init__(self, mu, d, ladder, lam_max, seed, workers):
        self.mu, self.d, self.ladder, self.lam_max = mu, d, ladder, lam_max
        self.seed, self.workers = seed, workers
        self.samples = {a: np.zeros(0) for a in ladder}

    def ensure(self, n: int) -> None:
        for a in self.ladder:
            have = len(self.samples[a])
            if have < n:
                more = crossing_thresholds(self.mu, a, self.d, self.lam_max, n - have, self.seed, start=have, workers=self.workers)
                self.samples[a] = np.concatenate([self.samples[a], more])

    def counts(self, lam: float, n: int) -> list[int]:
        return [int(np.sum(self.samples[a][:n] <= lam)) for a in self.ladder]


def bracket_threshold_hat(
    mu: RadiusMeasure,
    d: int,
    ladder=None,
    p_low: float = 0.05,
    p_high: float = 0.6,
    n: int = 2000,
    seed: int = 0,
    rel_width: float = 0.02,
    n_max: int | None = None,
    lam_start: float | None = None,
    workers: int = 1,
) -> ThresholdBracket:
    """Bisection bracket ``[lambda_lo, lambda_hi]`` for the annulus-crossing threshold.

    ``lambda_lo`` is the largest intensity that received a subcritical verdict
    and ``lambda_hi`` the smallest that received a supercritical one.  An
    inconclusive verdict first doubles the replicate count (up to ``n_max``,
    default ``2 * n``); if it stays inconclusive the bracket is flagged and the
    two ends are located separately, so the band between them is exactly the
    set of intensities the ladder could not classify.

    ``lam_start`` is the first supercritical candidate; by default the
    intensity with covered volume 0.8, doubled until supercritical.
    """
    t0 = time.perf_counter()
    ladder = tuple(float(a) for a in (ladder or [8 * s for s in DEFAULT_LADDER]))
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("ladder must be increasing")
    n_max = 2 * n if n_max is None else max(n, n_max)
    hi = lam_start if lam_start is not None else lambda_for_covered_volume(0.8, mu, d)
    evidence: list[LadderEvidence] = []
    state = {"n": n, "flag": False}

    def judge(pool: _ThresholdPool, lam: float) -> str:
        while True:
            pool.ensure(state["n"])
            verdict, p, ci = ladder_verdict(pool.counts(lam, state["n"]), state["n"], p_low, p_high)
            if verdict != "inconclusive" or 2 * state["n"] > n_max:
                break
            state["n"] *= 2
        evidence.append(LadderEvidence(lam, state["n"], p, ci, verdict))
        if verdict == "inconclusive":
            state["flag"] = True
        return verdict

    for _ in range(8):
        pool = _ThresholdPool(mu, d, ladder, hi, seed, workers)
        if judge(pool, hi) == "supercritical":
            break
        hi *= 2
    else:
        return ThresholdBracket(hi, math.inf, ladder, p_low, p_high, state["n"], seed, True, evidence, time.perf_counter() - t0)

    lo = 0.0  # the empty model never crosses
    evidence.append(LadderEvidence(0.0, 0, [0.0] * len(ladder), [(0.0, 0.0)] * len(ladder), "subcritical"))
    # lower end: boundary between subcritical and everything else
    a, b = lo, hi
    first_not_sub = []
    while b - a > rel_width * b:
        m = 0.5 * (a + b)
        v = judge(pool, m)
        if v == "subcritical":
            a = m
        else:
            b = m
            if v == "supercritical":
                hi = min(hi, m)
    lo = a
    # upper end: boundary between supercritical and everything else
    a, b = lo, hi
    while b - a > rel_width * b:
        m = 0.5 * (a + b)
        v = judge(pool, m)
        if v == "supercritical":
            b = m
        else:
            a = m
    hi = b
    inconclusive = state["flag"] and any(e.verdict == "inconclusive" and lo < e.lam < hi for e in evidence)
    return ThresholdBracket(lo, hi, ladder, p_low, p_high, state["n"], seed, inconclusive, evidence, time.perf_counter() - t0)


def one_arm_verdict(mu, lam: float, ladder, d: int, n: int, seed: int, p_low: float = 0.05, p_high: float = 0.6, workers: int = 1):
    """Paired verdicts at intensity ``lam`` from shared replicates.

    Returns ``(one_arm_verdict, crossing_verdict)``.  The one-arm verdict is
    subcritical when ``r**d * p_hat`` decreases along the ladder and ends at or
    below ``p_low``, supercritical when the one-arm probability at the top
    rung is at least ``p_high``.  Because every one-arm replicate is also a
    crossing replicate, a supercritical one-arm verdict forces a supercritical
    crossing verdict.
    """
    model = combine([(lam, mu)], allow_zero=True)
    arm_counts, cross_counts = [], []
    for r in ladder:
        arm, cross = one_arm_indicators(model, r, d, n, seed, workers)
        arm_counts.append(int(arm.sum()))
        cross_counts.append(int(cross.sum()))
    scaled = [r**d * k / n for r, k in zip(ladder, arm_counts)]
    if arm_counts[-1] / n >= p_high:
        arm_v = "supercritical"
    elif all(y <= x for x, y in zip(scaled, scaled[1:])) and scaled[-1] <= p_low:
        arm_v = "subcritical"
    else:
        arm_v = "inconclusive"
    cross_v, _, _ = ladder_verdict(cross_counts, n, p_low, p_high)
    return arm_v, cross_v


# -- covered volume --------------------------------------------------------------


def empirical_coverage(real, n_probe: int, rng: np.random.Generator, radius: float | None = None) -> tuple[float, float]:
    """Fraction of uniform probe points of ``B(0, radius)`` covered by ``real``.

    ``radius`` defaults to half the window.  Returns ``(fraction, std_error)``.
    """
    from scipy.spatial import cKDTree

    d = real.d
    radius = real.window_radius / 2 if radius is None else radius
    g = rng.standard_normal((n_probe, d))
    g /= np.linalg.norm(g, axis=1)[:, None]
    pts = g * (radius * rng.random(n_probe) ** (1 / d))[:, None]
    covered = np.zeros(n_probe, dtype=bool)
    if len(real):
        tree = cKDTree(pts)
        for k, (c, r) in enumerate(zip(real.centers, real.radii)):
            idx = tree.query_ball_point(c, r)
            if idx:
                idx = np.asarray(idx)
                inside = np.linalg.norm(pts[idx] - c, axis=1) < r
                covered[idx[inside]] = True
    f = covered.mean()
    return float(f), float(math.sqrt(f * (1 - f) / n_probe))


def _coverage_one(mu, a, d, n_probe, seed, rep):
    real = _sample(mu, a, d, seed, COVERAGE, rep)
    return empirical_coverage(real, n_probe, stream(seed, COVERAGE, 0, rep, 1))[0]


def estimate_covered_volume(mu, a: float, d: int, n: int, n_probe: int, seed: int, workers: int = 1) -> tuple[float, float]:
    """Mean covered fraction of ``B(a/2)`` over ``n`` replicates and its standard error.

    Probe points inside one realization are strongly correlated, so the error
    is taken from the spread between replicates.
    """
    fr = np.array(_map(partial(_coverage_one, mu, a, d, n_probe, seed), range(n), workers))
    return float(fr.mean()), float(fr.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf


# -- two-scale experiment ----------------------------------------------------------


def two_scale_measure(nu1: RadiusMeasure, nu2: RadiusMeasure, alpha: float, rho: float, d: int) -> RadiusMeasure:
    """``alpha * nu1 + (1 - alpha) * H^rho nu2``."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    return combine([(alpha, nu1), (1 - alpha, scale_measure(nu2, rho, d))])


def two_scale_curve(
    nu1: RadiusMeasure,
    nu2: RadiusMeasure,
    alpha_grid,
    rho: float,
    d: int,
    ladder=(4, 8, 16),
    n: int = 400,
    seed: int = 0,
    p_low: float = 0.05,
    p_high: float = 0.6,
    phi_c: float | None = None,
    workers: int = 1,
    **bracket_kw,
) -> list[dict]:
    """Bracket the threshold of each two-scale mixture and convert to covered volume.

    The covered volume of ``lam * mixture`` is ``1 - exp(-v_d lam int r**d)``
    at the bracket ends and midpoint.  When ``phi_c`` is given (the covered
    volume at criticality of ``nu1 = nu2``), the analytic limit curve is added
    as ``phi_limit``.
    """
    rows = []
    for alpha in alpha_grid:
        mix = two_scale_measure(nu1, nu2, float(alpha), rho, d)
        br = bracket_threshold_hat(mix, d, ladder, p_low, p_high, n, seed, workers=workers, **bracket_kw)
        rows.append(
            {
                "alpha": float(alpha),
                "rho": rho,
                "lambda_lo": br.lambda_lo,
                "lambda_hi": br.lambda_hi,
                "phi_hat": critical_covered_volume(br.midpoint, mix, d),
                "ci_lo": critical_covered_volume(br.lambda_lo, mix, d),
                "ci_hi": critical_covered_volume(br.lambda_hi, mix, d) if math.isfinite(br.lambda_hi) else 1.0,
                "n": br.n,
                "seed": seed,
                "inconclusive": br.inconclusive,
                "phi_limit": limit_curve(float(alpha), phi_c) if phi_c is not None else None,
            }
        )
    return rows


# -- multiscale probes ---------------------------------------------------------------


def _scan_one(spec, lam, a_grid, d, seed, n_levels, rep):
    out = np.zeros((n_levels + 1, len(a_grid)), dtype=bool)
    for j, a in enumerate(a_grid):
        full = sample_multiscale(spec, lam, a, d, seed, replicate=rep, tag=MULTISCALE)
        for k in range(n_levels + 1):
            out[k, j] = crossing_event(build(full.levels_upto(k)), a / 2, a)
    return out


def multiscale_crossing_scan(
    mu: RadiusMeasure, lam: float, rho: float, n_levels: int, a_grid, d: int, n: int, seed: int, workers: int = 1
) -> dict:
    """Crossing estimates of ``lam * m_N^rho`` for every ``N <= n_levels`` and ``a``.

    All truncation levels share each replicate (the ``N``-level sample is a
    prefix of the ``N + 1``-level one), so the per-replicate indicators are
    nondecreasing in ``N``.  Returns ``{"estimates": {(N, a): CrossingEstimate},
    "indicators": array (n, N + 1, len(a_grid))}``.
    """
    spec = MultiscaleSpec(mu, rho, int(n_levels))
    a_grid = [float(a) for a in a_grid]
    ind = np.array(_map(partial(_scan_one, spec, lam, a_grid, d, seed, int(n_levels)), range(n), workers))
    est = {}
    for k in range(n_levels + 1):
        for j, a in enumerate(a_grid):
            manifest = {"seed": seed, "tag": MULTISCALE, "levels": k, "a": a, "replicates": n}
            est[(k, a)] = CrossingEstimate.from_counts(int(ind[:, k, j].sum()), n, manifest)
    return {"estimates": est, "indicators": ind}


def _diameter_one(model, window, d, seed, rep):
    real = _sample(model, window, d, seed, DIAMETER, rep)
    return origin_component_diameter(build(real))


def diameter_moment_probe(
    mu: RadiusMeasure,
    lam: float,
    rho: float,
    n_levels: int,
    s: float,
    window_grid,
    d: int,
    n: int,
    seed: int,
    tol: float = 0.1,
    workers: int = 1,
) -> dict:
    """Truncated moments ``E min(D, W)**s`` of the origin component's diameter.

    ``D`` is measured in the model driven by ``lam * m_N^rho`` (``rho`` and
    ``n_levels = 0`` give the single-scale model).  The trend is
    ``"stabilizes"`` when the last successive-window ratio is within
    ``1 +- tol``, ``"grows"`` when the moment increases strictly across all
    windows, and ``"unclear"`` otherwise.
    """
    model = MultiscaleSpec(combine([(lam, mu)], allow_zero=True), rho, int(n_levels))
    rows = []
    for w in window_grid:
        res = _map(partial(_diameter_one, model, float(w), d, seed), range(n), workers)
        diam = np.array([r[0] for r in res])
        cens = np.array([r[1] for r in res])
        rows.append({"window": float(w), "moment": float(np.mean(np.minimum(diam, w) ** s)), "censored": float(cens.mean())})
    m = [r["moment"] for r in rows]
    ratios = [b / a if a > 0 else (math.inf if b > 0 else 1.0) for a, b in zip(m, m[1:])]
    if ratios and abs(ratios[-1] - 1) <= tol:
        trend = "stabilizes"
    elif ratios and all(b > a for a, b in zip(m, m[1:])):
        trend = "grows"
    else:
        trend = "unclear"
    return {"rows": rows, "ratios": ratios, "trend": trend}


def eta_fattening_probe(
    mu: RadiusMeasure, lam: float, d: int, ladder, eta_grid, n: int, seed: int, workers: int = 1
) -> dict:
    """Crossing estimates of ``T_eta(lam mu)`` along the ladder for each ``eta``.

    Returns ``{eta: (p_hats, decreasing)}`` where ``decreasing`` means each
    rung's estimate is at most the previous one's Wilson upper bound and the
    last rung sits below the first.
    """
    out = {}
    for eta in eta_grid:
        model = shift_measure(combine([(lam, mu)]), eta)
        ests = [estimate_crossing(model, a, d, n, seed + FATTENING, workers) for a in ladder]
        p = [e.p_hat for e in ests]
        dec = all(y.p_hat <= x.hi for x, y in zip(ests, ests[1:])) and p[-1] < p[0]
        out[float(eta)] = (p, dec)
    return out
