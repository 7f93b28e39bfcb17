"""Per-sample checks of event inclusions and exact measure identities.

Each ``verify_*`` function draws coupled samples and counts the samples on
which an inclusion between events fails.  A correct implementation always
reports zero violations; the counts of non-vacuous samples are reported too,
so a check that never exercises its interesting branch is visible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.spatial import cKDTree

from .connectivity import build, crossing_event, meets_sphere, one_arm_event
from .estimators import _map
from .measures import (
    MultiscaleSpec,
    RadiusMeasure,
    combine,
    moment_sandwich_check,
    multiscale_tail_moment,
    multiscale_tail_moment_enumerated,
)
from .sampler import fatten, rescale, sample_boolean, sample_dominated_pair, sample_multiscale, stream

# substream tags of the checks
KEY_ETA, KEY_CARRE, SCALING, LEVELS, ONE_ARM_INCL, DOMINATION = 10, 11, 12, 13, 14, 15


@dataclass
class CheckReport:
    check: str
    samples: int
    violations: int
    params: dict
    seed: int
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "check": self.check,
            "samples": self.samples,
            "violations": self.violations,
            "params": self.params,
            "seed": self.seed,
            **({"details": self.details} if self.details else {}),
        }


# -- coverings ---------------------------------------------------------------------


@dataclass(frozen=True)
class CoveringFamily:
    centers: np.ndarray
    radius: float
    region: str

    @property
    def cardinality(self) -> int:
        return len(self.centers)

    def covers(self, points: np.ndarray) -> np.ndarray:
        dist, _ = cKDTree(self.centers).query(points)
        return dist < self.radius


def _cube_lattice(h: float, extent: float, d: int) -> np.ndarray:
    m = int(math.floor(extent / h))
    axis = h * np.arange(-m, m + 1)
    return np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)


def build_ball_covering(a: float, eta: float, d: int) -> CoveringFamily:
    """Lattice ``(eta / (4 sqrt d)) Z^d`` inside ``B(a + eta/4)``; balls of radius ``eta/4`` cover ``B(a)``."""
    if not a >= 4 * eta > 0:
        raise ValueError("need a >= 4 eta > 0")
    pts = _cube_lattice(eta / (4 * math.sqrt(d)), a + eta / 4, d)
    pts = pts[np.linalg.norm(pts, axis=1) < a + eta / 4]
    return CoveringFamily(pts, eta / 4, f"B(0,{a:g})")


def build_sphere_covering(s: float, d: int) -> CoveringFamily:
    """Points of ``S(s)`` whose open ``1/2``-balls cover ``S(s)``.

    In the plane the points are equally spaced on the circle, close enough
    that every arc point is within ``2 s sin(step / 4) < 1/2`` of one.  In
    higher dimension the lattice points of ``h Z^d`` (``h = 0.45 / sqrt d``)
    lying within ``h sqrt(d) / 2`` of the sphere are projected radially onto
    it: every sphere point has a lattice point at distance ``<= h sqrt(d) / 2``
    whose projection is then within ``h sqrt d < 1/2``.
    """
    if not s > 0:
        raise ValueError("s must be positive")
    if d == 2:
        step_max = 4 * math.asin(min(1.0, 1 / (4 * s)))
        m = max(3, int(math.ceil(2 * math.pi / step_max)) + 1)
        t = 2 * math.pi * np.arange(m) / m
        pts = s * np.column_stack([np.cos(t), np.sin(t)])
    else:
        h = 0.45 / math.sqrt(d)
        pts = _cube_lattice(h, s + h * math.sqrt(d), d)
        norm = np.linalg.norm(pts, axis=1)
        keep = np.abs(norm - s) <= h * math.sqrt(d) / 2
        pts = pts[keep] * (s / norm[keep])[:, None]
        pts = np.unique(pts, axis=0)
    return CoveringFamily(pts, 0.5, f"S(0,{s:g})")


def uniform_in_ball(n: int, radius: float, d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1)[:, None]
    return g * (radius * rng.random(n) ** (1 / d))[:, None]


def uniform_on_sphere(n: int, radius: float, d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((n, d))
    return radius * g / np.linalg.norm(g, axis=1)[:, None]


# -- local annulus events at many centers ---------------------------------------------


def local_crossings(real, labels: np.ndarray, centers: np.ndarray, inner: float, outer: float, mask=None) -> np.ndarray:
    """For each point ``x``, does a component join ``S(x, inner)`` and ``S(x, outer)``?

    Only balls in ``mask`` count as sphere contacts; ``labels`` are the
    component labels of the structure the paths live in.
    """
    out = np.zeros(len(centers), dtype=bool)
    idx = np.arange(len(real)) if mask is None else np.flatnonzero(mask)
    if not len(idx) or not len(centers):
        return out
    tree = cKDTree(centers)
    c, r = real.centers[idx], real.radii[idx]
    # ball j can meet S(x, outer) only if |c_j - x| < r_j + outer
    near = tree.query_ball_point(c, r + outer)
    rows = np.concatenate([np.full(len(v), k) for k, v in enumerate(near)]) if len(near) else np.zeros(0, int)
    cols = np.concatenate([np.asarray(v, int) for v in near]) if len(near) else np.zeros(0, int)
    if not len(rows):
        return out
    dist = np.linalg.norm(c[rows] - centers[cols], axis=1)
    hit_in = np.abs(dist - inner) < r[rows]
    hit_out = np.abs(dist - outer) < r[rows]
    lab = labels[idx[rows]]
    a = set(zip(cols[hit_in].tolist(), lab[hit_in].tolist()))
    for x, l in zip(cols[hit_out].tolist(), lab[hit_out].tolist()):
        if (x, l) in a:
            out[x] = True
    return out


# -- coupled checks ---------------------------------------------------------------------


def _key_eta_one(nu1, nu2, eta, a, d, seed, covering, rep):
    w = a + eta
    s1 = sample_boolean(nu1, w, d, stream(seed, KEY_ETA, 1, rep))
    s2 = sample_boolean(nu2, w, d, stream(seed, KEY_ETA, 2, rep))
    union = s1.union(s2)
    if not crossing_event(build(union), a / 2, a):
        return 0, 0
    if crossing_event(build(fatten(s1, eta)), a / 2, a):
        return 1, 0
    cs2 = build(s2)
    local = local_crossings(s2, cs2.labels, covering.centers, eta / 4, eta / 2)
    return 2, int(not local.any())


def verify_key_eta(nu1, nu2, eta: float, a: float, d: int, n: int, seed: int, workers: int = 1) -> CheckReport:
    """Crossing in ``Sigma(nu1 + nu2)`` implies crossing in ``Sigma(T_eta nu1)`` or
    a local crossing ``S(x_i, eta/4) <-> S(x_i, eta/2)`` in ``Sigma(nu2)``.

    Both models are sampled on ``B(a + eta)`` so that the fattened model and
    every local event around the covering points are decided exactly.
    """
    if not a >= 4 * eta:
        raise ValueError("need a >= 4 eta")
    covering = build_ball_covering(a, eta, d)
    res = _map(partial(_key_eta_one, nu1, nu2, eta, a, d, seed, covering), range(n), workers)
    branch = np.array([r[0] for r in res])
    return CheckReport(
        "key_eta",
        n,
        int(sum(r[1] for r in res)),
        {"nu1": nu1.to_json(), "nu2": nu2.to_json(), "eta": eta, "a": a, "d": d},
        seed,
        {
            "union_crossings": int(np.sum(branch > 0)),
            "local_branch": int(np.sum(branch == 2)),
            "covering_cardinality": covering.cardinality,
        },
    )


def _key_carre_one(nu, a, d, seed, k_pts, l_pts, rep):
    real = sample_boolean(nu, 11 * a, d, stream(seed, KEY_CARRE, 0, rep))
    norms = np.linalg.norm(real.centers, axis=1)
    big = real.radii >= a
    if np.any(big & (norms < 10 * a + real.radii)):
        return "A", 0, 0
    cs = build(real)
    if not crossing_event(cs, 5 * a, 10 * a):
        return "none", 0, 0
    small = real.radii <= a
    cs_small = build(real, mask=small)
    sub = real.subset(small)
    lk = local_crossings(sub, cs_small.labels, k_pts, a / 2, a)
    ll = local_crossings(sub, cs_small.labels, l_pts, a / 2, a)
    violation = int(not (lk.any() and ll.any()))
    # the two local events read disjoint sets of balls: balls meeting B(ak, a)
    # have centers in B(ak, 2a), and |ak - al| >= 5a
    structural = 0
    for pts, hits in ((k_pts, lk), (l_pts, ll)):
        for x in pts[hits]:
            touch = np.linalg.norm(sub.centers - x, axis=1) < a + sub.radii
            if np.any(np.linalg.norm(sub.centers[touch] - x, axis=1) >= 2 * a):
                structural += 1
    return "crossing", violation, structural


def verify_key_carre(nu, a: float, d: int, n: int, seed: int, workers: int = 1) -> CheckReport:
    """Off the event ``A`` (a ball of radius ``>= a`` meets ``B(10a)``), a crossing
    ``S(5a) <-> S(10a)`` forces local crossings around some ``ak`` and ``al``
    (``k``, ``l`` in sphere coverings of ``S(5)`` and ``S(10)``) using only balls
    of radius ``<= a``.  Samples live on ``B(11a)`` so the local events around
    ``S(10a)`` are decided exactly.
    """
    k_cov, l_cov = build_sphere_covering(5, d), build_sphere_covering(10, d)
    k_pts, l_pts = a * k_cov.centers, a * l_cov.centers
    sep = float(np.min(np.linalg.norm(k_pts[:, None, :] - l_pts[None, :, :], axis=2)))
    res = _map(partial(_key_carre_one, nu, a, d, seed, k_pts, l_pts), range(n), workers)
    kinds = [r[0] for r in res]
    violations = sum(r[1] + r[2] for r in res) + int(sep < 5 * a * (1 - 1e-12))
    return CheckReport(
        "key_carre",
        n,
        int(violations),
        {"nu": nu.to_json(), "a": a, "d": d},
        seed,
        {
            "event_A": kinds.count("A"),
            "crossings": kinds.count("crossing"),
            "K": k_cov.cardinality,
            "L": l_cov.cardinality,
            "min_separation_over_a": sep / a,
        },
    )


def _scaling_one(mu, rho, a, d, seed, rep):
    real = sample_boolean(mu, rho * a, d, stream(seed, SCALING, 0, rep))
    big = crossing_event(build(real), rho * a / 2, rho * a)
    small = crossing_event(build(rescale(real, 1 / rho)), a / 2, a)
    return int(big), int(big != small)


def verify_scaling_coupling(mu, rho: float, a: float, d: int, n: int, seed: int, workers: int = 1) -> CheckReport:
    """Crossing at scale ``rho a`` of ``Sigma(mu)`` equals crossing at scale ``a``
    of its ``1/rho`` rescaling (a sample of ``Sigma(H^rho mu)``)."""
    res = _map(partial(_scaling_one, mu, rho, a, d, seed), range(n), workers)
    return CheckReport(
        "scaling_coupling",
        n,
        sum(r[1] for r in res),
        {"mu": mu.to_json(), "rho": rho, "a": a, "d": d},
        seed,
        {"crossings": sum(r[0] for r in res)},
    )


def _levels_one(spec, lam, a, d, seed, n_max, rep):
    full = sample_multiscale(spec, lam, a, d, seed, replicate=rep, tag=LEVELS)
    ind = [crossing_event(build(full.levels_upto(k)), a / 2, a) for k in range(n_max + 1)]
    return ind


def verify_monotone_in_levels(mu, rho: float, lam: float, a: float, d: int, n_max: int, n: int, seed: int, workers: int = 1) -> CheckReport:
    """Under the prefix coupling the crossing indicator is nondecreasing in ``N``."""
    spec = MultiscaleSpec(mu, rho, int(n_max))
    res = np.array(_map(partial(_levels_one, spec, lam, a, d, seed, int(n_max)), range(n), workers), dtype=int)
    drops = np.any(np.diff(res, axis=1) < 0, axis=1)
    return CheckReport(
        "monotone_in_levels",
        n,
        int(drops.sum()),
        {"mu": mu.to_json(), "rho": rho, "lambda": lam, "a": a, "d": d, "levels": n_max},
        seed,
        {"crossings_by_level": res.sum(axis=0).tolist()},
    )


def _one_arm_incl_one(mu, r, d, seed, rep):
    cs = build(sample_boolean(mu, r, d, stream(seed, ONE_ARM_INCL, 0, rep)))
    arm = one_arm_event(cs, r)
    return int(arm), int(arm and not crossing_event(cs, r / 2, r))


def verify_one_arm_inclusion(mu, r: float, d: int, n: int, seed: int, workers: int = 1) -> CheckReport:
    """``0 <-> S(r)`` implies ``S(r/2) <-> S(r)`` on every sample."""
    res = _map(partial(_one_arm_incl_one, mu, r, d, seed), range(n), workers)
    return CheckReport(
        "one_arm_inclusion",
        n,
        sum(x[1] for x in res),
        {"mu": mu.to_json(), "r": r, "d": d},
        seed,
        {"one_arm_events": sum(x[0] for x in res)},
    )


def _domination_one(nu, nu_big, a, d, seed, rep):
    small, big = sample_dominated_pair(nu, nu_big, a, d, stream(seed, DOMINATION, 0, rep))
    s = crossing_event(build(small), a / 2, a)
    return int(s), int(s and not crossing_event(build(big), a / 2, a))


def verify_domination(nu, nu_big, a: float, d: int, n: int, seed: int, workers: int = 1) -> CheckReport:
    """Thinning coupling ``Sigma(nu) <= Sigma(nu_big)``: crossings are inherited."""
    res = _map(partial(_domination_one, nu, nu_big, a, d, seed), range(n), workers)
    return CheckReport(
        "domination",
        n,
        sum(x[1] for x in res),
        {"nu": nu.to_json(), "nu_big": nu_big.to_json(), "a": a, "d": d},
        seed,
        {"small_crossings": sum(x[0] for x in res)},
    )


def verify_measure_identities(mus, rhos, ss, a_grid, d: int, rel_tol: float = 1e-12) -> CheckReport:
    """Moment sandwich and closed-form multiscale tails over a parameter grid."""
    if isinstance(mus, RadiusMeasure):
        mus = [mus]
    count = violations = 0
    worst = 0.0
    for mu in mus:
        for rho in rhos:
            for s in ss:
                count += 1
                violations += int(not moment_sandwich_check(mu, rho, s, d).holds)
            for a in a_grid:
                count += 1
                closed = multiscale_tail_moment(mu, rho, a, d)
                brute = multiscale_tail_moment_enumerated(mu, rho, a, d)
                err = abs(closed - brute) / brute if brute else abs(closed)
                worst = max(worst, err)
                violations += int(err > rel_tol)
    return CheckReport(
        "measure_identities",
        count,
        violations,
        {"measures": len(mus), "rho": list(rhos), "s": list(ss), "a_grid": list(a_grid), "d": d},
        0,
        {"max_relative_error": worst},
    )


def random_atomic_measures(count: int, seed: int, max_atoms: int = 6) -> list[RadiusMeasure]:
    rng = stream(seed, 99)
    out = []
    for _ in range(count):
        k = int(rng.integers(1, max_atoms + 1))
        radii = np.exp(rng.uniform(math.log(0.05), math.log(50.0), k))
        weights = np.exp(rng.uniform(math.log(0.01), math.log(10.0), k))
        out.append(RadiusMeasure.atomic(zip(radii, weights)))
    return out


# -- the suite ---------------------------------------------------------------------------

SUITE = ("key_eta", "key_carre", "scaling_coupling", "monotone_in_levels", "one_arm_inclusion", "domination", "measure_identities")


def run_suite(checks="all", n: int = 1000, seed: int = 0, workers: int = 1) -> list[CheckReport]:
    """Run the checks at planar near-critical parameters.

    ``lam_c`` of unit disks is about 0.359; the parameters below straddle it.
    """
    names = SUITE if checks == "all" else tuple(checks)
    unknown = set(names) - set(SUITE)
    if unknown:
        raise ValueError(f"unknown checks: {sorted(unknown)}")
    d = 2
    disk = RadiusMeasure.delta(1.0)
    reports = []
    for name in names:
        if name == "key_eta":
            # sparse unit disks plus a dense dust of radius 0.05: the fattened
            # disks alone rarely cross, so the local dust events get exercised
            nu1, nu2 = RadiusMeasure.delta(1.0, 0.05), RadiusMeasure.delta(0.05, 125.0)
            reports.append(verify_key_eta(nu1, nu2, 0.5, 4.0, d, n, seed, workers))
        elif name == "key_carre":
            nu = RadiusMeasure.atomic([(1.0, 0.35), (3.0, 3e-4)])
            reports.append(verify_key_carre(nu, 2.0, d, n, seed, workers))
        elif name == "scaling_coupling":
            reports.append(verify_scaling_coupling(combine([(0.36, disk)]), 2.0, 8.0, d, n, seed, workers))
        elif name == "monotone_in_levels":
            reports.append(verify_monotone_in_levels(disk, 2.0, 0.12, 6.0, d, 4, n, seed, workers))
        elif name == "one_arm_inclusion":
            reports.append(verify_one_arm_inclusion(combine([(0.36, disk)]), 8.0, d, n, seed, workers))
        elif name == "domination":
            nu = RadiusMeasure.atomic([(1.0, 0.3), (0.5, 0.1)])
            big = RadiusMeasure.atomic([(1.0, 0.36), (0.5, 0.2)])
            reports.append(verify_domination(nu, big, 8.0, d, n, seed, workers))
        elif name == "measure_identities":
            mus = random_atomic_measures(60, seed)
            reports.append(verify_measure_identities(mus, (2.0, 5.0, 10.0), (0.5, 1.0, 2.0), (0.3, 1.0, 4.0), d))
    return reports
