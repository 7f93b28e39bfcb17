"""Exact-in-law samples of the Boolean model restricted to a window.

For a window radius ``a`` the balls of ``Sigma(mu)`` meeting the open ball
``B(0, a)`` form a Poisson process with mean count
``M(a) = v_d * int (a + r)**d mu(dr)``.  We sample radius first, from the
tilted law ``(a + r)**d mu(dr) / M(a)``, then a center uniform in
``B(0, a + r)``.  Nothing is lost: every ball of the full model that meets the
window is produced with the right law, so any event that only depends on those
balls (annulus crossings inside the window, one-arm events) is sampled exactly.

Random streams are Philox generators keyed by ``(seed, *key)`` through
``numpy.random.SeedSequence.spawn_key``, so a (scale, replicate) substream
never depends on how many other substreams were drawn or in which process.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple

import numpy as np
from scipy.special import comb, gammaln

from .measures import Component, MultiscaleSpec, RadiusMeasure, combine, tail_moment

MAX_AUTO_LEVELS = 60


class DivergentIntensityError(ValueError):
    """The expected number of balls meeting the window is infinite."""


def unit_ball_volume(d: int) -> float:
    return math.exp(0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1))


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the substream ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def window_intensity(mu: RadiusMeasure, a: float, d: int, min_radius: float = 0.0) -> float:
    """Expected number of balls with radius ``>= min_radius`` meeting ``B(0, a)``."""
    if not a > 0:
        raise ValueError("window radius must be positive")
    terms = [comb(d, j, exact=True) * a ** (d - j) * tail_moment(mu, min_radius, j) for j in range(d + 1)]
    if any(math.isinf(t) for t in terms):
        return math.inf
    return unit_ball_volume(d) * math.fsum(terms)


class BallSample(NamedTuple):
    center: np.ndarray
    radius: float
    scale_index: int
    component_id: int


@dataclass(frozen=True, eq=False)
class Realization:
    """Balls of one sample, stored column-wise.

    ``window_radius`` is the radius of the ball inside which the sample is
    exact: every ball of the model meeting ``B(0, window_radius)`` is present.
    """

    window_radius: float
    d: int
    centers: np.ndarray
    radii: np.ndarray
    scale_index: np.ndarray
    component_id: np.ndarray
    seed_manifest: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.radii)

    @property
    def balls(self) -> list[BallSample]:
        return list(self)

    def __iter__(self) -> Iterator[BallSample]:
        for c, r, k, t in zip(self.centers, self.radii, self.scale_index, self.component_id):
            yield BallSample(c, float(r), int(k), int(t))

    @classmethod
    def empty(cls, window_radius: float, d: int, seed_manifest: dict | None = None) -> "Realization":
        return cls(
            window_radius,
            d,
            np.zeros((0, d)),
            np.zeros(0),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            dict(seed_manifest or {}),
        )

    @classmethod
    def from_balls(cls, centers, radii, window_radius: float, scale_index=None, component_id=None) -> "Realization":
        centers = np.asarray(centers, dtype=float)
        radii = np.asarray(radii, dtype=float).ravel()
        if centers.ndim == 1:
            centers = centers.reshape(len(radii), -1)
        n, d = centers.shape
        si = np.zeros(n, np.int64) if scale_index is None else np.asarray(scale_index, np.int64)
        ci = np.zeros(n, np.int64) if component_id is None else np.asarray(component_id, np.int64)
        return cls(float(window_radius), d, centers, radii, si, ci)

    def subset(self, mask) -> "Realization":
        return replace(
            self,
            centers=self.centers[mask],
            radii=self.radii[mask],
            scale_index=self.scale_index[mask],
            component_id=self.component_id[mask],
        )

    def union(self, other: "Realization") -> "Realization":
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        manifest = dict(self.seed_manifest)
        if other.seed_manifest:
            manifest.setdefault("merged", []).append(other.seed_manifest)
        return Realization(
            min(self.window_radius, other.window_radius),
            self.d,
            np.concatenate([self.centers, other.centers]),
            np.concatenate([self.radii, other.radii]),
            np.concatenate([self.scale_index, other.scale_index]),
            np.concatenate([self.component_id, other.component_id]),
            manifest,
        )

    def levels_upto(self, n: int) -> "Realization":
        """Balls with ``scale_index <= n`` (the ``n``-truncation of a multiscale sample)."""
        return self.subset(self.scale_index <= n)


def _tilted_atom_counts(mu: RadiusMeasure, a: float, d: int) -> np.ndarray:
    return unit_ball_volume(d) * mu.weights * (a + mu.radii) ** d


def _sample_component(c: Component, a: float, d: int, rng: np.random.Generator) -> np.ndarray:
    # (a + X + t)**d expands into terms x**j; each term tilts the family's law.
    a_eff = a + c.shift
    base = Component(c.family, c.params, c.mass)
    out = []
    vd = unit_ball_volume(d)
    for j in range(d + 1):
        mean = vd * comb(d, j, exact=True) * a_eff ** (d - j) * base.tail_moment(0.0, j)
        if math.isinf(mean):
            raise DivergentIntensityError(f"component {c} has infinite window intensity")
        k = rng.poisson(mean)
        u = 1.0 - rng.random(k)
        if c.family == "pareto":
            r_min, e = c.params
            x = r_min * u ** (-1.0 / (e - j - 1))
        else:
            lo, hi = c.params
            x = (lo ** (j + 1) + u * (hi ** (j + 1) - lo ** (j + 1))) ** (1.0 / (j + 1))
        out.append(x + c.shift)
    return np.concatenate(out) if out else np.zeros(0)


def _uniform_in_balls(radii: np.ndarray, d: int, rng: np.random.Generator) -> np.ndarray:
    n = len(radii)
    g = rng.standard_normal((n, d))
    norms = np.linalg.norm(g, axis=1)
    norms[norms == 0] = 1.0
    rad = radii * rng.random(n) ** (1.0 / d)
    return g * (rad / norms)[:, None]


def sample_boolean(
    mu: RadiusMeasure,
    a: float,
    d: int,
    rng: np.random.Generator,
    scale_index: int = 0,
    component_id: int = 0,
    seed_manifest: dict | None = None,
) -> Realization:
    """Balls of ``Sigma(mu)`` meeting the open ball ``B(0, a)``."""
    if d < 2:
        raise ValueError("dimension must be >= 2")
    if mu.is_zero:
        return Realization.empty(a, d, seed_manifest)
    if math.isinf(window_intensity(mu, a, d)):
        raise DivergentIntensityError("int r**d mu(dr) is infinite")
    counts = rng.poisson(_tilted_atom_counts(mu, a, d))
    radii = [np.repeat(mu.radii, counts)]
    for c in mu.components:
        radii.append(_sample_component(c, a, d, rng))
    radii = np.concatenate(radii)
    centers = _uniform_in_balls(a + radii, d, rng)
    n = len(radii)
    return Realization(
        float(a),
        d,
        centers,
        radii,
        np.full(n, scale_index, dtype=np.int64),
        np.full(n, component_id, dtype=np.int64),
        dict(seed_manifest or {}),
    )


def auto_levels(spec: MultiscaleSpec, lam: float, a: float, d: int, delta_min: float | None = None) -> int:
    """Smallest ``N`` such that layer ``N + 1`` is expected to hold fewer than
    ``1e-3`` balls of diameter ``>= delta_min`` (default ``1e-3 * a``) in the window."""
    delta = 1e-3 * a if delta_min is None else delta_min
    for k in range(1, MAX_AUTO_LEVELS + 1):
        layer = combine([(lam, spec.layer(k, d))])
        if window_intensity(layer, a, d, min_radius=delta / 2) < 1e-3:
            return k - 1
    raise ValueError(f"auto truncation did not terminate within {MAX_AUTO_LEVELS} levels")


def resolve_levels(spec: MultiscaleSpec, lam: float, a: float, d: int) -> int:
    if spec.levels == "auto":
        return auto_levels(spec, lam, a, d)
    return int(spec.levels)


def sample_multiscale(
    spec: MultiscaleSpec,
    lam: float,
    a: float,
    d: int,
    seed: int,
    replicate: int = 0,
    tag: int = 0,
) -> Realization:
    """Union over ``k <= N`` of independent layers driven by ``lam * scale(mu, rho**k)``.

    Layer ``k`` uses substream ``(seed, tag, k, replicate)``; the ``N``-level
    sample is therefore a prefix of the ``N + 1``-level sample under one seed.
    """
    n_levels = resolve_levels(spec, lam, a, d)
    parts = []
    for k in range(n_levels + 1):
        rng = stream(seed, tag, k, replicate)
        layer = combine([(lam, spec.layer(k, d))], allow_zero=True)
        parts.append(sample_boolean(layer, a, d, rng, scale_index=k))
    manifest = {"seed": int(seed), "tag": int(tag), "replicate": int(replicate), "levels": n_levels}
    return Realization(
        float(a),
        d,
        np.concatenate([p.centers for p in parts]),
        np.concatenate([p.radii for p in parts]),
        np.concatenate([p.scale_index for p in parts]),
        np.concatenate([p.component_id for p in parts]),
        manifest,
    )


def fatten(real: Realization, eta: float) -> Realization:
    """Add ``eta`` to every radius.

    The result is exact for the fattened model only inside
    ``B(0, window - eta)``: balls that reach the original window only after
    fattening were never sampled.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    return replace(real, radii=real.radii + eta, window_radius=max(real.window_radius - eta, 0.0))


def rescale(real: Realization, factor: float) -> Realization:
    """Multiply centers, radii and window by ``factor``."""
    if not factor > 0:
        raise ValueError("factor must be positive")
    if factor == 1:
        return real
    return replace(
        real,
        centers=real.centers * factor,
        radii=real.radii * factor,
        window_radius=real.window_radius * factor,
    )


def thin(real: Realization, keep_prob, rng: np.random.Generator) -> Realization:
    """Independent thinning; ``keep_prob`` is a scalar or per-ball array."""
    keep = rng.random(len(real)) < np.broadcast_to(keep_prob, (len(real),))
    return real.subset(keep)


def sample_dominated_pair(
    nu: RadiusMeasure, nu_big: RadiusMeasure, a: float, d: int, rng: np.random.Generator
) -> tuple[Realization, Realization]:
    """Couple ``Sigma(nu) <= Sigma(nu_big)`` by thinning, for atomic ``nu <= nu_big`` atomwise."""
    if not (nu.is_atomic and nu_big.is_atomic):
        raise ValueError("domination coupling is implemented for atomic measures only")
    big_w = dict(zip(nu_big.radii.tolist(), nu_big.weights.tolist()))
    for r, w in nu.atoms:
        if w > big_w.get(r, 0.0) * (1 + 1e-12):
            raise ValueError(f"nu is not dominated by nu_big at radius {r}")
    big = sample_boolean(nu_big, a, d, rng)
    small_w = dict(nu.atoms)
    ratio = np.array([small_w.get(r, 0.0) / big_w[r] for r in big.radii.tolist()])
    return thin(big, np.minimum(ratio, 1.0), rng), big


def write_csv(real: Realization, path, labels=None) -> None:
    """One ball per row: ``scale_index, x0, ..., x{d-1}, radius`` (+ ``label``)."""
    header = ["scale_index"] + [f"x{i}" for i in range(real.d)] + ["radius"]
    if labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(real)):
            row = [int(real.scale_index[i])] + [repr(float(x)) for x in real.centers[i]] + [repr(float(real.radii[i]))]
            if labels is not None:
                row.append(int(labels[i]))
            w.writerow(row)


def read_csv(path, window_radius: float) -> Realization:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = sum(1 for h in header if h.startswith("x"))
    arr = np.array(body, dtype=float).reshape(len(body), len(header))
    return Realization.from_balls(arr[:, 1 : 1 + d], arr[:, 1 + d], window_radius, scale_index=arr[:, 0])
