"""Finite radius measures and the operators acting on them.

A :class:`RadiusMeasure` is a finite positive measure on ``(0, inf)``.  It is
stored as an atomic part (sorted radii with merged duplicates) plus a tuple of
parametric components (``uniform`` or ``pareto`` densities, each optionally
shifted by a constant).  Every operation used by the simulations is closed on
this representation:

* ``shift(mu, eta)``  -- every radius grows by ``eta``;
* ``scale(mu, rho, d)`` -- ``A -> rho**d * mu(rho * A)``, i.e. radii divided by
  ``rho`` and masses multiplied by ``rho**d``;
* ``combine`` -- nonnegative linear combinations.

Tails always use the closed interval ``[a, inf)``.  Divergent integrals return
``math.inf`` rather than raising.

Pareto convention: ``pareto(r_min, exponent, mass)`` has density
``mass * (exponent - 1) * r_min**(exponent - 1) * r**(-exponent)`` on
``[r_min, inf)``, so ``exponent > 1`` and the ``p``-th moment is finite iff
``exponent > p + 1``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, special

MASS_OVERFLOW = 1e300


class MeasureError(ValueError):
    """Invalid measure construction or unsupported operation."""


@dataclass(frozen=True)
class Component:
    """A parametric radius density, possibly shifted.

    ``family`` is ``"uniform"`` (params ``(r_lo, r_hi)``) or ``"pareto"``
    (params ``(r_min, exponent)``).  The radius is ``X + shift`` where ``X``
    follows the unshifted family; ``mass`` is the total mass.
    """

    family: str
    params: tuple[float, float]
    mass: float
    shift: float = 0.0

    def __post_init__(self):
        if self.family == "uniform":
            lo, hi = self.params
            if not (0 <= lo < hi < math.inf):
                raise MeasureError(f"uniform needs 0 <= r_lo < r_hi, got {self.params}")
        elif self.family == "pareto":
            r_min, e = self.params
            if not (r_min > 0 and e > 1):
                raise MeasureError(f"pareto needs r_min > 0 and exponent > 1, got {self.params}")
        else:
            raise MeasureError(f"unknown family {self.family!r}")
        if not (self.mass > 0 and math.isfinite(self.mass)):
            raise MeasureError(f"component mass must be positive and finite, got {self.mass}")
        if self.shift < 0:
            raise MeasureError("shift must be nonnegative")

    @property
    def support(self) -> tuple[float, float]:
        if self.family == "uniform":
            lo, hi = self.params
        else:
            lo, hi = self.params[0], math.inf
        return lo + self.shift, hi + self.shift

    def scaled(self, rho: float, d: int) -> "Component":
        p0, p1 = self.params
        if self.family == "uniform":
            params = (p0 / rho, p1 / rho)
        else:
            params = (p0 / rho, p1)
        return Component(self.family, params, self.mass * rho**d, self.shift / rho)

    def shifted(self, eta: float) -> "Component":
        return Component(self.family, self.params, self.mass, self.shift + eta)

    def with_mass(self, mass: float) -> "Component":
        return Component(self.family, self.params, mass, self.shift)

    # integrals over radius R = X + shift, restricted to R >= a

    def tail_mass(self, a: float) -> float:
        b = a - self.shift
        if self.family == "uniform":
            lo, hi = self.params
            b = min(max(b, lo), hi)
            return self.mass * (hi - b) / (hi - lo)
        r_min, e = self.params
        b = max(b, r_min)
        return self.mass * (r_min / b) ** (e - 1)

    def tail_moment(self, a: float, p: float) -> float:
        """``int_{R >= a} R**p`` against this component."""
        if p == 0:
            return self.tail_mass(a)
        t = self.shift
        b = a - t
        if self.family == "uniform":
            lo, hi = self.params
            b = min(max(b, lo), hi)
            if b >= hi:
                return 0.0
            width = hi - lo
            # antiderivative of (x + t)**p
            val = ((hi + t) ** (p + 1) - (b + t) ** (p + 1)) / (p + 1)
            return self.mass * val / width
        r_min, e = self.params
        if e <= p + 1:
            return math.inf
        b = max(b, r_min)
        norm = (e - 1) * r_min ** (e - 1)
        return self.mass * norm * _pareto_shifted_integral(b, t, p, e)

    def log_moment(self, d: int) -> float:
        """``int_{R >= 1} R**d ln R`` against this component."""
        lo, hi = self.support
        if hi <= 1:
            return 0.0
        if self.family == "pareto":
            r_min, e = self.params
            if e <= d + 1:
                return math.inf
            norm = self.mass * (e - 1) * r_min ** (e - 1)
            if self.shift == 0:
                b = max(1.0, r_min)
                q = e - 1 - d
                return norm * b ** (-q) * (math.log(b) / q + 1 / q**2)
            t = self.shift
            x0 = max(1.0 - t, r_min)
            val, _ = integrate.quad(
                lambda x: (x + t) ** d * math.log(x + t) * x ** (-e), x0, math.inf
            )
            return norm * val
        r_lo, r_hi = self.params
        width = r_hi - r_lo
        lo_eff = max(1.0, lo)

        def prim(r):
            return r ** (d + 1) * (math.log(r) / (d + 1) - 1 / (d + 1) ** 2)

        return self.mass * (prim(hi) - prim(lo_eff)) / width

    def to_json(self) -> dict:
        if self.family == "uniform":
            out = {"kind": "uniform", "r_lo": self.params[0], "r_hi": self.params[1], "mass": self.mass}
        else:
            out = {"kind": "pareto", "r_min": self.params[0], "exponent": self.params[1], "mass": self.mass}
        if self.shift:
            out["shift"] = self.shift
        return out


def _pareto_shifted_integral(b: float, t: float, p: float, e: float) -> float:
    """``int_b^inf (x + t)**p x**(-e) dx`` for ``e > p + 1``, ``b > 0``."""
    c = e - p - 1
    base = b ** (-c) / c
    if t == 0:
        return base
    # substitute x = b / u and use Euler's integral for 2F1
    return base * special.hyp2f1(-p, c, c + 1, -t / b)


def _frozen(arr) -> np.ndarray:
    out = np.asarray(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class RadiusMeasure:
    """Finite measure on radii: merged atoms plus parametric components."""

    radii: np.ndarray = field(default_factory=lambda: _frozen([]))
    weights: np.ndarray = field(default_factory=lambda: _frozen([]))
    components: tuple[Component, ...] = ()

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if r.shape != w.shape:
            raise MeasureError("radii and weights must have the same length")
        if np.any(~np.isfinite(r)) or np.any(r <= 0):
            raise MeasureError("atom radii must be positive and finite")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise MeasureError("atom weights must be nonnegative and finite")
        keep = w > 0
        r, w = r[keep], w[keep]
        uniq, inv = np.unique(r, return_inverse=True)
        merged = np.zeros(len(uniq))
        np.add.at(merged, inv, w)
        object.__setattr__(self, "radii", _frozen(uniq))
        object.__setattr__(self, "weights", _frozen(merged))
        object.__setattr__(self, "components", tuple(self.components))

    # constructors

    @classmethod
    def atomic(cls, atoms: Iterable[Sequence[float]]) -> "RadiusMeasure":
        atoms = list(atoms)
        if not atoms:
            return cls()
        r, w = zip(*atoms)
        return cls(np.array(r, float), np.array(w, float))

    @classmethod
    def delta(cls, r: float, mass: float = 1.0) -> "RadiusMeasure":
        return cls(np.array([r], float), np.array([mass], float))

    @classmethod
    def uniform(cls, r_lo: float, r_hi: float, mass: float = 1.0) -> "RadiusMeasure":
        return cls(components=(Component("uniform", (r_lo, r_hi), mass),))

    @classmethod
    def pareto(cls, r_min: float, exponent: float, mass: float = 1.0) -> "RadiusMeasure":
        return cls(components=(Component("pareto", (r_min, exponent), mass),))

    # structure

    @property
    def is_atomic(self) -> bool:
        return not self.components

    @property
    def is_zero(self) -> bool:
        return len(self.radii) == 0 and not self.components

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.radii.tolist(), self.weights.tolist()))

    @property
    def max_radius(self) -> float:
        hi = float(self.radii[-1]) if len(self.radii) else 0.0
        for c in self.components:
            hi = max(hi, c.support[1])
        return hi

    @property
    def min_radius(self) -> float:
        lo = float(self.radii[0]) if len(self.radii) else math.inf
        for c in self.components:
            lo = min(lo, c.support[0])
        return lo

    def __mul__(self, lam: float) -> "RadiusMeasure":
        return combine([(lam, self)])

    __rmul__ = __mul__

    def __add__(self, other: "RadiusMeasure") -> "RadiusMeasure":
        return combine([(1.0, self), (1.0, other)])

    def __eq__(self, other):
        if not isinstance(other, RadiusMeasure):
            return NotImplemented
        return (
            np.array_equal(self.radii, other.radii)
            and np.array_equal(self.weights, other.weights)
            and self.components == other.components
        )

    def __hash__(self):
        return hash((self.radii.tobytes(), self.weights.tobytes(), self.components))

    def __repr__(self):
        parts = []
        if len(self.radii):
            parts.append(f"atoms={self.atoms}")
        parts += [repr(c) for c in self.components]
        return f"RadiusMeasure({', '.join(parts)})"

    # serialization

    def to_json(self) -> dict:
        pieces = []
        if len(self.radii) or not self.components:
            pieces.append({"kind": "atomic", "atoms": [list(a) for a in self.atoms]})
        pieces += [c.to_json() for c in self.components]
        if len(pieces) == 1:
            return pieces[0]
        return {"kind": "mixture", "components": pieces}

    @classmethod
    def from_json(cls, obj) -> "RadiusMeasure":
        if isinstance(obj, str):
            obj = json.loads(obj)
        kind = obj.get("kind")
        shift = float(obj.get("shift", 0.0))
        if kind == "atomic":
            out = cls.atomic(obj["atoms"])
        elif kind == "delta":
            out = cls.delta(float(obj["r"]), float(obj.get("mass", 1.0)))
        elif kind == "uniform":
            out = cls.uniform(float(obj["r_lo"]), float(obj["r_hi"]), float(obj.get("mass", 1.0)))
        elif kind == "pareto":
            out = cls.pareto(float(obj["r_min"]), float(obj["exponent"]), float(obj.get("mass", 1.0)))
        elif kind == "mixture":
            out = combine([(1.0, cls.from_json(c)) for c in obj["components"]], allow_zero=True)
        else:
            raise MeasureError(f"unknown measure kind {kind!r}")
        return shift_measure(out, shift) if shift else out


def _as_measure(mu) -> RadiusMeasure:
    if not isinstance(mu, RadiusMeasure):
        raise TypeError(f"expected RadiusMeasure, got {type(mu).__name__}")
    return mu


def total_mass(mu: RadiusMeasure) -> float:
    return math.fsum(mu.weights.tolist()) + math.fsum(c.mass for c in mu.components)


def tail_mass(mu: RadiusMeasure, a: float) -> float:
    """``mu([a, inf))``."""
    i = np.searchsorted(mu.radii, a, side="left")
    return math.fsum(mu.weights[i:].tolist()) + math.fsum(c.tail_mass(a) for c in mu.components)


def tail_moment(mu: RadiusMeasure, a: float, p: float) -> float:
    """``int_{[a, inf)} r**p mu(dr)``; ``a`` may be 0 for the full moment."""
    i = np.searchsorted(mu.radii, a, side="left")
    r, w = mu.radii[i:], mu.weights[i:]
    atoms = math.fsum((w * r**p).tolist())
    return atoms + math.fsum(c.tail_moment(a, p) for c in mu.components)


def moment(mu: RadiusMeasure, p: float) -> float:
    """``int r**p mu(dr)``, ``math.inf`` when divergent."""
    if p < 0:
        raise MeasureError("moment exponent must be >= 0")
    return tail_moment(mu, 0.0, p)


def log_moment_d(mu: RadiusMeasure, d: int) -> float:
    """``int_{[1, inf)} r**d ln(r) mu(dr)``; finite iff the multiscale model can be subcritical."""
    i = np.searchsorted(mu.radii, 1.0, side="left")
    r, w = mu.radii[i:], mu.weights[i:]
    atoms = math.fsum((w * r**d * np.log(r)).tolist())
    return atoms + math.fsum(c.log_moment(d) for c in mu.components)


def shift_measure(mu: RadiusMeasure, eta: float) -> RadiusMeasure:
    """The radius shift: every radius grows by ``eta``."""
    if not eta > 0:
        raise MeasureError("eta must be positive")
    return RadiusMeasure(mu.radii + eta, mu.weights, tuple(c.shifted(eta) for c in mu.components))


def scale_measure(mu: RadiusMeasure, rho: float, d: int) -> RadiusMeasure:
    """``A -> rho**d * mu(rho A)``: the law of ``Sigma(mu) / rho``.

    Preserves the ``d``-th moment and multiplies the mass by ``rho**d``.
    Factors ``rho <= 1`` are accepted (``rho < 1`` undoes a previous scaling).
    """
    if not rho > 0:
        raise MeasureError("rho must be positive")
    factor = rho**d
    if total_mass(mu) * factor > MASS_OVERFLOW:
        raise OverflowError(f"scaled mass exceeds {MASS_OVERFLOW:g}")
    return RadiusMeasure(mu.radii / rho, mu.weights * factor, tuple(c.scaled(rho, d) for c in mu.components))


def combine(terms: Iterable[tuple[float, RadiusMeasure]], allow_zero: bool = False) -> RadiusMeasure:
    """``sum(lam_i * mu_i)`` over ``(lam_i, mu_i)`` with ``lam_i >= 0``."""
    terms = list(terms)
    if any(lam < 0 for lam, _ in terms):
        raise MeasureError("coefficients must be nonnegative")
    if not allow_zero and not any(lam > 0 for lam, _ in terms):
        raise MeasureError("at least one coefficient must be positive")
    radii, weights, comps = [], [], []
    for lam, mu in terms:
        _as_measure(mu)
        if lam == 0:
            continue
        radii.append(mu.radii)
        weights.append(mu.weights * lam)
        comps += [c.with_mass(c.mass * lam) for c in mu.components]
    if not radii:
        return RadiusMeasure()
    return RadiusMeasure(np.concatenate(radii), np.concatenate(weights), _merge_components(comps))


def _merge_components(comps: list[Component]) -> tuple[Component, ...]:
    merged: dict[tuple, float] = {}
    for c in comps:
        key = (c.family, c.params, c.shift)
        merged[key] = merged.get(key, 0.0) + c.mass
    return tuple(Component(f, p, m, s) for (f, p, s), m in merged.items())


@dataclass(frozen=True)
class MultiscaleSpec:
    """``m_N = sum_{k <= N} scale(mu, rho**k)``; ``levels`` is ``N`` or ``"auto"``."""

    base: RadiusMeasure
    rho: float
    levels: int | str = 0

    def __post_init__(self):
        if not self.rho > 1:
            raise MeasureError("rho must be > 1")
        if self.levels != "auto" and (not isinstance(self.levels, (int, np.integer)) or self.levels < 0):
            raise MeasureError("levels must be a nonnegative integer or 'auto'")

    def layer(self, k: int, d: int) -> RadiusMeasure:
        if k == 0:
            return self.base
        if self.rho ** (k * d) * total_mass(self.base) > MASS_OVERFLOW:
            raise OverflowError(f"layer {k} mass exceeds {MASS_OVERFLOW:g}")
        return scale_measure(self.base, self.rho**k, d)

    def layers(self, d: int, n_levels: int | None = None) -> list[RadiusMeasure]:
        n = self.levels if n_levels is None else n_levels
        if n == "auto":
            raise MeasureError("resolve 'auto' levels first (see sampler.auto_levels)")
        return [self.layer(k, d) for k in range(n + 1)]

    def tagged_atoms(self, d: int) -> np.ndarray:
        """Rows ``(radius, weight, scale_index)`` of the atomic part, unmerged."""
        rows = []
        for k, layer in enumerate(self.layers(d)):
            for r, w in layer.atoms:
                rows.append((r, w, k))
        return np.array(rows, dtype=float).reshape(-1, 3)


def multiscale_truncated(spec: MultiscaleSpec, d: int) -> RadiusMeasure:
    return combine([(1.0, m) for m in spec.layers(d)])


def _levels_reaching(r: float, a: float, rho: float) -> int:
    """Number of ``k >= 0`` with ``r / rho**k >= a``."""
    if r < a:
        return 0
    k = int(math.floor(math.log(r / a) / math.log(rho)))
    while r / rho ** (k + 1) >= a:
        k += 1
    while k > 0 and r / rho**k < a:
        k -= 1
    return k + 1


def multiscale_tail_moment(mu: RadiusMeasure, rho: float, a: float, d: int) -> float:
    """``int_{[a, inf)} r**d m_inf(dr)`` = ``int (floor(log_rho(r/a)) + 1) r**d mu(dr)`` over ``r >= a``."""
    if not (a > 0 and rho > 1):
        raise MeasureError("need a > 0 and rho > 1")
    i = np.searchsorted(mu.radii, a, side="left")
    terms = [
        _levels_reaching(r, a, rho) * w * r**d
        for r, w in zip(mu.radii[i:].tolist(), mu.weights[i:].tolist())
    ]
    total = math.fsum(terms)
    for c in mu.components:
        total += _component_multiscale_tail(c, rho, a, d)
    return total


def _component_multiscale_tail(c: Component, rho: float, a: float, d: int) -> float:
    # sum_k tail_moment(c, a rho**k, d): the d-th moment is scale invariant
    lo, hi = c.support
    if c.family == "pareto":
        r_min, e = c.params
        if e <= d + 1:
            return math.inf
        if c.shift == 0:
            # terms with a rho**k <= r_min are the full moment; the rest are geometric
            full = c.tail_moment(0.0, d)
            k0 = 0
            while a * rho**k0 <= r_min:
                k0 += 1
            first = c.tail_moment(a * rho**k0, d)
            ratio = rho ** (d + 1 - e)
            return k0 * full + first / (1 - ratio)
    total, k = 0.0, 0
    while a * rho**k < hi:
        term = c.tail_moment(a * rho**k, d)
        total += term
        if term <= 1e-17 * total:
            break
        k += 1
        if k > 10_000:
            break
    return total


def multiscale_tail_moment_enumerated(mu: RadiusMeasure, rho: float, a: float, d: int) -> float:
    """Brute-force ``sum_k tail_moment(scale(mu, rho**k), a, d)`` for bounded atomic ``mu``."""
    if not mu.is_atomic:
        raise MeasureError("enumeration needs an atomic measure")
    total, k = [], 0
    layer = mu
    while len(layer.radii) and layer.radii[-1] >= a:
        total.append(tail_moment(layer, a, d))
        k += 1
        layer = scale_measure(mu, rho**k, d)
    return math.fsum(total)


@dataclass(frozen=True)
class SandwichResult:
    lower: float
    value: float
    upper: float
    holds: bool


def moment_sandwich_check(mu: RadiusMeasure, rho: float, s: float, d: int) -> SandwichResult:
    """Compare ``int_{[1,inf)} r**(d+s)`` of ``mu`` and of ``m_inf``.

    The multiscale value must lie between the base value and the base value
    times ``1 / (1 - rho**-s)``.
    """
    if not (s > 0 and rho > 1):
        raise MeasureError("need s > 0 and rho > 1")
    if not mu.is_atomic:
        raise MeasureError("moment_sandwich_check supports bounded atomic measures only")
    i = np.searchsorted(mu.radii, 1.0, side="left")
    r, w = mu.radii[i:].tolist(), mu.weights[i:].tolist()
    lower = math.fsum(wi * ri ** (d + s) for ri, wi in zip(r, w))
    value_terms = []
    for ri, wi in zip(r, w):
        base = wi * ri ** (d + s)
        for k in range(_levels_reaching(ri, 1.0, rho)):
            value_terms.append(base * rho ** (-k * s))
    value = math.fsum(value_terms)
    upper = lower / (1 - rho ** (-s))
    tol = 1e-12 * max(upper, 1e-300)
    holds = lower - tol <= value <= upper + tol
    return SandwichResult(lower, value, upper, holds)


def sub_autosimilarity_diagnostic(
    mu: RadiusMeasure, a_grid: Sequence[float], r_grid: Sequence[float], d: int
) -> dict[float, float]:
    """``sup_r a**d mu([a r, inf)) / mu([r, inf))`` over ``r >= 1/2`` in ``r_grid`` (0/0 = 0).

    A finite grid only gives a lower bound for the supremum.
    """
    out = {}
    rs = [r for r in r_grid if r >= 0.5]
    for a in a_grid:
        best = 0.0
        for r in rs:
            num = a**d * tail_mass(mu, a * r)
            den = tail_mass(mu, r)
            if den == 0:
                ratio = 0.0 if num == 0 else math.inf
            else:
                ratio = num / den
            best = max(best, ratio)
        out[float(a)] = best
    return out
