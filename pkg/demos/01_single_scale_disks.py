"""Unit disks in the plane: crossing probabilities, a threshold bracket and
the covered volume at criticality.

Run with ``python3 demos/01_single_scale_disks.py``.  The defaults take about
a minute; raise ``N`` and extend ``LADDER`` for sharper numbers.
"""
import numpy as np

from boolperc.estimators import (
    PHI_C_DISKS_2D,
    bracket_threshold_hat,
    critical_covered_volume,
    estimate_crossing,
    lambda_for_covered_volume,
)
from boolperc.measures import RadiusMeasure, combine

disk = RadiusMeasure.delta(1.0)
N = 200
LADDER = (4.0, 8.0, 16.0)

# %% The reference constant.
# The covered volume 1 - exp(-pi * lam) at the critical intensity is a
# numerically known constant for unit disks.  Invert it to get lambda_c.
lam_c = lambda_for_covered_volume(PHI_C_DISKS_2D, disk, 2)
print(f"phi_c = {PHI_C_DISKS_2D}, lambda_c = {lam_c:.6f}")

# %% Annulus crossings on either side of lambda_c.
# p(a) is the chance that the occupied set joins the circles of radius a/2
# and a.  Below lambda_c it drops with a; above it tends to one.
print("\nlambda   a=4     a=8     a=16")
for lam in (0.2, 0.3, lam_c, 0.45):
    mu = combine([(lam, disk)])
    row = [estimate_crossing(mu, a, 2, N, seed=1) for a in LADDER]
    print(f"{lam:.3f}  " + "  ".join(f"{e.p_hat:.3f}" for e in row))

# %% A threshold bracket.
# Every replicate is sampled once at a large intensity with uniform marks,
# so each replicate has its own crossing threshold.  The bracket then bisects
# over intensities, calling each one subcritical, supercritical or neither
# from the ladder of crossing frequencies.
br = bracket_threshold_hat(disk, 2, ladder=LADDER, n=N, seed=0)
print(f"\nbracket [{br.lambda_lo:.4f}, {br.lambda_hi:.4f}] after {len(br.evidence)} verdicts")
for e in sorted(br.evidence, key=lambda e: e.lam):
    print(f"  lam={e.lam:.4f}  p={np.round(e.p_hat, 3)}  {e.verdict}")

# %% Convert to covered volume.
# Small ladders sit well below the asymptotic value: the annulus crossing
# probability at criticality is close to one in the plane, so the
# supercritical rule fires early.  The README discusses this in detail.
phi_mid = critical_covered_volume(br.midpoint, disk, 2)
print(f"\nphi at the bracket midpoint: {phi_mid:.4f} (asymptotic {PHI_C_DISKS_2D})")
