"""Pool one simulated collection of sources five different ways.

The sources below were generated so that sources with large standard errors
also tend to report large values (correlation 0.7 at both levels).  Inverse
variance weighting then leans on the small, low-valued sources and drags the
pooled mean down.  The bivariate model learns the correlation and corrects
for it.

Run with ``python demos/combine_one_dataset.py``.
"""

import numpy as np

from hiercombine import (FitConfig, ScenarioSpec, fit_bbm, fit_ubm, generate_dataset, raw_mean,
                         trimmed_weighted_mean, weighted_mean)
from hiercombine.bbm import bbm_shrinkage, params_from_draws

spec = ScenarioSpec("demo", n=50, rho1=0.7, rho2=0.7)
sim = generate_dataset(spec, rep_index=0)
ds = sim.dataset
print(f"{ds.n} sources, true population mean {spec.mu_theta}")
print(f"corr(y, log s) in the data: {np.corrcoef(ds.y, np.log(ds.s))[0, 1]:.2f}\n")

# Classical estimators come back as Estimate records with a 95% interval.
rows = [raw_mean(ds), weighted_mean(ds)[0], trimmed_weighted_mean(ds, seed=1)[0]]

# The hierarchical fits return posterior draws.  The fast profile keeps this
# demo under a minute; drop it for the full three-chain run.
cfg = FitConfig.fast(seed=1)
ubm = fit_ubm(ds, cfg)
bbm = fit_bbm(ds, cfg)

print(f"{'method':<10}{'estimate':>10}{'95% interval':>22}")
for est in rows:
    print(f"{est.method:<10}{est.point:>10.2f}   ({est.ci_low:7.2f}, {est.ci_high:7.2f})")
for name, draws, par in (("ubm", ubm, "mu"), ("bbm", bbm, "mu_theta")):
    lo, hi = draws.interval(par)
    print(f"{name:<10}{draws.mean(par):>10.2f}   ({lo:7.2f}, {hi:7.2f})")

print(f"\nposterior mean of rho1 {bbm.mean('rho1'):.2f}, rho2 {bbm.mean('rho2'):.2f}")
print(f"max R-hat: ubm {ubm.max_rhat:.3f}, bbm {bbm.max_rhat:.3f}")

# Standardised weights: how much each source contributes to the pooled mean.
lam_w = weighted_mean(ds)[1].standardized
lam_b = bbm_shrinkage(ds, params_from_draws(bbm, ds.n)).standardized
print(f"\nweight range, inverse variance: {lam_w.min():.4f} to {lam_w.max():.4f}")
print(f"weight range, bivariate model:  {lam_b.min():.4f} to {lam_b.max():.4f}"
      f"  (equal weights would be {1 / ds.n:.4f})")
