"""A small simulation study in the regression setting.

With correlation 0.7 at both levels, the slope estimates of every method that
ignores the link between values and uncertainties are biased.  Twenty
replicates is far too few for publication but shows the pattern in a few
minutes.  The command line runs the same study from a scenario file::

    hiercombine simulate scenarios.json --fast --out results/
"""

from hiercombine import FitConfig, run_study
from hiercombine.simulation import scenario_catalogue

cat = scenario_catalogue(n_reps=20)
study = run_study([cat["reg-r12"]], ["lr", "wlr", "twlr", "ubm", "bbm"], FitConfig.fast(),
                  progress=lambda k, n: print(f"\rreplicate {k}/{n}", end="", flush=True))
print()

print(f"{'method':<8}{'bias':>8}{'mse':>8}{'coverage':>10}   (slope, truth 3)")
for row in study.rows:
    if row.parameter == "beta[2]":
        print(f"{row.method:<8}{row.bias:8.2f}{row.mse:8.2f}{row.coverage:10.2f}")
