"""A reduced undersampling sweep with summary statistics.

Runs experiment 1 at D=40, T=20 over a handful of ratios and prints the
per-cell mean and standard error. The full-size sweep is ``stss-mmv exp1``.
"""

from stss_mmv import ExperimentConfig, aggregate, run_experiment1

cfg = ExperimentConfig(D=40, T=20, target_active=8, ratios=(0.2, 0.4, 0.6),
                       repetitions_exp1=5, max_iters=100)
rows = list(run_experiment1(cfg))

print(f"{'method':15s} {'ratio':>5s} {'NMSE':>14s} {'F':>14s}")
for s in aggregate(rows):
    print(f"{s.method:15s} {s.sweep_value:5.2f} {s.nmse_mean:7.3f} ± {s.nmse_se:.3f} "
          f"{s.f_mean:7.3f} ± {s.f_se:.3f}")
