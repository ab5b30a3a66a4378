"""Auditing the hand-written gradients and counting parameters.

Every backward pass is checked against central finite differences in
double precision; the battery covers each primitive and the full model
loss (including the similarity-modulation path). Parameter counts come
from an exact scan of the trainable arrays.
"""

from tdl import build_model, gradcheck_battery, param_count_table
from tdl.model import desk_config, full_scale_config

report = gradcheck_battery("tiny", seed=0, tolerance=1e-4)
print(f"{len(report.entries)} gradient checks, "
      f"max relative error {report.max_rel_err:.2e} "
      f"(tolerance {report.tolerance:.0e}) -> "
      f"{'pass' if report.passed else 'FAIL'}")
worst = report.worst()
print(f"worst entry: {worst.name} at {worst.max_rel_err:.2e}\n")

for name, config in (("full-size", full_scale_config()), ("desk-scale", desk_config())):
    rows, total = param_count_table(build_model(config))
    print(f"{name} configuration:")
    for layer, count in rows:
        print(f"  {layer:<10} {count:>10d}  ({count / 1000.0:.1f}k)")
    print(f"  {'total':<10} {total:>10d}  ({total / 1000.0:.1f}k)\n")
