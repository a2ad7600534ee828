"""Parameter totals and Armour deltas for the DeiT family, side by side."""

from armour.analysis import BUILTIN_ARCHS, compare_param_counts

print(f"{'arch':<8} {'regular':>12} {'armour':>12} {'delta':>9}")
for name, spec in BUILTIN_ARCHS.items():
    r = compare_param_counts(spec, "armour")
    print(f"{name:<8} {r.baseline_total / 1e6:>11.1f}M {r.total / 1e6:>11.1f}M {r.delta_pct:>8.1f}%")
