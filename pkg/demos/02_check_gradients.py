"""Finite-difference check of every layer's backward pass and of a tiny model.

    python3 demos/02_check_gradients.py [n_seeds]
"""
import sys

from dpgait.diagnostics import OP_CASES, check_op, model_grad_check

seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5

print(f"{'operation':<16}{'worst rel. error':>18}  (tolerance 1e-4, {seeds} seeds)")
for name in OP_CASES:
    reports = [check_op(name, s) for s in range(seeds)]
    worst = max(r.max_rel_error for r in reports)
    print(f"{name:<16}{worst:>18.2e}  {'ok' if all(reports) else 'FAILED'}")

# whole network at 16x16 input with a few channels, every parameter perturbed
report = model_grad_check(seed=0)
print(f"\nreduced model: worst rel. error {report.max_rel_error:.2e} over "
      f"{len(report.per_input)} parameter blocks ({'ok' if report else 'FAILED'})")
