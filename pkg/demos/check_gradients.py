"""
Checking every gradient against finite differences
==================================================

Each differentiable op, the full training objective and the non-local block
are compared with central differences on random inputs. A deliberately broken
backward pass shows what a failure looks like.
"""
from panodepth.gradcheck import ALL_CASES, injected_fault, run_case

for name in ALL_CASES:
    instances = 3 if name == "total_loss" else 10
    reports = run_case(name, instances=instances)
    worst = max(r.max_error for r in reports)
    print(f"{name:16s} worst relative error {worst:.1e}  {'ok' if all(r.passed for r in reports) else 'FAIL'}")

with injected_fault("sin"):
    report = run_case("sin", instances=1)[0]
print(f"sin with a 1.5x backward bug: error {report.max_error:.2f}, passed={report.passed}")
