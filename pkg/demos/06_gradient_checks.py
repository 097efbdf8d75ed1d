"""Verify every backward pass against central finite differences.

The model is trained by a small reverse-mode autodiff engine written on
top of numpy. Each scenario perturbs every parameter entry by h=1e-5 and
compares the numeric slope with the analytic gradient; relative errors
above the tolerance are reported entry by entry.
"""

import time

from slidesurv.gradcheck_suite import run_gradcheck_suite

t0 = time.time()
reports = run_gradcheck_suite(seed=0)
elapsed = time.time() - t0

print(f"{'scenario':20s} {'entries':>8s} {'max rel err':>12s}  status")
for name, report in reports:
    status = "PASS" if report.passed else "FAIL"
    print(f"{name:20s} {report.n_checked:8d} {report.max_rel_err:12.3e}  {status}")
    for fail in report.failures[:3]:
        print(f"    {fail.parameter}{list(fail.index)}: "
              f"analytic={fail.analytic:.6e} numeric={fail.numeric:.6e} "
              f"rel={fail.rel_err:.2e}")

print(f"\n{sum(r.passed for _, r in reports)}/{len(reports)} scenarios pass "
      f"in {elapsed:.1f}s")
