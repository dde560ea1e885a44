"""The pinching functions phi_eps and psi, and the grid check of their properties.

phi_eps bounds |h|^2 from above in terms of |H|^2 for n >= 3; psi plays the
same role in high codimension. Both must sit between the lines x/n and
x/(n-1) and bend the right way. This script prints a few closed-form values
and runs the full property grid.
"""
import math

from cpmcf import pinching as P

print("phi_0 for n = 5 at its minimiser:", P.phi_minimizer(P.PhiParams(5))[1], "vs 4 sqrt 2 - 2 =",
      4 * math.sqrt(2) - 2)
for n in P.PSI_N:
    p = P.PsiParams(n)
    print(f"psi n={n:2d}: psi(0) = {P.psi(0.0, p)}, psi'(0) = {P.psi_derivs(0.0, p).d1:.15f} (1/n = {1 / n:.15f})")

rep = P.verify_appendix()
print(f"\n{len(rep.records)} property records on a {P.GridSpec().n_linear + P.GridSpec().n_log}-point grid")
for r in rep.failures():
    print(f"  fails: {r.inequality} n={r.n} eps={r.eps:g} (min slack {r.min_slack:.3g} at x={r.argmin_x:.3g})")
print("largest eps that passes every eps-dependent item, per n:", rep.largest_passing_eps)
print("verdict:", "PASS" if P.appendix_verdict(rep) else "FAIL")
