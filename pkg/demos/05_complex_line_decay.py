"""A slightly bent complex line relaxes back to a totally geodesic CP^1.

CP^1 in CP^2 has no pinching condition of its own, so the check is waived;
the run stops once max |h|^2 drops below the decay threshold.
"""
from cpmcf import flow as F
from cpmcf.ambient import Dimensions
from cpmcf.immersion import build_totally_geodesic, perturb

im = perturb(build_totally_geodesic("CP_half_n", Dimensions(2, 2), 16), 1e-3, modes=1, seed=2)
cfg = F.FlowConfig(waive_pinching=True, max_steps=1000, monitor_every=25, decay_h2=1e-5, diameter=False)
res = F.run(im, cfg)
for rec in res.trajectory[:-1:4] + res.trajectory[-1:]:
    print(f"step {rec.step:4d}  t = {rec.t:.4f}  max |h|^2 = {rec.max_h2:.3g}")
print("classification:", res.classification.value)
