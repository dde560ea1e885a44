"""Geometry extraction on immersions whose curvature is known.

Distance spheres are compared with the H(r) table, totally geodesic
subspaces must give h = 0, and the Clifford torus is minimal with |P|^2 = q.
"""
import math

import numpy as np

from cpmcf import oracles as O
from cpmcf.ambient import Dimensions
from cpmcf.immersion import build_clifford_torus, build_geodesic_sphere, build_totally_geodesic, extract_geometry

tab = O.sphere_radius_table(2)
print("distance spheres in CP^2 (16^3 chart):")
for r in (0.3, math.pi / 4, 1.0, 1.2):
    g = extract_geometry(build_geodesic_sphere(2, r, 16), gradients=False)
    H = np.sqrt(g.inv.normH2)
    print(f"  r = {r:.4f}: table H = {float(tab(r)):+.6f}, extracted |H| in [{H.min():.6f}, {H.max():.6f}]")
print("  H(r) changes sign at pi/3: spheres beyond that radius expand under the flow")

for kind in ("CP_half_n", "RP_n"):
    g = extract_geometry(build_totally_geodesic(kind, Dimensions(2, 2), 32), gradients=False)
    print(f"{kind}: max |h|^2 = {g.inv.normh2.max():.3g}, |P|^2 = {g.inv.normP2.mean():.3g}")

for N in (16, 32, 64):
    g = extract_geometry(build_clifford_torus(2, N), gradients=False)
    print(f"Clifford torus {N}^2: max |H| = {np.sqrt(g.inv.normH2).max():.3g}, |P|^2 = {g.inv.normP2.mean():.12f}")
