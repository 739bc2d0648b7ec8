"""Lattice bounds on lambda_c as the tessellation is refined."""

from sbdnet import ClassProfile, PathLoss, TorusDomain, critical_rate, lattice_thresholds
from sbdnet.lattice import Tessellation

dom = TorusDomain(10.0)
pl = PathLoss.power_law(4)
profile = ClassProfile(2, [0.4, 0.4, 0.2], [1.0, 1.0, 2.0])
lam_c = critical_rate(profile, dom, pl)

print(f"{'eps':>6} {'cells':>6} {'lower bound':>12} {'lambda_c':>10} {'upper bound':>12}")
for eps in (2.0, 1.0, 0.5, 0.25):
    tess = Tessellation(dom, eps)
    lo, hi = lattice_thresholds(tess, pl, profile)
    print(f"{eps:6.2f} {tess.n_cells:6d} {lo:12.5f} {lam_c:10.5f} {hi:12.5f}")
