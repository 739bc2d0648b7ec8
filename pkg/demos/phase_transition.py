"""Population trajectories of the two-band scenario below and above lambda_c.

    python3 demos/phase_transition.py [events]
"""

import sys

import numpy as np

from sbdnet import ClassProfile, PathLoss, SimConfig, TorusDomain, classify_stability, critical_rate, simulate

dom = TorusDomain(10.0)
pl = PathLoss.power_law(4)
profile = ClassProfile(2, [0.4, 0.4, 0.2], [1.0, 1.0, 2.0])
events = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000

lam_c = critical_rate(profile, dom, pl)
print(f"lambda_c = {lam_c:.6f}")
for rel in (0.7, 0.9, 1.1, 1.3):
    traj = simulate(SimConfig(dom, pl, profile, rel * lam_c, seed=1, max_events=events))
    v = classify_stability(traj)
    n = traj.totals
    tail = n[len(n) // 2:]
    print(f"{rel:.1f} lambda_c: t_end {traj.times[-1]:8.1f}, N_end {n[-1]:5d}, "
          f"mean N over 2nd half {np.mean(tail):7.1f}, verdict {v.verdict}")
