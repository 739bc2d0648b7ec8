"""Single-band density at half the critical rate: simulation against the two heuristics.

    python3 demos/heuristics_vs_simulation.py [events]
"""

import sys

from sbdnet import (ClassProfile, PathLoss, SimConfig, TorusDomain, cavity_fixed_point, critical_rate,
                    ergodic_density, poisson_fixed_point, simulate)

dom = TorusDomain(10.0)
pl = PathLoss.power_law(4)
profile = ClassProfile(2, [0.4, 0.4, 0.2], [1.0, 1.0, 2.0])
events = int(sys.argv[1]) if len(sys.argv) > 1 else 200_000

lam = 0.5 * critical_rate(profile, dom, pl)
traj = simulate(SimConfig(dom, pl, profile, lam, seed=1, max_events=events))
est = ergodic_density(traj, 1)
mu_f = poisson_fixed_point(profile, dom, pl, lam).mu[0]
mu_s = cavity_fixed_point(profile, dom, pl, lam).mu_s[0]
print(f"simulation  {est.density:.4f} +- {est.stderr:.4f}")
print(f"Poisson     {mu_f:.4f}")
print(f"cavity      {mu_s:.4f}")
