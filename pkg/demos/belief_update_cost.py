"""Timing of one position-belief update: IS vs. AIS.

The importance sampler evaluates every proposal draw against every message
component, so its cost grows roughly with L^2.  The auxiliary sampler draws
a component label per factor first and stays near-linear in L.

Run with ``python3 demos/belief_update_cost.py``.
"""

from rsscoloc.harness import bench_belief_update

res = bench_belief_update((125, 250, 500, 1000, 2000), repeats=3)
print("     L     IS [ms]    AIS [ms]")
for L, ti, ta in zip(res.L, res.is_times, res.ais_times):
    print(f"{L:6d}  {ti * 1e3:10.2f}  {ta * 1e3:10.2f}")
print(f"log-log slope: IS {res.slope_is:.2f}, AIS {res.slope_ais:.2f}")
