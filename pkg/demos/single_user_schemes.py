"""Compare the single-user schemes on the five-BS deployment at one traffic load.

Each scheme tunes its multiplier on training frames until the delay
constraint holds with equality, then is scored on fresh frames. Time sharing
over the rate envelope needs the fewest BSs; picking one cardinality per
frame costs a little more; a constant cardinality costs the most.

Run: python demos/single_user_schemes.py [load_kbps]
"""

import sys

from dmimo import load_config, run_experiment

load = float(sys.argv[1]) if len(sys.argv) > 1 else 800.0
cfg = load_config("single_user_load").with_axis("load", load).with_(frames=4000)
sc = cfg.scenario()
q = sc.qos[0]
print(f"load {load:.0f} kbps = {q.arrival:.0f} nats/frame, theta = {q.theta:.3e}, "
      f"target E[exp(-theta R)] = {q.target:.4f}")
print()
print(f"{'scheme':12s} {'avg BSs':>8s} {'area m^2':>9s} {'residual':>10s}  tracker")
for scheme in ("optimal-ts", "ibs-ts", "ogbs-pt", "fixed-l"):
    r = run_experiment(sc, scheme, cfg.tracker, resolution=1.0)
    if not r.feasible:
        print(f"{scheme:12s} infeasible")
        continue
    print(f"{scheme:12s} {r.avg_usage:8.3f} {r.avg_area:9.0f} {r.residual[0]:+10.1e}  {r.report}")
