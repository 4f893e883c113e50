"""Does the effective-capacity constraint really bound the delay?

Solve ordered-gain selection at the configured load, freeze its multiplier,
and drive a fluid queue with its service on frames it never trained on.
The queue tail should decay at least as fast as the QoS exponent and the
delay-violation probability should stay near the target.

Run: python demos/queue_tail.py [frames]
"""

import sys

from dmimo import load_config
from dmimo.harness import validate_queue

frames = int(sys.argv[1]) if len(sys.argv) > 1 else 200_000
cfg = load_config("single_user_load")
sc = cfg.scenario()
q = sc.qos[0]
sol, res = validate_queue(sc, "ogbs-pt", frames, cfg.tracker)
print(f"multiplier         {sol.lam:.4g}")
print(f"mean service       {res.mean_service:.0f} nats/frame (arrivals {q.arrival:.0f})")
print(f"tail slope / theta {res.tail_slope / q.theta:.3f}")
print(f"Pr(D > {q.delay_bound:.0f} frames)  {res.violation_prob:.2e}  (target {q.xi:.0e})")
