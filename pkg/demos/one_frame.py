"""Look inside a single fading frame of the five-BS, one-user deployment.

For every cardinality L we compare the BS subsets chosen by incremental
selection, by ordered aggregate gain and by brute-force enumeration, then
show the concave rate envelope that time sharing works on and the usage it
picks for a few multiplier values.

Run: python demos/one_frame.py
"""

import numpy as np

from dmimo import PathLossModel, PowerPolicy, QoSSpec, draw_fading_state, scenario_deployment
from dmimo.qos import load_to_nats
from dmimo.single import (
    exhaustive_select,
    incremental_select,
    ordered_gain_select,
    rate_envelope,
    state_gains,
    best_usage,
    usage_to_alpha,
)

BT = 1000.0  # bandwidth x frame length

dep = scenario_deployment("one_user_5bs")
model = PathLossModel.calibrated()
power = PowerPolicy(p_ref=4.0, kappa=2.4)
state = draw_fading_state(dep, model, seed=1, k=0)
gains = state_gains(state)

print("aggregate gain per BS:", np.round(gains, 3))
print()
print(" L  power  incremental           ordered-gain          exhaustive")
rates = [0.0]
for L in range(1, dep.n_bs + 1):
    inc = incremental_select(state, L, power, BT)
    og = ordered_gain_select(gains, L, state, power, BT)
    ex = exhaustive_select(state, L, power, BT)
    rates.append(inc.rate)
    print(f"{L:2d}  {power.power(L):5.1f}  {str(inc.subset):14s}{inc.rate:7.0f}  "
          f"{str(og.subset):14s}{og.rate:7.0f}  {str(ex.subset):14s}{ex.rate:7.0f}")

env = rate_envelope(rates)
print()
print("envelope vertices:", env.vertices.tolist())
print("segment slopes (nats/frame per BS):", np.round(env.slopes, 1).tolist())

# a larger multiplier puts more weight on the delay constraint and buys more BSs
theta = QoSSpec(load_to_nats(800e3, 0.01), delay_bound=5, xi=1e-4).theta
print()
print(f"QoS exponent at 800 kbps, 50 ms, 1e-4: theta = {theta:.3e}")
print("  lambda   usage  mixture over L")
for lam in (1.0, 3.0, 10.0, 30.0, 100.0, 300.0):
    u = best_usage(env, theta, lam)
    alpha = usage_to_alpha(env, u)
    mix = ", ".join(f"L={i}:{a:.2f}" for i, a in enumerate(alpha) if a > 0)
    print(f"{lam:8.0e}  {u:6.3f}  {mix}")
