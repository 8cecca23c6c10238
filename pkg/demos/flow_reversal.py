"""A growing load at node 5 turns the cross pipe p3 around.

The window that contains the sign change is cut at the root of the flow
series, the pipe is flipped and the run continues in the new orientation.

    python demos/flow_reversal.py
"""

import numpy as np

from heies import cases
from heies.sas import AdaptiveConfig, simulate

system = cases.reversal_system({"phi[5]": cases.load_ramp(0.6e6, 3e6, 600.0, 3000.0)})
result = simulate(system, 3600.0, AdaptiveConfig())

for w in result.windows:
    if w.reversal_event is not None:
        pipes, t_prime = w.reversal_event
        print(f"reversal of {', '.join(pipes)} at t = {w.t_start + t_prime:.4f} s "
              f"(window of {w.reversal_full_dt:.1f} s cut to {t_prime:.2f} s)")

# flow in p3 in the configured direction 3 -> 4
for t, sys_t, values, _ in result.sample(np.arange(0.0, 3601.0, 300.0)):
    flipped = sys_t.heat.pipes[sys_t.heat.pipe_index("p3")].reversed
    m = -values["m[p3]"] if flipped else values["m[p3]"]
    print(f"t = {t:6.0f} s   m[p3] = {m:+.4f} kg/s")
print(result.summary())
