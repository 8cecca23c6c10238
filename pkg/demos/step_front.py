"""Step front on a short pipe: how each scheme smears or rings.

Same grid for every scheme (dx = 0.05 m, 20 cells of travel).  IU and SOE
use the step that makes the Courant number 1; SOE is also shown at 1.1.

    python demos/step_front.py
"""

import numpy as np

from heies.dtseries import DriverProfile
from heies.network import Pipe
from heies.reference import FdmScheme, error_metrics, run_fdm
from heies.sas import AdaptiveConfig, simulate_pipe
from heies.thermal import grid_size, reference_exact

dx, v, c, amb, horizon = 0.05, 50.0, 0.9997, 0.4, 0.02
pipe = Pipe("p", "a", "b", 2.0, 1.0, 1.0, 1.0, c, 0.0)
M = grid_size(pipe.length, dx)
x = np.linspace(0.0, pipe.length, M)
init = np.full(M, amb)
init[0] = 1.0
step = DriverProfile.constant(1.0)
steps = int(round(horizon * v / dx))


def exact(vel):
    return reference_exact(step, pipe, x, horizon, vel, amb, initial=lambda s: amb + 0.0 * s)


rows = [
    ("IU, R=1", run_fdm(FdmScheme("IU", dx, dx / v), init, v, steps, lambda t: 1.0, c, amb), exact(v)),
    ("SOE, R=1", run_fdm(FdmScheme("SOE", dx, dx / v), init, v, steps, lambda t: 1.0, c, amb), exact(v)),
    ("SOE, R=1.1", run_fdm(FdmScheme("SOE", dx, dx / v), init, 1.1 * v, steps, lambda t: 1.0, c, amb),
     exact(1.1 * v)),
]
for theta in (1.0, 2.0):
    cfg = AdaptiveConfig(theta=theta, dx=dx, dt_init=1e-4, dt_min=1e-10, dt_max=1e-3)
    run = simulate_pipe(pipe, step, v, horizon, cfg, amb, init, [horizon])
    rows.append((f"DT-TVD, theta={theta:g}", run.values[-1], exact(v)))

print(f"{'scheme':<18} {'rmse':>8} {'overshoot':>10} {'rise cells':>10}")
for name, sol, base in rows:
    m = error_metrics(sol, base)
    print(f"{name:<18} {m.rmse:8.4f} {m.overshoot:10.4f} {m.rise_cells:10.2f}")
