"""
Gating sliders by timestep
==========================

Samplers go from t = 1000 down to 0.  Sliders stay off while t is above the
gate so the coarse layout comes from the plain prompt.  The usual gate is
800; editing real images uses 550.
"""

import numpy as np

from textslider import GateSchedule, gate_multiplier

t = np.arange(0, 1001)
for gate in (800, 550):
    alphas = np.array([gate_multiplier(GateSchedule(gate, 0.3), int(s)) for s in t])
    on = t[alphas != 0]
    print(f"gate {gate}: slider active for t in [{on.min()}, {on.max()}], {on.size} of {t.size} steps")

# a 50-step DDIM-style schedule
steps = np.linspace(999, 0, 50).round().astype(int)
print([gate_multiplier(GateSchedule(), int(s)) for s in steps[:14]])
