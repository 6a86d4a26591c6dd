# %% [markdown]
# What an intervention does to the time to treatment.
#
# For a known hazard 0.9 t^0.5 exp(0.2 l) we tabulate the hazard and the
# density of T after multiplying the hazard by a few constants.

# %%
import numpy as np
from scipy import integrate

from hazshift import Constant, PiecewiseTime
from hazshift.effect import PowerHazard, intervention_curves

hazard = PowerHazard(scale=0.9, power=0.5, link=(0.2,))
grid = np.linspace(0, 3, 301)

for c in (0.5, 1.0, 2.0, 3.0):
    tab = intervention_curves(hazard, [0.0], Constant(c), grid)
    mode = grid[np.argmax(tab.density)]
    mass = integrate.trapezoid(tab.density, grid)
    print(f"theta={c}: density peaks at t={mode:.2f}, mass on [0, 3] = {mass:.4f}")

# %% [markdown]
# Interventions may also change over time: double the hazard during the
# first year, then halve it.

# %%
spec = PiecewiseTime(breaks=(1.0,), levels=(2.0, 0.5))
tab = intervention_curves(hazard, [0.0], spec, grid)
print("hazard just before and after t=1:", tab.hazard[99], tab.hazard[100])
