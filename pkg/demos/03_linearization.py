"""The price of linearizing convection around the noisy field.

The state equation uses the measured velocity as the convecting field, so
even with perfect priors the discrete solution differs from the true flow.
That discrepancy shrinks like delta on a fine mesh, while on a coarse mesh
discretization error takes over and the curve flattens out.

Run:  python demos/03_linearization.py
"""
import numpy as np

from flowfilter.testbed import linearization_experiment

deltas = [0.4, 0.2, 0.1, 0.05, 0.025]
rows = linearization_experiment([8, 16, 32], deltas, seed=0)

for ny in (8, 16, 32):
    eu = [r["err_u_h1"] for r in rows if r["mesh_ny"] == ny]
    ep = [r["err_p_l2"] for r in rows if r["mesh_ny"] == ny]
    su = np.polyfit(np.log(deltas), np.log(eu), 1)[0]
    sp = np.polyfit(np.log(deltas), np.log(ep), 1)[0]
    print(f"ny={ny:>3}  H1 errors " + " ".join(f"{e:.3f}" for e in eu)
          + f"   slope {su:.2f}   pressure slope {sp:.2f}")

# On the finer meshes the velocity error tracks delta and the pressure error
# falls faster than delta. The coarsest mesh saturates at its discretization
# error, visible as a slope well below one.
