# %% [markdown]
# # Sufficient numbers of averaging rounds
#
# The bounds combine the Lyapunov rate lambda of the centralized closed
# loop, a coupling constant c_B and the contraction factor theta of one
# lossy averaging round. They certify stability for gamma above a
# threshold; the thresholds are conservative by orders of magnitude.

# %%

from dkfnet.analysis import bound_matrix_AR, bounds_report
from dkfnet.dkf import default_delta
from dkfnet.graph import default_topology
from dkfnet.model import paper5_plant, solve_riccati

plant = paper5_plant()
sol = solve_riccati(plant)
g = default_topology()
for p in (1.0, 0.8, 0.6):
    r = bounds_report(plant, sol, g, p, default_delta(g), p_d_trials=20_000)
    print(f"p_beta={p}: lambda={r.lambda_:.3f} c_B={r.c_B:.2f} theta={r.theta_pbeta:.5f} "
          f"p_d={r.p_d:.3f} -> gamma mean {r.gamma_min_mean}, mean-square {r.gamma_min_ms}, "
          f"closed form {r.gamma_closed_form}")

# %% [markdown]
# The closed-form condition theta^gamma < ((1 - sqrt(lambda)) / c_B)^2 is
# sufficient only when (1 - sqrt(lambda))^2 is at most about sqrt(lambda) c_B.
# A small counterexample:

# %%
from dkfnet.analysis import closed_form_gamma

lam, c, th = 0.01, 1.0, 0.9
gam = closed_form_gamma(lam, c, th)
print("closed-form gamma", gam, "rho(A_R) there:", round(bound_matrix_AR(gam, lam, c, th)[1], 4))
