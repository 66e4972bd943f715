# %% [markdown]
# # Mean-square stability of random linear recursions
#
# For x+ = A(omega) x with i.i.d. A, the second moment evolves linearly through
# E[A kron A]; its spectral radius decides mean-square stability. We build a
# three-matrix law scaled to a chosen radius, then apply the same checker to
# the filter's transformed error matrix.

# %%
import numpy as np

from dkfnet.analysis import kron_square_radius, spectral_radius

mats = [np.array([[0.6, 0.9], [0.0, 0.3]]), np.array([[0.2, 0.0], [-0.8, 0.7]]),
        np.array([[0.0, -1.0], [1.0, 0.4]])]
probs = [0.5, 0.3, 0.2]
base = spectral_radius(sum(p * np.kron(a, a) for p, a in zip(probs, mats)))
for target in (0.9, 1.1):
    law = [(p, np.sqrt(target / base) * a) for p, a in zip(probs, mats)]
    print(target, "->", kron_square_radius(law, "exact").rho)

# %% [markdown]
# On a four-node path where only node 0 senses a scalar state, the error law
# over one averaging round has 2^3 outcomes, so the exact and Monte-Carlo
# answers can be compared. The sensing node's gain is N times the centralized
# one, so a single lossy round leaves the error growing in mean square.

# %%
from dkfnet.analysis import round_law, sample_M, transformed_error_matrix
from dkfnet.dkf import frozen_gains
from dkfnet.graph import LinkFailureModel, path_graph
from dkfnet.model import Plant, solve_riccati

p = Plant(np.array([[1.05]]), np.eye(1), [np.eye(1)] + [np.zeros((0, 1))] * 3,
          [np.eye(1)] + [np.zeros((0, 0))] * 3, np.zeros(1), np.eye(1))
gains = frozen_gains(p, solve_riccati(p))
g = path_graph(4)
law = [(w, transformed_error_matrix(p, gains, np.eye(4) - L / 3.0)) for w, L in round_law(g, 0.6)]
fm = LinkFailureModel(g, 0.6, seed=0)
mc = kron_square_radius(lambda k: transformed_error_matrix(p, gains, sample_M(fm, 3.0, 1, k)), budget=4000)
print("exact", kron_square_radius(law, "exact").rho, " monte-carlo", mc.rho, "+-", mc.stderr)
