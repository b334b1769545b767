"""Heat equation: what a rank-one SepONet learns.

The solution of s_t = s_xx / pi^2 with zero walls is a sine series whose
k-th term decays like exp(-k^2 t). A rank-one SepONet has a single spatial
and a single temporal basis function, so the best it can do is the first
series term. This script trains one and compares.

Run:  python demos/heat_basis.py  (about a minute and a half on one core)
"""
# %%
import numpy as np

from seponet import bench, nets, refsolve, train

test_set = train.make_test_set("heat", 100, seed=0)

# %% truncated series as a yardstick
for K in (1, 2, 4, 8):
    print(f"series K={K:2d}  mean RMSE {bench.series_rmse(test_set, K):.2e}")

# %% train at r=1
cfg = train.TrainConfig(problem="heat", r=1, width=25, depth=4, n_funcs=20, N=32, iterations=20000)
result = train.train(cfg)
m = train.evaluate(result.model, test_set)
print(f"SepONet r=1   mean RMSE {m.rmse_mean:.2e}")

# %% the learned bases, up to sign and scale
g, bx, bt = bench.learned_bases(result.model)
print("cosine(spatial basis, sin(pi x)) =", abs(bench.cosine_similarity(bx[:, 0], np.sin(np.pi * g))))
tau = bt[:, 0] * np.sign(bt[0, 0])
print("temporal basis decreasing:", bool(np.all(np.diff(tau) < 0)))
# the decay rate of the first mode is 1, so tau(1)/tau(0) should sit near e^-1
print(f"tau(1)/tau(0) = {tau[-1] / tau[0]:.3f}   exp(-1) = {np.exp(-1):.3f}")

# %% pointwise check against the series on one test function
one = refsolve.heat_analytic(test_set.inputs.subset([0]), 64, tuple(test_set.solution.axes))
pred = nets.predict_grid(result.model, test_set.inputs.values[:1], test_set.solution.axes)
print("max abs error on function 0:", float(np.max(np.abs(pred - one.values))))
