"""Time and memory per iteration as the collocation grid grows.

SepONet evaluates its trunks on N points per axis and forms the N^d grid
with an outer product, so trunk work grows like N. PI-DeepONet evaluates
its trunk at every one of the N^d points. The gap shows up quickly even at
desk scale.

Run:  python demos/scaling_glance.py  (under a minute)
"""
# %%
from seponet import bench, train

N_values = (8, 16, 32, 64)
print(f"{'model':>11} {'N':>3} {'ms/iter':>9} {'traced MB':>10} {'estimate MB':>12}")
for model in ("seponet", "pideeponet"):
    for N in N_values:
        cfg = train.TrainConfig(problem="diffusion-reaction", model=model, N=N, n_funcs=20, width=25, depth=5)
        ms = bench.probe_timing(cfg, iterations=30, warmup=5)
        mb = bench.probe_memory(cfg) / 1e6
        est = bench.estimate_memory_bytes(cfg) / 1e6
        print(f"{model:>11} {N:>3} {ms:9.2f} {mb:10.2f} {est:12.2f}")

# %% a full sweep with OOM handling goes through the CLI instead:
#   python -m seponet benchmark --spec demos/presets/desk_sweep_diffusion-reaction.json --out runs/dr
