"""Independent reference computations shared by several test modules."""
import numpy as np

from seponet import nets, pde, sampling, train


def naive_mlp(params, x):
    """Straight-line re-evaluation of an MLP one sample and unit at a time."""
    x = np.asarray(x, dtype=float)
    out = []
    for row in x:
        h = list(row)
        for li, (W, b) in enumerate(params.layers):
            z = []
            for o in range(W.shape[0]):
                acc = b[o]
                for i in range(W.shape[1]):
                    acc += W[o, i] * h[i]
                z.append(acc)
            if li < len(params.layers) - 1:
                z = [np.sin(v) if params.activation == "sine" else np.tanh(v) for v in z]
            h = z
        out.append(h)
    return np.array(out)


def rel_err(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def fd_gradient(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def small_problem_setup(problem_name, kind, seed=0, width=8, depth=3, r=8, m=16, n_funcs=3, N=5):
    prob = pde.get_problem(problem_name)
    rng = sampling.make_rng(seed, sampling.STREAM_INIT)
    if prob.spatial_dim == 2:
        m = 16
    init = nets.init_seponet if kind == "seponet" else nets.init_deeponet
    model = init(rng, m, prob.d, r, width, depth)
    batch = pde.sample_batch(prob, sampling.make_rng(seed, sampling.STREAM_TRAIN), n_funcs, N, m)
    return prob, model, batch


def loss_gradient_check(problem_name, kind, seed=0):
    """Max relative error of tape vs central-difference loss gradients."""
    prob, model, batch = small_problem_setup(problem_name, kind, seed)
    _, g = train.loss_and_grad(model, prob, batch)
    flat = nets.flatten(model)

    def f(p):
        return float(pde.model_loss(nets.unflatten(model, p), prob, batch)[0])

    fd = fd_gradient(f, flat)
    return float(np.max(np.abs(g - fd)) / np.max(np.abs(fd)))
