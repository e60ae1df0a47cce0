import numpy as np

from gkd.nn import MLPParams


def finite_difference_check(params: MLPParams, grads: MLPParams, loss_fn, h: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-6)``; the floor keeps
    entries that are (near) zero on both sides from dividing roundoff by zero.
    """
    worst = 0.0
    for li, (W, b) in enumerate(params.layers):
        for which, arr in ((0, W), (1, b)):
            g = grads.layers[li][which]
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = loss_fn(params)
                arr[idx] = old - h
                down = loss_fn(params)
                arr[idx] = old
                num = (up - down) / (2 * h)
                err = abs(g[idx] - num) / max(abs(g[idx]), abs(num), 1e-6)
                worst = max(worst, err)
    return worst


def random_graph_edges(rng, n, p):
    iu = np.triu_indices(n, k=1)
    keep = rng.random(iu[0].size) < p
    return list(zip(iu[0][keep].tolist(), iu[1][keep].tolist()))
