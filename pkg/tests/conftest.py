import numpy as np
import pytest

from mapignn import tensor as T

FD_STEP = 1e-5
FD_RTOL = 1e-4
# coordinates whose gradient is this small are compared on an absolute scale
FD_FLOOR = 1e-7


def fd_check(loss_fn, params, rng, coords=20, h=FD_STEP):
    """Compare backprop against central differences on sampled coordinates.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values;
    ``params`` is a list of leaf tensors.  Returns the worst relative error.
    """
    for p in params:
        p.grad = None
    T.backward(loss_fn())
    sizes = np.array([p.data.size for p in params])
    picks = []
    # every parameter gets at least one coordinate, the rest are drawn by size
    for k, p in enumerate(params):
        picks.append((k, int(rng.integers(p.data.size))))
    extra = max(coords - len(params), 0)
    which = rng.choice(len(params), size=extra, p=sizes / sizes.sum())
    picks.extend((int(k), int(rng.integers(sizes[k]))) for k in which)
    worst = 0.0
    for k, idx in picks:
        p = params[k]
        flat = p.data.reshape(-1)
        old = flat[idx]
        flat[idx] = old + h
        up = loss_fn().item()
        flat[idx] = old - h
        down = loss_fn().item()
        flat[idx] = old
        numeric = (up - down) / (2 * h)
        analytic = 0.0 if p.grad is None else p.grad.reshape(-1)[idx]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), FD_FLOOR)
        worst = max(worst, rel)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(rng, *shape, scale=1.0):
    return T.Tensor(scale * rng.standard_normal(shape), requires_grad=True)
