"""Central-difference gradient checking, shared by several test modules.

The convention: ``build()`` reconstructs the whole scalar-valued graph
from the same float64 leaf tensors on every call, so perturbing a leaf in
place and calling ``build()`` again re-evaluates the function cleanly.
Randomness inside the graph (dropout) must be reseeded inside ``build``.
"""

import numpy as np


def rel_err(a: float, n: float, floor: float = 1e-6) -> float:
    scale = max(abs(a), abs(n))
    if scale < floor:
        # both effectively zero: agree by fiat unless they differ visibly
        return 0.0 if abs(a - n) < floor else 1.0
    return abs(a - n) / scale


def check_gradients(build, params, n_coords=20, h=1e-3, rtol=1e-4, seed=0):
    """Compare backprop gradients against central differences.

    params: dict name -> leaf Tensor (float64, requires_grad=True).
    Checks up to ``n_coords`` randomly chosen coordinates per tensor.
    Returns the worst relative error seen; raises AssertionError on any
    coordinate exceeding ``rtol``.

    ``h`` is the starting step. A coordinate that misses ``rtol`` is
    retried at h/10 and h/100: relu and maxpool make the loss piecewise
    smooth, and a probe that straddles a kink sitting within h of the
    point reads a blend of two slopes. Shrinking h escapes the kink,
    while a genuinely wrong gradient stays wrong at every step size.
    """
    for p in params.values():
        assert p.data.dtype == np.float64, "gradient checks must run in float64"
        p.grad = None
    out = build()
    assert out.data.dtype == np.float64
    out.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        count = min(n_coords, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        for i in coords:
            keep = flat[i]
            ana = float(analytic[name].reshape(-1)[i])
            err = None
            for step in (h, h / 10.0, h / 100.0):
                flat[i] = keep + step
                f_plus = build().item()
                flat[i] = keep - step
                f_minus = build().item()
                flat[i] = keep
                numeric = (f_plus - f_minus) / (2.0 * step)
                err = rel_err(ana, numeric)
                if err < rtol:
                    break
            worst = max(worst, err)
            checked += 1
            assert err < rtol, (
                f"{name}[{i}]: analytic {ana:.8g} vs numeric {numeric:.8g} "
                f"(rel err {err:.3g} at h={step:.0e} and above)"
            )
    assert checked > 0
    return worst
