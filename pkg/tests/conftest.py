import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


def rel_err(a, n, floor=1e-3):
    """Relative error with a floor so near-zero gradients compare on FD noise scale."""
    return abs(a - n) / max(abs(a), abs(n), floor)


def finite_difference_check(module, x, n_coords=60, step=1e-4, seed=0, tol=1e-4,
                            min_pass=0.99):
    """Compare autograd gradients of a scalar readout against central differences.

    Samples coordinates from the input and from every parameter tensor,
    perturbs each by +/-step in double precision, and requires the stated
    fraction of sampled coordinates to agree within tol relative error.
    """
    module = module.double()
    x = x.double().clone().requires_grad_(True)
    rng = np.random.default_rng(seed)
    # fixed random readout weights make the scalar loss sensitive everywhere
    out = module(x)
    out = out[-1] if isinstance(out, (list, tuple)) else out
    w = torch.from_numpy(rng.standard_normal(tuple(out.shape)))

    def scalar():
        o = module(x)
        o = o[-1] if isinstance(o, (list, tuple)) else o
        return (o * w).sum()

    loss = scalar()
    params = [p for p in module.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, [x] + params, allow_unused=True)
    tensors = [x] + params

    failures, checked = 0, 0
    for _ in range(n_coords):
        ti = int(rng.integers(0, len(tensors)))
        t = tensors[ti]
        flat = int(rng.integers(0, t.numel()))
        analytic = 0.0 if grads[ti] is None else float(grads[ti].reshape(-1)[flat])
        with torch.no_grad():
            orig = float(t.reshape(-1)[flat])
            t.reshape(-1)[flat] = orig + step
            f_plus = float(scalar())
            t.reshape(-1)[flat] = orig - step
            f_minus = float(scalar())
            t.reshape(-1)[flat] = orig
        numeric = (f_plus - f_minus) / (2 * step)
        checked += 1
        if rel_err(analytic, numeric) > tol:
            failures += 1
    assert checked == n_coords
    frac = 1.0 - failures / checked
    assert frac >= min_pass, f"only {frac:.3f} of sampled coordinates matched finite differences"
    return frac
