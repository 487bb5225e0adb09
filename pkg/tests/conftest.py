import numpy as np

from adadfq.tensor import backward


def fd_check_skip_rows(loss_fn, param, skip_rows, step=1e-6):
    """Central-difference gradient check that skips the given rows.

    The normalized-entropy losses treat the batch-minimum entropy as a
    constant, so their gradient intentionally deviates from the true
    derivative on the argmin sample's coordinates. This checks every other
    coordinate, the analog of checking hinge gradients away from the kink.
    Returns the worst relative error.
    """
    param.zero_grad()
    backward(loss_fn())
    analytic = param.grad.copy()
    param.zero_grad()

    worst = 0.0
    rows, cols = param.data.shape
    for r in range(rows):
        if r in skip_rows:
            continue
        for c in range(cols):
            orig = param.data[r, c]
            param.data[r, c] = orig + step
            hi = float(loss_fn().data)
            param.data[r, c] = orig - step
            lo = float(loss_fn().data)
            param.data[r, c] = orig
            numeric = (hi - lo) / (2.0 * step)
            ref = analytic[r, c]
            err = abs(ref - numeric) / max(abs(ref), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def argmin_entropy_row(z_p, z_q):
    """Index of the sample whose disagreement vector has the lowest entropy."""
    d = z_p.data - z_q.data
    e = np.exp(d - d.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return int(terms.sum(axis=1).argmin())
