import numpy as np

from rawdistill.tensor import Tensor


def fd_grad(fn, arrays, which, h=1e-3):
    """Central finite differences of ``fn(*arrays)`` (a float) w.r.t. arrays[which]."""
    base = [np.array(a, dtype=np.float32, copy=True) for a in arrays]
    x = base[which]
    grad = np.zeros(x.shape, dtype=np.float64)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + h
        up = fn(*base)
        x[i] = orig - h
        down = fn(*base)
        x[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


def projected(op, weights):
    """Scalar loss sum(op(...) * weights), accumulated in float64."""

    def loss(*arrays):
        out = op(*[Tensor(a) for a in arrays])
        return float(np.sum(out.data.astype(np.float64) * weights))

    return loss


def autodiff_grads(op, arrays, weights):
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    out = op(*ts)
    (out * weights).sum().backward()
    return [t.grad for t in ts]


def assert_grads_close(analytic, numeric, rel=1e-2, abs_=1e-3):
    analytic = np.asarray(analytic, dtype=np.float64)
    err = np.abs(analytic - numeric)
    ok = (err <= abs_) | (err <= rel * np.abs(numeric))
    assert ok.all(), f"max abs err {err.max():.3g} at {np.unravel_index(err.argmax(), err.shape)}"


# acceptance-criterion verdicts, printed by the terminal-summary hook in conftest
ACCEPTANCE = {}
