"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Every kernel exists twice: a vectorized numpy implementation and a numba
``@njit`` loop. At import time one set is selected and bound to the public
names. The numba path is used when numba imports cleanly and the
``EVFACT_NUMBA`` environment variable is not set to ``0``/``false``/``off``.
Both paths compute the same IEEE-754 double arithmetic; results within one
process are deterministic either way.

``benchmarks/bench_kernels.py`` compares the two paths head to head.

All kernels take contiguous 1-D float64 arrays. Callers flatten and
reshape; ``adam_update`` mutates its buffers in place.
"""

import os
import warnings

import numpy as np

__all__ = [
    "NUMBA_ENABLED",
    "sigmoid",
    "sigmoid_grad",
    "tanh_grad",
    "relu",
    "relu_grad",
    "adam_update",
    "IMPLEMENTATIONS",
]


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def _sigmoid_np(x):
    # split on sign to avoid exp overflow for large negative inputs
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _sigmoid_grad_np(gout, out):
    return gout * out * (1.0 - out)


def _tanh_grad_np(gout, out):
    return gout * (1.0 - out * out)


def _relu_np(x):
    return np.maximum(x, 0.0)


def _relu_grad_np(gout, x):
    # subgradient at exactly 0 is defined as 0
    return np.where(x > 0.0, gout, 0.0)


def _adam_update_np(param, grad, m, v, t, lr, beta1, beta2, eps):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


_NUMPY = {
    "sigmoid": _sigmoid_np,
    "sigmoid_grad": _sigmoid_grad_np,
    "tanh_grad": _tanh_grad_np,
    "relu": _relu_np,
    "relu_grad": _relu_grad_np,
    "adam_update": _adam_update_np,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba():
    from numba import njit

    @njit(cache=True)
    def sigmoid_nb(x):
        out = np.empty_like(x)
        for i in range(x.size):
            val = x[i]
            if val >= 0.0:
                out[i] = 1.0 / (1.0 + np.exp(-val))
            else:
                e = np.exp(val)
                out[i] = e / (1.0 + e)
        return out

    @njit(cache=True)
    def sigmoid_grad_nb(gout, out):
        res = np.empty_like(gout)
        for i in range(gout.size):
            res[i] = gout[i] * out[i] * (1.0 - out[i])
        return res

    @njit(cache=True)
    def tanh_grad_nb(gout, out):
        res = np.empty_like(gout)
        for i in range(gout.size):
            res[i] = gout[i] * (1.0 - out[i] * out[i])
        return res

    @njit(cache=True)
    def relu_nb(x):
        out = np.empty_like(x)
        for i in range(x.size):
            out[i] = x[i] if x[i] > 0.0 else 0.0
        return out

    @njit(cache=True)
    def relu_grad_nb(gout, x):
        res = np.empty_like(gout)
        for i in range(gout.size):
            res[i] = gout[i] if x[i] > 0.0 else 0.0
        return res

    @njit(cache=True)
    def adam_update_nb(param, grad, m, v, t, lr, beta1, beta2, eps):
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for i in range(param.size):
            g = grad[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
            param[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)

    return {
        "sigmoid": sigmoid_nb,
        "sigmoid_grad": sigmoid_grad_nb,
        "tanh_grad": tanh_grad_nb,
        "relu": relu_nb,
        "relu_grad": relu_grad_nb,
        "adam_update": adam_update_nb,
    }


def _numba_wanted():
    flag = os.environ.get("EVFACT_NUMBA", "").strip().lower()
    return flag not in {"0", "false", "off", "no"}


NUMBA_ENABLED = False
_NUMBA = None
if _numba_wanted():
    try:
        _NUMBA = _build_numba()
        NUMBA_ENABLED = True
    except ImportError:
        warnings.warn(
            "numba is unavailable; falling back to the pure-numpy kernels "
            "(set EVFACT_NUMBA=0 to silence this warning)",
            RuntimeWarning,
            stacklevel=2,
        )

_ACTIVE = _NUMBA if NUMBA_ENABLED else _NUMPY

sigmoid = _ACTIVE["sigmoid"]
sigmoid_grad = _ACTIVE["sigmoid_grad"]
tanh_grad = _ACTIVE["tanh_grad"]
relu = _ACTIVE["relu"]
relu_grad = _ACTIVE["relu_grad"]
adam_update = _ACTIVE["adam_update"]

#: both implementation sets, keyed "numpy" / "numba"; "numba" is absent
#: when the JIT path is disabled or unavailable.
IMPLEMENTATIONS = {"numpy": _NUMPY}
if NUMBA_ENABLED:
    IMPLEMENTATIONS["numba"] = _NUMBA
