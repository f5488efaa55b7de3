"""Pure-numpy reference kernels.

Same call signatures as the compiled module in `_kernels.pyx`; the backend
selector picks one implementation at import time. All kernels operate on
2-d (rows, cols) or flat contiguous arrays and are deterministic for a
fixed thread configuration.
"""

import numpy as np

# tanh-approximate GELU constants
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def softmax_fwd(x):
    """Row-wise softmax with max subtraction. x: (rows, cols)."""
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=1, keepdims=True)


def softmax_bwd(y, gy):
    """Gradient of row-wise softmax given its output y and upstream gy."""
    dot = np.sum(gy * y, axis=1, keepdims=True)
    return y * (gy - dot)


def layernorm_fwd(x, gain, bias, eps):
    """Row-wise layer norm. Returns (y, mean, rstd); mean/rstd cached for bwd."""
    mu = np.mean(x, axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    y = xc * rstd * gain + bias
    return y, mu[:, 0], rstd[:, 0]


def layernorm_bwd(x, mu, rstd, gain, gy):
    """Gradients of layer norm. Returns (gx, ggain, gbias)."""
    mu = mu[:, None]
    rstd = rstd[:, None]
    xhat = (x - mu) * rstd
    gyg = gy * gain
    m1 = np.mean(gyg, axis=1, keepdims=True)
    m2 = np.mean(gyg * xhat, axis=1, keepdims=True)
    gx = rstd * (gyg - m1 - xhat * m2)
    ggain = np.sum(gy * xhat, axis=0)
    gbias = np.sum(gy, axis=0)
    return gx, ggain, gbias


def gelu_fwd(x):
    """tanh-approximate GELU, elementwise on a flat array."""
    u = _GELU_C * (x + _GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_bwd(x, gy):
    """Gradient of tanh-approximate GELU."""
    x2 = x * x
    u = _GELU_C * (x + _GELU_A * x * x2)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def adam_step(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay, decoupled):
    """One fused Adam update, in place on p/m/v (flat arrays).

    Coupled mode folds weight decay into the gradient (classic Adam + L2);
    decoupled mode applies it directly to the parameters.
    """
    if weight_decay != 0.0 and not decoupled:
        g = g + weight_decay * p
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    mhat = m / bc1
    vhat = v / bc2
    if weight_decay != 0.0 and decoupled:
        p -= lr * weight_decay * p
    p -= lr * mhat / (np.sqrt(vhat) + eps)
