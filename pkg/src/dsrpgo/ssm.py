"""State-space sequence models: discretization, recurrent and convolutional
scans, and the input-dependent (selective) scan.

The continuous parameters (A, B, C, D) with timescale delta are discretized
as Abar = exp(delta*A), Bbar = (delta*A)^-1 (exp(delta*A) - I) * delta*B,
Cbar = C.  A is diagonal and strictly negative, parameterized as
A = -exp(a_log), which keeps the recurrence stable.  The recurrent form
h_t = Abar h_{t-1} + Bbar x_t, y_t = Cbar h_t + D x_t is equivalent to a
causal convolution with kernel (Cbar Bbar, Cbar Abar Bbar, ...) when the
kernel spans the whole sequence.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor, Module


def discretize(a, b, delta):
    """Discretize diagonal-A continuous parameters.

    a, b, delta broadcast elementwise; delta must be strictly positive.
    Returns (abar, bbar) where abar = exp(delta*a) and
    bbar = phi(delta*a) * delta * b with phi(z) = (e^z - 1)/z (series limit
    near 0, so a -> 0 gives bbar -> delta*b exactly).
    """
    a, b, delta = Tensor.wrap(a), Tensor.wrap(b), Tensor.wrap(delta)
    if np.any(delta.data <= 0.0):
        raise ValueError("discretize: timescale delta must be strictly positive")
    da = T.mul(delta, a)
    abar = T.exp(da)
    bbar = T.mul(T.expm1_over_x(da), T.mul(delta, b))
    return abar, bbar


def scan_recurrent(x, abar, bbar, c, d=0.0):
    """Run the discrete recurrence on a length-L scalar-channel sequence.

    x: (L,) inputs; abar, bbar, c: (N,) per-state vectors; d: scalar skip.
    Returns y of shape (L,) with y_t = c . h_t + d * x_t, h_0 = 0 before
    the first update.  Plain numpy; used as the reference scan.
    """
    x = np.asarray(x, dtype=np.float64)
    abar = np.atleast_1d(np.asarray(abar, dtype=np.float64))
    bbar = np.atleast_1d(np.asarray(bbar, dtype=np.float64))
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    h = np.zeros_like(abar)
    y = np.empty_like(x)
    for t in range(x.shape[0]):
        h = abar * h + bbar * x[t]
        y[t] = c @ h + d * x[t]
    return y


def ssm_kernel(abar, bbar, c, length):
    """Global-convolution kernel (c.bbar, c.abar.bbar, ..., c.abar^{len-1}.bbar)."""
    abar = np.atleast_1d(np.asarray(abar, dtype=np.float64))
    bbar = np.atleast_1d(np.asarray(bbar, dtype=np.float64))
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    k = np.empty(length)
    state = bbar.copy()
    for j in range(length):
        k[j] = c @ state
        state = abar * state
    return k


def scan_convolutional(x, abar, bbar, c, d=0.0, kernel_length=None):
    """Causal convolution form of the scan; equals scan_recurrent when the
    kernel covers the sequence (kernel_length defaults to len(x))."""
    x = np.asarray(x, dtype=np.float64)
    L = x.shape[0]
    k = ssm_kernel(abar, bbar, c, L if kernel_length is None else kernel_length)
    y = np.zeros_like(x)
    for j in range(min(len(k), L)):
        if j == 0:
            y += k[0] * x
        else:
            y[j:] += k[j] * x[:-j]
    return y + d * x


class SelectiveSsm(Module):
    """Input-dependent scan over (..., L, D) token sequences.

    Per token, learned projections of the input produce delta (per channel,
    softplus-positive), B and C (per state); A stays diagonal and negative.
    """

    def __init__(self, width, state_dim, rng, delta_bias_range=(1e-3, 0.1)):
        self.width = width
        self.state_dim = state_dim
        # A = -exp(a_log) with magnitudes evenly spaced in [1, state_dim]
        mags = np.linspace(1.0, float(state_dim), state_dim)
        self.a_log = Tensor(np.log(np.broadcast_to(mags, (width, state_dim)).copy()),
                            requires_grad=True)
        self.d_skip = Tensor(np.ones(width), requires_grad=True)
        self.w_delta = T.parameter(rng, width, width)
        # bias chosen so initial softplus(delta) sits inside delta_bias_range
        lo, hi = delta_bias_range
        inv = np.log(np.expm1(rng.uniform(lo, hi, size=width)))
        self.b_delta = Tensor(inv, requires_grad=True)
        self.w_b = T.parameter(rng, width, state_dim)
        self.w_c = T.parameter(rng, width, state_dim)

    def forward(self, x):
        """x: (..., L, D) -> y: (..., L, D), differentiable end-to-end."""
        L = x.shape[-2]
        delta = T.softplus(T.add(T.matmul(x, self.w_delta), self.b_delta))  # (...,L,D)
        bproj = T.matmul(x, self.w_b)                                       # (...,L,N)
        cproj = T.matmul(x, self.w_c)                                       # (...,L,N)
        a = T.mul(T.exp(self.a_log), -1.0)                                  # (D,N)
        y_tokens = []
        h = None                                                            # (...,D,N)
        for t in range(L):
            xt = x[..., t, :]                                               # (...,D)
            dt = delta[..., t, :]                                           # (...,D)
            bt = bproj[..., t, :]                                           # (...,N)
            ct = cproj[..., t, :]                                           # (...,N)
            dte = T.reshape(dt, dt.shape + (1,))                            # (...,D,1)
            xte = T.reshape(xt, xt.shape + (1,))
            bte = T.reshape(bt, bt.shape[:-1] + (1, bt.shape[-1]))          # (...,1,N)
            abar, bbar = discretize(a, bte, dte)                            # (...,D,N)
            inflow = T.mul(bbar, xte)
            h = inflow if h is None else T.add(T.mul(abar, h), inflow)
            cte = T.reshape(ct, ct.shape[:-1] + (ct.shape[-1], 1))          # (...,N,1)
            yt = T.reshape(T.matmul(h, cte), xt.shape)                      # (...,D)
            y_tokens.append(T.add(yt, T.mul(self.d_skip, xt)))
        return T.stack(y_tokens, axis=x.ndim - 2)
