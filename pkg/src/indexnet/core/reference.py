"""
Loop-level reference implementations.

Each function spells out the unsimplified index sum the fast kernels and
backward passes collapse: explicit convolution loops, an exhaustive pooling
scan, a materialized batch-norm Jacobian, and the raw pool-to-conv,
conv-to-conv and coefficient sums. They are slow on purpose and only meant
for tiny shapes in tests.
"""

from typing import Optional, Tuple

import numpy as np

from .batchnorm import BatchNormState
from .errors import DimensionError, StateError
from .nn_math import ActivationLike, activate_prime
from .tensor import IndexArray, Tensor


def matmul_loops(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def conv_loops(x_padded: Tensor, theta: Tensor, stride: int) -> Tensor:
    """a[t,f,l,m] = sum_{f',j,k} theta[f,f',j,k] x[t,f',S l + j,S m + k]."""
    T_mb, F_in, H, W = x_padded.shape
    F_out, _, R, _ = theta.shape
    N_p = (H - R) // stride + 1
    T_p = (W - R) // stride + 1
    a = np.zeros((T_mb, F_out, N_p, T_p))
    for t, f, l, m in np.ndindex(T_mb, F_out, N_p, T_p):
        acc = 0.0
        for g, j, k in np.ndindex(F_in, R, R):
            acc += theta[f, g, j, k] * x_padded[t, g, stride * l + j, stride * m + k]
        a[t, f, l, m] = acc
    return a


def pool_scan(x: Tensor, R: int, stride: int) -> Tuple[Tensor, IndexArray]:
    """Exhaustive max-pool scan; the first strict maximum in row-major (j, k) wins."""
    lead = x.shape[:-2]
    H, W = x.shape[-2:]
    N_p = (H - R) // stride + 1
    T_p = (W - R) // stride + 1
    values = np.zeros((*lead, N_p, T_p))
    argmax = np.zeros((*lead, N_p, T_p, 2), dtype=np.intp)
    for idx in np.ndindex(*lead):
        for l in range(N_p):
            for m in range(T_p):
                best = -np.inf
                where = (0, 0)
                for j in range(R):
                    for k in range(R):
                        v = x[idx][stride * l + j, stride * m + k]
                        if v > best:
                            best, where = v, (j, k)
                values[idx][l, m] = best
                argmax[idx][l, m] = where
    return values, argmax


def _per_feature_rows(x: Tensor) -> Tensor:
    """[F, D] view of an input: every row holds one feature's D entries."""
    return np.moveaxis(x, 1, 0).reshape(x.shape[1], -1)


def _from_rows(rows: Tensor, shape: Tuple[int, ...]) -> Tensor:
    moved = (shape[1], shape[0], *shape[2:])
    return np.moveaxis(rows.reshape(moved), 0, 1)


def bn_jacobian_matrix(state: BatchNormState) -> Tensor:
    """
    J[f, i, i'] = gamma_tilde_f (delta(i, i') - (1 + h_tilde_i h_tilde_i') / D).

    i and i' run over the D entries feature f is normalized across.
    """
    if state.h_tilde is None or state.gamma_tilde is None:
        raise StateError("batch-norm Jacobian needs a training forward first")
    rows = _per_feature_rows(state.h_tilde)
    F, D = rows.shape
    J = np.zeros((F, D, D))
    for f in range(F):
        for i in range(D):
            for ip in range(D):
                kron = 1.0 if i == ip else 0.0
                J[f, i, ip] = state.gamma_tilde[f] * (
                    kron - (1.0 + rows[f, i] * rows[f, ip]) / D
                )
    return J


def bn_contract_materialized(state: BatchNormState, upstream: Tensor) -> Tensor:
    J = bn_jacobian_matrix(state)
    rows = _per_feature_rows(upstream)
    out = np.einsum("fij,fj->fi", J, rows)
    return _from_rows(out, upstream.shape)


def _activate_delta(
    upstream: Tensor,
    bn: Optional[BatchNormState],
    a_below: Tensor,
    g_kind: ActivationLike,
) -> Tensor:
    through = bn_contract_materialized(bn, upstream) if bn is not None else upstream
    return activate_prime(g_kind, a_below) * through


def pool_upstream_loops(
    argmax: IndexArray, stride: int, delta_above: Tensor, in_shape: Tuple[int, ...]
) -> Tensor:
    """Gradient on pool inputs: each pooled entry lands on its window's winner."""
    out = np.zeros(in_shape)
    T_mb, F, N_p, T_p = delta_above.shape
    for t, f, lp, mp in np.ndindex(T_mb, F, N_p, T_p):
        j, k = argmax[t, f, lp, mp]
        out[t, f, stride * lp + j, stride * mp + k] += delta_above[t, f, lp, mp]
    return out


def pool_to_conv_loops(
    argmax: IndexArray,
    stride: int,
    delta_above: Tensor,
    bn: Optional[BatchNormState],
    a_below: Tensor,
    g_kind: ActivationLike,
) -> Tensor:
    """Error rate of a convolution under a max pool, written as the raw sum."""
    upstream = pool_upstream_loops(argmax, stride, delta_above, a_below.shape)
    return _activate_delta(upstream, bn, a_below, g_kind)


def conv_upstream_loops(
    theta_above: Tensor,
    stride: int,
    padding: int,
    delta_above: Tensor,
    in_shape: Tuple[int, ...],
) -> Tensor:
    """
    y_grad[t,f',l',m'] = sum_{f,l,m,j,k} theta[f,f',j,k] delta[t,f,l,m]
    over every (l, m, j, k) with S l + j - P = l' and S m + k - P = m'.
    """
    T_mb, F_in, N, T = in_shape
    F_out, _, R, _ = theta_above.shape
    N_p, T_p = delta_above.shape[2:]
    out = np.zeros(in_shape)
    for t, g, lq, mq in np.ndindex(T_mb, F_in, N, T):
        acc = 0.0
        for f, l, m, j, k in np.ndindex(F_out, N_p, T_p, R, R):
            hit = stride * l + j - padding == lq and stride * m + k - padding == mq
            if hit:
                acc += theta_above[f, g, j, k] * delta_above[t, f, l, m]
        out[t, g, lq, mq] = acc
    return out


def conv_to_conv_loops(
    theta_above: Tensor,
    stride: int,
    padding: int,
    delta_above: Tensor,
    bn: Optional[BatchNormState],
    a_below: Tensor,
    g_kind: ActivationLike,
) -> Tensor:
    upstream = conv_upstream_loops(
        theta_above, stride, padding, delta_above, a_below.shape
    )
    return _activate_delta(upstream, bn, a_below, g_kind)


def coeff_sums_loops(upstream: Tensor, h_tilde: Tensor) -> Tuple[Tensor, Tensor]:
    """d_gamma_f = sum_{t,l,m} upstream h_tilde and d_beta_f = sum_{t,l,m} upstream."""
    T_mb, F = upstream.shape[:2]
    spatial = upstream.shape[2:]
    d_gamma = np.zeros(F)
    d_beta = np.zeros(F)
    for f in range(F):
        for t in range(T_mb):
            for pos in np.ndindex(*spatial):
                d_gamma[f] += upstream[(t, f, *pos)] * h_tilde[(t, f, *pos)]
                d_beta[f] += upstream[(t, f, *pos)]
    return d_gamma, d_beta


def conv_weight_grad_loops(
    delta: Tensor, y_padded: Tensor, stride: int, R: int
) -> Tensor:
    T_mb, F_out, N_p, T_p = delta.shape
    F_in = y_padded.shape[1]
    out = np.zeros((F_out, F_in, R, R))
    for f, g, j, k in np.ndindex(F_out, F_in, R, R):
        acc = 0.0
        for t, l, m in np.ndindex(T_mb, N_p, T_p):
            acc += delta[t, f, l, m] * y_padded[t, g, stride * l + j, stride * m + k]
        out[f, g, j, k] = acc
    return out
