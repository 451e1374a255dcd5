"""Hot inner loops of the gated polynomial policy.

Every kernel exists twice: a pure-numpy version (``*_np``) and a numba version
(``*_nb``). The public names are bound to one or the other at import time
according to :mod:`sparsepde._jit`. Both paths take and return float64 arrays
and agree to roundoff.
"""
import numpy as np

from sparsepde._jit import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# polynomial features
# ---------------------------------------------------------------------------


def poly_features_np(S, parent, var):
    """Monomial features of a batch ``S`` (B, n).

    Feature ``j > 0`` is ``feature[parent[j]] * S[:, var[j]]``; feature 0 is 1.
    Parents always precede their children.
    """
    B = S.shape[0]
    F = parent.shape[0]
    out = np.empty((B, F))
    out[:, 0] = 1.0
    # children of a degree-k block only reference degree-(k-1) entries, so one
    # vectorized gather per contiguous run of same-degree monomials suffices
    j = 1
    while j < F:
        k = j
        while k < F and parent[k] < j:
            k += 1
        if k == j:
            raise ValueError("parent table is not topologically ordered")
        out[:, j:k] = out[:, parent[j:k]] * S[:, var[j:k]]
        j = k
    return out


@njit
def poly_features_nb(S, parent, var):
    B = S.shape[0]
    F = parent.shape[0]
    out = np.empty((B, F))
    for b in range(B):
        out[b, 0] = 1.0
        for j in range(1, F):
            out[b, j] = out[b, parent[j]] * S[b, var[j]]
    return out


# ---------------------------------------------------------------------------
# hard-concrete gates
# ---------------------------------------------------------------------------


def hard_concrete_np(log_alpha, u, beta, lo, hi):
    """Gate values and d(gate)/d(log_alpha) for uniform noise ``u``.

    ``log_alpha`` broadcasts against ``u``. Uses
    sigmoid((logit(u) + la) / beta) = 1 / (1 + exp(-la / beta) ((1 - u) / u)^(1 / beta)).
    """
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-log_alpha / beta) * ((1.0 - u) / u) ** (1.0 / beta))
    d = s * hi + (1.0 - s) * lo
    z = np.clip(d, 0.0, 1.0)
    interior = (d > 0.0) & (d < 1.0)
    dz = np.where(interior, (hi - lo) * s * (1.0 - s) / beta, 0.0)
    return z, dz


@njit
def hard_concrete_nb(log_alpha, u, beta, lo, hi):
    # u: (B, F, A); log_alpha: (F, A)
    B, F, A = u.shape
    z = np.empty(u.shape)
    dz = np.empty(u.shape)
    span = hi - lo
    inv_beta = 1.0 / beta
    three_halves = inv_beta == 1.5
    scale = np.exp(-log_alpha * inv_beta)
    for b in range(B):
        for i in range(F):
            for j in range(A):
                r = (1.0 - u[b, i, j]) / u[b, i, j]
                p = r * np.sqrt(r) if three_halves else r**inv_beta
                s = 1.0 / (1.0 + scale[i, j] * p)
                d = s * hi + (1.0 - s) * lo
                # branch-free body so the loop vectorizes
                inside = (d > 0.0) & (d < 1.0)
                z[b, i, j] = min(max(d, 0.0), 1.0)
                dz[b, i, j] = span * s * (1.0 - s) * inv_beta if inside else 0.0
    return z, dz


# ---------------------------------------------------------------------------
# gated linear layer with one gate sample per batch element
# ---------------------------------------------------------------------------


def gated_forward_np(theta, Xi, z):
    """pre[b, j] = sum_i theta[b, i] * Xi[i, j] * z[b, i, j]."""
    return np.einsum("bi,bij->bj", theta, Xi[None, :, :] * z, optimize=True)


@njit
def gated_forward_nb(theta, Xi, z):
    B, F = theta.shape
    A = Xi.shape[1]
    pre = np.zeros((B, A))
    for b in range(B):
        for i in range(F):
            t = theta[b, i]
            if t == 0.0:
                continue
            for j in range(A):
                pre[b, j] += t * Xi[i, j] * z[b, i, j]
    return pre


def gated_backward_np(theta, Xi, z, dz, gpre):
    """Gradients of a scalar loss w.r.t. ``Xi`` and ``log_alpha``.

    ``gpre`` is dL/dpre (B, A); ``dz`` is d(gate)/d(log_alpha) per sample.
    """
    w = theta[:, :, None] * gpre[:, None, :]
    gXi = np.einsum("bij,bij->ij", w, z, optimize=True)
    glog = np.einsum("bij,bij->ij", w, dz, optimize=True) * Xi
    return gXi, glog


@njit
def gated_backward_nb(theta, Xi, z, dz, gpre):
    B, F = theta.shape
    A = Xi.shape[1]
    gXi = np.zeros((F, A))
    gdz = np.zeros((F, A))
    for b in range(B):
        for i in range(F):
            t = theta[b, i]
            if t == 0.0:
                continue
            for j in range(A):
                w = t * gpre[b, j]
                gXi[i, j] += w * z[b, i, j]
                gdz[i, j] += w * dz[b, i, j]
    return gXi, gdz * Xi


if USE_NUMBA:
    poly_features = poly_features_nb
    hard_concrete = hard_concrete_nb
    gated_forward = gated_forward_nb
    gated_backward = gated_backward_nb
else:
    poly_features = poly_features_np
    hard_concrete = hard_concrete_np
    gated_forward = gated_forward_np
    gated_backward = gated_backward_np

BACKEND = "numba" if USE_NUMBA else "numpy"
