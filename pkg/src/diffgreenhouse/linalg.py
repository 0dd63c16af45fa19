"""Matrix exponential propagation for constant-coefficient linear ODEs.

For ``dx/dt = A x + b`` with ``A`` and ``b`` frozen over a step ``h``::

    x(t + h) = e^{hA} x(t) + Q b,      Q = int_0^h e^{tau A} dtau

Both ``e^{hA}`` and ``Q`` are read off a single truncated Taylor exponential of
the doubled-dimension matrix ``Z = [[hA, I], [0, 0]]``.

All functions accept a leading batch of matrices, ``(..., n, n)``, and work on
plain arrays as well as on ``autodiff.Var`` values.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import matrix_balance

from . import autodiff as ad

TAYLOR_TOL = 1e-6
TAYLOR_MAX_TERMS = 10
# Per-substep bound on the balanced 1-norm of h*A in the auto substep policy.
SUBSTEP_NORM = 0.5


class NumericOverflowError(ad.NumericError):
    pass


def _as_stack(x):
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {x.shape}")
    return x.reshape((-1,) + x.shape[-2:]), x.shape[:-2]


def _taylor_adaptive(X, tol, max_terms):
    """Truncated series with the per-matrix stopping rule; returns (sum, n_terms)."""
    Xs, batch = _as_stack(X)
    m, n, _ = Xs.shape
    C = np.broadcast_to(np.eye(n), Xs.shape).copy()
    S = C.copy()
    active = np.ones(m, dtype=bool)
    counts = np.zeros(m, dtype=int)
    for j in range(1, max_terms + 1):
        C = (C @ Xs) / j
        S[active] += C[active]
        counts[active] = j
        if not np.all(np.isfinite(S)):
            raise NumericOverflowError(f"non-finite entry in Taylor term {j}")
        small = np.abs(C).max(axis=(1, 2)) < tol
        active &= ~small
        if not active.any():
            break
    return S.reshape(batch + (n, n)), counts.reshape(batch)


def _taylor_fixed(X, counts):
    """Truncated series with a prescribed number of terms per matrix."""
    Xs, batch = _as_stack(X)
    counts = np.asarray(counts).reshape(-1)
    n = Xs.shape[-1]
    C = np.broadcast_to(np.eye(n), Xs.shape).copy()
    S = C.copy()
    for j in range(1, int(counts.max(initial=0)) + 1):
        C = (C @ Xs) / j
        use = counts >= j
        S[use] += C[use]
    return S.reshape(batch + (n, n))


def _taylor_vjp(Xv, counts, G):
    # The top-right block of the same truncated series applied to
    # [[X^T, G], [0, X^T]] is the exact adjoint of the truncated series at X.
    n = Xv.shape[-1]
    Xt = np.swapaxes(Xv, -1, -2)
    M = np.zeros(Xv.shape[:-2] + (2 * n, 2 * n))
    M[..., :n, :n] = Xt
    M[..., n:, n:] = Xt
    M[..., :n, n:] = G
    return _taylor_fixed(M, counts)[..., :n, n:]


def expm_taylor(X, tol=TAYLOR_TOL, max_terms=TAYLOR_MAX_TERMS):
    """Matrix exponential by the recursive Taylor series.

    Terms ``C_j = C_{j-1} X / j`` are accumulated until the largest entry of a
    term falls below ``tol`` (that term is still added) or ``max_terms`` terms
    have been added.  The term count is a constant of the forward pass; the
    gradient is that of the truncated series actually evaluated.
    """
    if tol <= 0 or max_terms < 1:
        raise ValueError("tol must be > 0 and max_terms >= 1")
    Xv = ad.value(X)
    S, counts = _taylor_adaptive(Xv, tol, max_terms)
    return ad.custom("expm_taylor", S, [(X, lambda g: _taylor_vjp(Xv, counts, g))])


def expm_reference(X):
    """High-accuracy matrix exponential by scaling and squaring (test oracle).

    Not differentiable.
    """
    Xs, batch = _as_stack(X)
    out = np.empty_like(Xs)
    eps = np.finfo(float).eps
    for k, M in enumerate(Xs):
        norm = np.abs(M).max()
        s = max(0, math.ceil(math.log2(norm / 2.0**-4))) if norm > 0 else 0
        Y = M / 2.0**s
        n = Y.shape[0]
        term = np.eye(n)
        total = np.eye(n)
        for j in range(1, 40):
            term = term @ Y / j
            total = total + term
            if np.abs(term).max() <= eps * np.abs(total).max():
                break
        for _ in range(s):
            total = total @ total
        if not np.all(np.isfinite(total)):
            raise NumericOverflowError("matrix exponential overflowed")
        out[k] = total
    return out.reshape(batch + Xs.shape[-2:])


def build_augmented(A, h):
    """``[[hA, I], [0, 0]]``, twice the order of ``A``.

    ``h`` may be a scalar or an array broadcastable to the batch shape of ``A``.
    """
    n = ad.value(A).shape[-1]
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise ValueError("step length must be positive")
    hA = A * h[..., None, None]
    Z = ad.embed(hA, (2 * n, 2 * n), (0, 0))
    eye = np.zeros((2 * n, 2 * n))
    eye[:n, n:] = np.eye(n)
    return Z + eye


def expm_with_integral(A, h, tol=TAYLOR_TOL, max_terms=TAYLOR_MAX_TERMS):
    """Return ``(Phi, Q)`` with ``Phi = e^{hA}`` and ``Q = int_0^h e^{tau A} dtau``."""
    n = ad.value(A).shape[-1]
    h = np.asarray(h, dtype=float)
    E = expm_taylor(build_augmented(A, h), tol=tol, max_terms=max_terms)
    Phi = E[..., :n, :n]
    Q = E[..., :n, n:] * h[..., None, None]
    return Phi, Q


def balanced_norm(M):
    """1-norm of ``M`` after diagonal balancing, per matrix in the stack.

    Truncated Taylor series commute with diagonal similarity, so this is the
    norm that governs truncation error independently of channel units.
    """
    Ms, batch = _as_stack(M)
    out = np.empty(len(Ms))
    for k, m in enumerate(Ms):
        if not np.all(np.isfinite(m)):
            raise NumericOverflowError("non-finite system matrix")
        bal = matrix_balance(m, permute=False, separate=False)[0]
        out[k] = np.abs(bal).sum(axis=0).max()
    return out.reshape(batch)


def substeps_for(hA, substeps=1, max_norm=SUBSTEP_NORM):
    """Smallest ``substeps * 2**k`` bringing the balanced norm of each ``hA/s`` to ``max_norm``.

    Doubling keeps the step arithmetic exact, so ``s`` substeps over ``h``
    equal ``s/2`` substeps over each half of ``h`` bit for bit.
    """
    norm = balanced_norm(hA)
    s = np.full(norm.shape, int(substeps), dtype=int)
    with np.errstate(divide="ignore"):
        k = np.ceil(np.log2(np.maximum(norm / (s * max_norm), 1.0)))
    return (s * 2 ** k.astype(int)).astype(int)


def _iterate_affine(Phi, c, x, s):
    """``x <- Phi x + c`` repeated ``s`` times (``s`` per batch element)."""
    Pv, cv, xv = ad.value(Phi), ad.value(c), ad.value(x)
    s = np.broadcast_to(np.asarray(s), xv.shape[:-1])
    steps = int(s.max(initial=0))
    xs = [xv]
    cur = xv
    for j in range(steps):
        nxt = np.einsum("...ij,...j->...i", Pv, cur) + cv
        cur = np.where((j < s)[..., None], nxt, cur)
        xs.append(cur)

    def backward(g):
        gP = np.zeros(np.broadcast_shapes(Pv.shape, xv.shape[:-1] + Pv.shape[-2:]))
        gc = np.zeros(np.broadcast_shapes(cv.shape, xv.shape))
        gx = g
        for j in range(steps - 1, -1, -1):
            live = (j < s)[..., None]
            gj = np.where(live, gx, 0.0)
            gP = gP + gj[..., :, None] * xs[j][..., None, :]
            gc = gc + gj
            gx = np.where(live, np.einsum("...ij,...i->...j", Pv, gx), gx)
        return gP, gc, gx

    # The tape calls the three operand VJPs back to back with the same adjoint.
    cache = {}

    def grads(g):
        if cache.get("g") is not g:
            cache["g"] = g
            cache["val"] = backward(g)
        return cache["val"]

    return ad.custom(
        "iterate_affine",
        cur,
        [
            (Phi, lambda g: ad._unbroadcast(grads(g)[0], Pv.shape)),
            (c, lambda g: ad._unbroadcast(grads(g)[1], cv.shape)),
            (x, lambda g: ad._unbroadcast(grads(g)[2], xv.shape)),
        ],
    )


def ode_step(A, b, x, h, substeps=1, policy="auto", tol=TAYLOR_TOL, max_terms=TAYLOR_MAX_TERMS):
    """Advance ``dx/dt = A x + b`` by ``h`` with ``A`` and ``b`` held constant.

    The interval is split into equal substeps, each applying
    ``x <- Phi x + Q b``.  With ``policy="auto"`` the substep count is raised
    (by doublings) until the balanced norm of ``(h/s) A`` is at most 0.5;
    ``policy="literal"`` uses exactly ``substeps``.
    """
    Av, bv, xv = ad.value(A), ad.value(b), ad.value(x)
    n = Av.shape[-1]
    if Av.shape[-2:] != (n, n) or bv.shape[-1] != n or xv.shape[-1] != n:
        raise ValueError(
            f"dimension mismatch: A {Av.shape}, b {bv.shape}, x {xv.shape}"
        )
    if h <= 0 or substeps < 1:
        raise ValueError("h must be > 0 and substeps >= 1")
    batch = np.broadcast_shapes(Av.shape[:-2], bv.shape[:-1], xv.shape[:-1])
    if policy == "auto":
        s = substeps_for(np.broadcast_to(Av * h, batch + (n, n)), substeps)
    elif policy == "literal":
        s = np.full(batch, int(substeps), dtype=int)
    else:
        raise ValueError(f"unknown substep policy {policy!r}")
    Phi, Q = expm_with_integral(A, h / s, tol=tol, max_terms=max_terms)
    c = ad.matvec(Q, b)
    return _iterate_affine(Phi, c, x, s)
