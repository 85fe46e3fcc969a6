"""Batched linear algebra on stacks of small complex matrices.

Every routine broadcasts over leading axes, so a whole lattice of r x r
matrices (shape ``(n, r, r)`` or ``(d, n, r, r)``) is processed in one call.
Metric-adapted operations take a Hermitian positive-definite ``H`` and work
with H-self-adjoint operators (``A* = H^{-1} A^dag H``), which stay
diagonalizable with real spectra even when not Hermitian as raw matrices.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import expm as _expm, logm as _logm
from scipy.optimize import linear_sum_assignment

Array = np.ndarray


def dagger(a: Array) -> Array:
    return np.conj(np.swapaxes(a, -1, -2))


def hermitize(a: Array) -> Array:
    return 0.5 * (a + dagger(a))


def frobenius(a: Array) -> Array:
    """Frobenius norm over the last two axes."""
    return np.sqrt(np.sum(np.abs(a) ** 2, axis=(-2, -1)))


def specnorm(a: Array) -> Array:
    """Spectral norm (largest singular value) over the last two axes."""
    return np.linalg.norm(a, ord=2, axis=(-2, -1))


def eye_like(a: Array) -> Array:
    r = a.shape[-1]
    return np.broadcast_to(np.eye(r, dtype=complex), a.shape).copy()


def trace(a: Array) -> Array:
    return np.einsum("...ii->...", a)


def commutator(a: Array, b: Array) -> Array:
    return a @ b - b @ a


def selfadjoint_part(a: Array, metric: Array) -> Array:
    """H-self-adjoint part 0.5 (A + H^{-1} A^dag H)."""
    return 0.5 * (a + np.linalg.solve(metric, dagger(a) @ metric))


def endo_inner(a: Array, b: Array, metric: Array) -> Array:
    """Real inner product Re tr(A B*) on endomorphisms, B* the metric adjoint."""
    return np.einsum("...ij,...ji->...", a, np.linalg.solve(metric, dagger(b) @ metric)).real


def endo_norm2(a: Array, metric: Array) -> Array:
    return np.maximum(endo_inner(a, a, metric), 0.0)


def tracefree(a: Array) -> Array:
    r = a.shape[-1]
    return a - (trace(a) / r)[..., None, None] * np.eye(r, dtype=complex)


def check_metric(h: Array, tol: float = 1e-12) -> None:
    """Validate Hermiticity and positive-definiteness of a metric field."""
    dev = frobenius(h - dagger(h))
    scale = frobenius(h)
    if np.any(dev > tol * np.maximum(scale, 1e-300)):
        raise ValueError("metric field is not Hermitian within tolerance")
    w = np.linalg.eigvalsh(hermitize(h))
    if np.any(w <= 0.0):
        raise ValueError("metric field is not positive definite")


def _eigh_build(w: Array, v: Array, f: Array) -> Array:
    """Assemble V diag(f) V^dag from eigh output."""
    return (v * f[..., None, :]) @ dagger(v)


def sqrt_pair(h: Array) -> tuple[Array, Array]:
    """(H^{1/2}, H^{-1/2}) for a Hermitian positive field."""
    w, v = np.linalg.eigh(h)
    if np.any(w <= 0.0):
        raise ValueError("field is not positive definite")
    s = np.sqrt(w)
    return _eigh_build(w, v, s), _eigh_build(w, v, 1.0 / s)


def metric_log_invsqrt(hx: Array, m: Array) -> tuple[Array, Array]:
    """log(P) and P^{-1/2} for P = Hx^{-1} M, Hx and M Hermitian positive.

    P is Hx-self-adjoint positive; functions of P are evaluated through the
    Hermitian similarity Hx^{1/2} P Hx^{-1/2}, which keeps the computation on
    eigh-stable ground.
    """
    a, ai = sqrt_pair(hx)
    s = hermitize(ai @ m @ ai)
    e, v = np.linalg.eigh(s)
    if np.any(e <= 0.0):
        raise ValueError("pulled-back metric is not positive definite")
    logp = ai @ _eigh_build(e, v, np.log(e)) @ a
    pmh = ai @ _eigh_build(e, v, e ** -0.5) @ a
    return logp, pmh


def rel_eigvals(k: Array, h: Array) -> Array:
    """Eigenvalues of h^{-1}... the relative endomorphism K^{-1}H (real, positive)."""
    _, ki = sqrt_pair(k)
    s = hermitize(ki @ h @ ki)
    return np.linalg.eigvalsh(s)


def exp_hsa(q: Array, metric: Array, scale: float | Array = 1.0) -> Array:
    """exp(scale * Q) for an H-self-adjoint Q, via the Hermitian similarity."""
    a, ai = sqrt_pair(metric)
    s = hermitize(a @ q @ ai)
    e, v = np.linalg.eigh(s)
    return ai @ _eigh_build(e, v, np.exp(scale * e)) @ a


def metric_exp_update(h: Array, q: Array, scale: float) -> Array:
    """H exp(scale * Q) for H-self-adjoint Q; Hermitian positive by construction.

    With A = H^{1/2} and S = A Q A^{-1} (Hermitian), the product equals
    A exp(scale S) A, manifestly positive for any step size.
    """
    a, ai = sqrt_pair(h)
    s = hermitize(a @ q @ ai)
    e, v = np.linalg.eigh(s)
    return hermitize(a @ _eigh_build(e, v, np.exp(scale * e)) @ a)


def log_hsa(s: Array, metric: Array) -> tuple[Array, Array, Array]:
    """Eigen data (eigvals, frame, frame_inv) of a metric-self-adjoint field.

    The frame columns are orthonormal for the metric; s = frame diag frame_inv.
    """
    a, ai = sqrt_pair(metric)
    herm = hermitize(a @ s @ ai)
    e, v = np.linalg.eigh(herm)
    frame = ai @ v
    frame_inv = dagger(v) @ a
    return e, frame, frame_inv


def principal_log(m: Array, tol: float = 1e-12) -> Array:
    """Principal matrix logarithm; rejects spectra touching the closed negative axis."""
    lam = np.linalg.eigvals(m)
    if np.any(np.abs(lam) < tol):
        raise ValueError("matrix is singular; no logarithm")
    bad = (lam.real <= 0.0) & (np.abs(lam.imag) <= tol * np.abs(lam))
    if np.any(bad):
        raise ValueError(
            "eigenvalue on the nonpositive real axis; supply an explicit logarithm branch"
        )
    out = _logm(np.asarray(m, dtype=complex))
    return np.asarray(out, dtype=complex)


def fractional_power(m: Array, t: float, log: Array | None = None) -> Array:
    lg = principal_log(m) if log is None else np.asarray(log, dtype=complex)
    return np.asarray(_expm(t * lg), dtype=complex)


def spectrum_distance(a: Array, b: Array) -> float:
    """Optimal-matching distance between the eigenvalue multisets of a and b."""
    la = np.linalg.eigvals(a)
    lb = np.linalg.eigvals(b)
    cost = np.abs(la[:, None] - lb[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


def kahan_sum(values: Array) -> float:
    """Compensated summation in index order."""
    total = 0.0
    comp = 0.0
    for x in np.asarray(values, dtype=float).ravel():
        y = x - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total
