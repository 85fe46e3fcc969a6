"""Shared builders for the test suite."""
from __future__ import annotations

import numpy as np
from scipy.linalg import expm

import bundleflow as bf
from bundleflow.config import smooth_random_metric

TWO_PI = 2.0 * np.pi


def identity_metric(n: int, r: int) -> np.ndarray:
    return np.broadcast_to(np.eye(r, dtype=complex), (n, r, r)).copy()


def diag_metric(values) -> np.ndarray:
    """Stack a per-site list of diagonal entries into a metric field."""
    values = np.asarray(values, dtype=float)
    n, r = values.shape
    out = np.zeros((n, r, r), dtype=complex)
    for j in range(r):
        out[:, j, j] = values[:, j]
    return out


def circle_diag(n: int = 64, length: float = TWO_PI, mu: float = 2.0):
    dom = bf.build_domain("circle", n, length)
    conn = bf.from_monodromy(dom, [np.diag([mu, 1.0 / mu]).astype(complex)])
    return dom, conn


def torus_diag(n: int = 16, length: float = TWO_PI, mus=(2.0, 3.0)):
    dom = bf.build_domain("torus", (n, n), (length, length))
    gens = [np.diag([m, 1.0 / m]).astype(complex) for m in mus]
    conn = bf.from_monodromy(dom, gens)
    return dom, conn


def random_connection(dom, rank: int, seed: int, scale: float = 0.6):
    """Random flat connection: one well-conditioned generator per loop."""
    rng = np.random.default_rng(seed)
    n_loops = sum(dom.periodic)
    gens = []
    if n_loops >= 1:
        z = rng.normal(size=(rank, rank)) + 1j * rng.normal(size=(rank, rank))
        gens.append(expm(scale * z))
    if n_loops == 2:
        # second generator commuting with the first: polynomial in it
        g0 = gens[0]
        coef = rng.normal(size=2)
        gens.append(expm(0.3 * (coef[0] * g0 + coef[1] * np.linalg.inv(g0))))
    return bf.from_monodromy(dom, gens, rank=rank)


def random_metric(dom, rank: int, seed: int, amplitude: float = 0.35) -> np.ndarray:
    return smooth_random_metric(dom, rank, seed, amplitude)


def rough_random_metric(n: int, r: int, seed: int, amplitude: float = 0.4) -> np.ndarray:
    """Per-site independent positive metric (not smooth); for algebraic checks."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, r, r)) + 1j * rng.normal(size=(n, r, r))
    herm = 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))
    w, v = np.linalg.eigh(amplitude * herm)
    return (v * np.exp(w)[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def random_gauge(n: int, r: int, seed: int, scale: float = 0.3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n, r, r)) + 1j * rng.normal(size=(n, r, r))
    return np.array([expm(scale * m) for m in z])


def seam_gauge_circle(n: int, length: float, mu: float):
    """Circle connection with the whole monodromy on the wrap edge."""
    dom = bf.build_domain("circle", n, length)
    transports = np.broadcast_to(np.eye(1, dtype=complex), (1, n, 1, 1)).copy()
    transports[0, n - 1, 0, 0] = mu
    loops = (bf.LoopSpec(axis=0, base=0, generator=np.array([[mu]], dtype=complex)),)
    return dom, bf.connection_from_transports(dom, transports, loops)
