"""Independent reference solutions: closed forms and a brute-force energy gradient.

These routines deliberately avoid the production operator assembly. The
brute-force gradient differentiates the scalar edge energy numerically and
maps the result back through the metric pairing; agreement with the closed
form tension pins every sign and factor convention in the package (the flow
must be the descent direction of the energy).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg as la
from .bundle import FlatConnection, energy
from .mesh import LatticeDomain

Array = np.ndarray


@dataclass(frozen=True)
class CircleRankOneSolution:
    """Rank-one harmonic data on a circle of length L with monodromy modulus m.

    In the flat gauge (trivial transports with the monodromy on one seam edge)
    the harmonic metric is the equivariant exponential profile
    ``H(x) = exp(2 log(m) x / L)``; its logarithmic derivative is constant, so
    ``psi = -log(m)/L`` on every edge and the fundamental-loop period of
    ``tr psi`` equals ``-log(m)``.
    """

    modulus: float
    length: float

    @property
    def psi_coefficient(self) -> float:
        return -np.log(self.modulus) / self.length

    @property
    def alpha1_period(self) -> float:
        return -np.log(self.modulus)

    def profile(self, x: Array) -> Array:
        return np.exp(2.0 * np.log(self.modulus) * np.asarray(x) / self.length)


def circle_harmonic_exact(monodromy: Array, length: float, n_sites: int) -> Array:
    """Harmonic metric for a circle connection that spreads ``monodromy`` evenly.

    Diagonalize M = P diag(mu_j) P^{-1}. In the eigenframe the problem is a
    direct sum of rank-one equations whose equivariant solutions are
    exponential in the covering coordinate; expressed in the evenly-spread
    lattice gauge the accumulated transports cancel the exponentials exactly
    and the metric becomes the constant field (P P^dag)^{-1}, normalized here
    to unit determinant. Non-diagonalizable monodromies are rejected: they
    admit no harmonic metric.
    """
    m = np.asarray(monodromy, dtype=complex)
    r = m.shape[0]
    if m.shape != (r, r):
        raise ValueError("monodromy must be square")
    lam, p = np.linalg.eig(m)
    if np.any(np.abs(lam) < 1e-14):
        raise ValueError("monodromy is singular")
    recon = p @ np.diag(lam) @ np.linalg.inv(p)
    if (
        la.specnorm(recon - m) > 1e-8 * max(float(la.specnorm(m)), 1.0)
        or np.linalg.cond(p) > 1e8
    ):
        raise ValueError("monodromy is not diagonalizable; no harmonic metric exists")
    h0 = np.linalg.inv(p @ la.dagger(p))
    h0 = la.hermitize(h0 / np.linalg.det(h0) ** (1.0 / r))
    return np.broadcast_to(h0, (n_sites, r, r)).copy()


def circle_rank1_degree(modulus: float, length: float) -> float:
    """Analytic degree of a rank-one circle bundle: zero.

    The degree integrand is a pure divergence of ``tr psi`` and the circle is
    closed, so the integral vanishes for every metric and every monodromy
    modulus; the value is returned as an explicit oracle constant.
    """
    del modulus, length
    return 0.0


def _hermitian_basis(r: int) -> list[Array]:
    basis: list[Array] = []
    for i in range(r):
        e = np.zeros((r, r), dtype=complex)
        e[i, i] = 1.0
        basis.append(e)
    for i in range(r):
        for j in range(i + 1, r):
            e = np.zeros((r, r), dtype=complex)
            e[i, j] = e[j, i] = 1.0
            basis.append(e)
            f = np.zeros((r, r), dtype=complex)
            f[i, j] = 1.0j
            f[j, i] = -1.0j
            basis.append(f)
    return basis


def brute_force_tension(conn: FlatConnection, metric: Array, step: float = 1e-5) -> Array:
    """Central finite-difference gradient of the edge energy, site by site.

    For each site and each Hermitian perturbation direction A the derivative
    of the energy along ``H -> H + eps A`` is measured, then the collection is
    mapped back through the pairing ``dE = -vol_x Re tr(v Q)`` with
    ``v = H^{-1} A`` to recover the H-self-adjoint gradient field Q. Instances
    are limited to sites * rank^2 <= 5000 degrees of freedom.
    """
    dom: LatticeDomain = conn.domain
    h_field = np.asarray(metric, dtype=complex)
    r = conn.rank
    if dom.n_sites * r * r > 5000:
        raise ValueError("instance too large for brute-force differentiation")
    basis = _hermitian_basis(r)
    nb = len(basis)
    out = np.zeros((dom.n_sites, r, r), dtype=complex)
    for x in range(dom.n_sites):
        derivs = np.zeros(nb)
        for k, a_dir in enumerate(basis):
            hp = h_field.copy()
            hp[x] = h_field[x] + step * a_dir
            hm = h_field.copy()
            hm[x] = h_field[x] - step * a_dir
            derivs[k] = (energy(conn, hp) - energy(conn, hm)) / (2.0 * step)
        v_dirs = [np.linalg.solve(h_field[x], a_dir) for a_dir in basis]
        gram = np.array(
            [[np.trace(vi @ vj).real for vj in v_dirs] for vi in v_dirs]
        )
        coeff = np.linalg.solve(gram, -derivs / dom.volume[x])
        q = sum(c * v for c, v in zip(coeff, v_dirs))
        out[x] = la.selfadjoint_part(q[None], h_field[x][None])[0]
    return out
