"""Flat bundles as per-edge parallel transports, and their metric calculus.

Conventions
-----------
A transport ``U_e`` on the forward edge ``e = (x -> x+e_a)`` maps the fiber at
``x`` to the fiber at ``x+e_a``: a section is parallel when ``v(y) = U_e v(x)``.
One-forms store one matrix per forward edge, attached to the tail site; the
value on the reverse edge is ``-U_e . value . U_e^{-1}`` (transport
antisymmetry), which the splitting one-form below satisfies identically.

Metric splitting
----------------
For a fiber metric ``H`` the connection decomposes into a metric-preserving
part and an H-self-adjoint one-form. On an edge the whole content sits in the
positive, H(x)-self-adjoint comparison operator ``P_e = H(x)^{-1} U_e^dag H(y)
U_e``:

``psi_H(e) = -log(P_e) / (2 h)``,   ``V_e = U_e exp(+h psi_H(e)) = U_e P_e^{-1/2}``.

``V_e`` is an exact isometry from (fiber_x, H(x)) to (fiber_y, H(y)) and
``U_e = V_e exp(-h psi_H(e))`` exactly. The codifferential is the exact
adjoint of the V-covariant difference under the quadrature-weighted pairings,
so the tension field below is the exact gradient of the edge energy
``E(H) = sum_e w_e |psi_H(e)|^2`` under the metric pairing
``<v, Q> = sum_x vol_x Re tr(v Q)``; the heat flow defined on top of it is a
genuine discrete gradient flow.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import null_space

from . import linalg as la
from .mesh import LatticeDomain

Array = np.ndarray


@dataclass(frozen=True)
class LoopSpec:
    """A designated fundamental loop: one full cycle along a periodic axis."""

    axis: int
    base: int
    generator: Array


@dataclass(frozen=True)
class FlatConnection:
    domain: LatticeDomain
    rank: int
    transport: Array          # (dim, n, r, r); identity rows where no forward edge
    transport_inv: Array
    loops: tuple[LoopSpec, ...] = field(default_factory=tuple)

    def edge_sites(self, axis: int) -> tuple[Array, Array]:
        """(tails, heads) of the forward edges along one axis."""
        tails = np.flatnonzero(self.domain.neighbors[axis, 0] >= 0)
        return tails, self.domain.neighbors[axis, 0][tails]


def connection_from_transports(
    domain: LatticeDomain, transports: Array, loops: tuple[LoopSpec, ...] = ()
) -> FlatConnection:
    t = np.asarray(transports, dtype=complex)
    r = t.shape[-1]
    if t.shape != (domain.dim, domain.n_sites, r, r):
        raise ValueError("transport array shape does not match the domain")
    return FlatConnection(domain, r, t, np.linalg.inv(t), tuple(loops))


def from_monodromy(
    domain: LatticeDomain,
    generators: list[Array] | tuple[Array, ...],
    logs: list[Array] | None = None,
    rank: int | None = None,
) -> FlatConnection:
    """Flat connection spreading each loop generator evenly along its axis.

    One generator per periodic axis (circle and annulus: 1, torus: 2, bounded
    domains: 0, where ``rank`` must be given explicitly). Torus generators
    must commute, otherwise no flat connection has those monodromies.
    Generators whose spectrum meets the nonpositive real axis need an
    explicit logarithm branch through ``logs``.
    """
    periodic_axes = [a for a in range(domain.dim) if domain.periodic[a]]
    gens = [np.asarray(g, dtype=complex) for g in generators]
    if len(gens) != len(periodic_axes):
        raise ValueError(
            f"domain kind {domain.kind!r} needs {len(periodic_axes)} generator(s), got {len(gens)}"
        )
    if not gens:
        if rank is None:
            raise ValueError("rank is required when the domain has no loops")
        r = int(rank)
    else:
        r = gens[0].shape[0]
        if rank is not None and rank != r:
            raise ValueError("rank does not match the generators")
    for g in gens:
        if g.shape != (r, r):
            raise ValueError("generators must be square matrices of equal rank")
        if abs(np.linalg.det(g)) < 1e-14:
            raise ValueError("generator is singular")
    if len(gens) == 2:
        comm = gens[0] @ gens[1] - gens[1] @ gens[0]
        scale = la.frobenius(gens[0]) * la.frobenius(gens[1])
        if la.frobenius(comm) > 1e-10 * max(scale, 1e-300):
            raise ValueError("torus generators do not commute; flatness is impossible")

    transports = np.broadcast_to(
        np.eye(r, dtype=complex), (domain.dim, domain.n_sites, r, r)
    ).copy()
    loops: list[LoopSpec] = []
    for k, axis in enumerate(periodic_axes):
        lg = None if logs is None else logs[k]
        frac = la.fractional_power(gens[k], domain.spacings[axis] / domain.lengths[axis], log=lg)
        closure = np.linalg.matrix_power(frac, domain.sites_per_axis[axis])
        if la.specnorm(closure - gens[k]) > 1e-10 * max(float(la.specnorm(gens[k])), 1.0):
            raise ValueError("per-edge transport does not close up to the generator")
        transports[axis] = frac
        loops.append(LoopSpec(axis=axis, base=0, generator=gens[k]))
    return connection_from_transports(domain, transports, tuple(loops))


def loop_holonomy(conn: FlatConnection, axis: int, base: int) -> Array:
    """Holonomy of the full axis cycle through ``base`` (path-ordered product)."""
    dom = conn.domain
    hol = np.eye(conn.rank, dtype=complex)
    site = base
    for _ in range(dom.sites_per_axis[axis]):
        hol = conn.transport[axis, site] @ hol
        site = int(dom.neighbors[axis, 0, site])
    if site != base:
        raise ValueError("axis is not periodic; no loop")
    return hol


def plaquette_holonomies(domain: LatticeDomain, transports: Array) -> tuple[Array, Array]:
    """(sites, holonomies) for every plaquette with base at its lower-left site."""
    if domain.dim != 2:
        return np.zeros(0, dtype=int), np.zeros((0, transports.shape[-1], transports.shape[-1]))
    nx = domain.neighbors[0, 0]
    ny = domain.neighbors[1, 0]
    base = np.flatnonzero((nx >= 0) & (ny >= 0))
    base = base[(ny[nx[base]] >= 0) & (nx[ny[base]] >= 0)]
    ux = transports[0, base]
    uy_right = transports[1, nx[base]]
    ux_top = transports[0, ny[base]]
    uy = transports[1, base]
    hol = np.linalg.inv(uy) @ np.linalg.inv(ux_top) @ uy_right @ ux
    return base, hol


def flatness_residual(conn: FlatConnection) -> float:
    """Deviation of the connection from flatness with the prescribed monodromies.

    Plaquette holonomies are compared to the identity in spectral norm; the
    designated axis loops are compared to their generators through the
    eigenvalue-multiset distance, which is insensitive to the base point and
    to gauge.
    """
    worst = 0.0
    _, hol = plaquette_holonomies(conn.domain, conn.transport)
    if hol.size:
        eye = np.eye(conn.rank, dtype=complex)
        worst = float(np.max(la.specnorm(hol - eye)))
    for loop in conn.loops:
        h = loop_holonomy(conn, loop.axis, loop.base)
        worst = max(worst, la.spectrum_distance(h, loop.generator))
    return worst


def gauge_transform(conn: FlatConnection, gauge: Array) -> FlatConnection:
    """New connection in the frame ``v' = g^{-1} v``; transports g(y)^{-1} U g(x)."""
    g = np.asarray(gauge, dtype=complex)
    new = conn.transport.copy()
    for a in range(conn.domain.dim):
        tails, heads = conn.edge_sites(a)
        new[a, tails] = np.linalg.solve(g[heads], conn.transport[a, tails] @ g[tails])
    return replace(conn, transport=new, transport_inv=np.linalg.inv(new))


def gauge_transform_metric(metric: Array, gauge: Array) -> Array:
    g = np.asarray(gauge, dtype=complex)
    return la.dagger(g) @ metric @ g


def covariant_d(conn: FlatConnection, field_values: Array) -> Array:
    """First-order covariant difference of a site field, one value per forward edge.

    Endomorphism fields (n, r, r) transform by the adjoint action; section
    fields (n, r) by the plain action. Edges that do not exist hold zeros.
    """
    dom = conn.domain
    f = np.asarray(field_values, dtype=complex)
    endo = f.ndim == 3
    out = np.zeros((dom.dim,) + f.shape, dtype=complex)
    for a in range(dom.dim):
        tails, heads = conn.edge_sites(a)
        u = conn.transport[a, tails]
        uinv = conn.transport_inv[a, tails]
        if endo:
            out[a, tails] = (uinv @ f[heads] @ u - f[tails]) / dom.spacings[a]
        else:
            out[a, tails] = (
                np.einsum("eij,ej->ei", uinv, f[heads]) - f[tails]
            ) / dom.spacings[a]
    return out


def reverse_edge_values(conn: FlatConnection, omega: Array, transports: Array | None = None) -> Array:
    """Values of a one-form on the reverse edges, by transport antisymmetry.

    Entry ``[a, x]`` is the value on the directed edge ``x -> x - e_a``
    (attached at x), i.e. ``-U . omega[a, x-e_a] . U^{-1}`` transported from
    the left neighbour; zero where that edge does not exist. One-forms whose
    natural parallelism is the metric connection (covariant derivatives of
    site fields taken along the metric transports) should pass those
    transports instead of the default flat ones.
    """
    dom = conn.domain
    if transports is None:
        transports = conn.transport
    endo = omega.ndim == 4
    out = np.zeros_like(omega)
    for a in range(dom.dim):
        lefts = dom.neighbors[a, 1]
        sites = np.flatnonzero(lefts >= 0)
        src = lefts[sites]
        u = transports[a, src]
        if endo:
            out[a, sites] = -(u @ omega[a, src] @ np.linalg.inv(u))
        else:
            out[a, sites] = -np.einsum("eij,ej->ei", u, omega[a, src])
    return out


def centered_components(
    conn: FlatConnection, omega: Array, transports: Array | None = None
) -> Array:
    """Site-centered axis components of a one-form, second-order accurate.

    Averages the forward-edge value with the pulled-back left-edge value;
    falls back to the single available side next to a boundary.
    """
    dom = conn.domain
    rev = reverse_edge_values(conn, omega, transports)
    out = np.zeros_like(omega)
    for a in range(dom.dim):
        has_fwd = dom.neighbors[a, 0] >= 0
        has_bwd = dom.neighbors[a, 1] >= 0
        both = has_fwd & has_bwd
        out[a, both] = 0.5 * (omega[a, both] - rev[a, both])
        only_f = has_fwd & ~has_bwd
        out[a, only_f] = omega[a, only_f]
        only_b = ~has_fwd & has_bwd
        out[a, only_b] = -rev[a, only_b]
    return out


@dataclass(frozen=True)
class SplitMetric:
    """Metric splitting of a flat connection: one-form psi and metric transport."""

    psi: Array          # (dim, n, r, r) forward-edge values, exactly H-self-adjoint
    transport: Array    # (dim, n, r, r) exact H-isometries V_e = U_e exp(+h psi)


def split_metric(conn: FlatConnection, metric: Array) -> SplitMetric:
    dom = conn.domain
    la.check_metric(metric)
    h_field = np.asarray(metric, dtype=complex)
    psi = np.zeros_like(conn.transport)
    vt = conn.transport.copy()
    for a in range(dom.dim):
        tails, heads = conn.edge_sites(a)
        u = conn.transport[a, tails]
        pulled = la.dagger(u) @ h_field[heads] @ u
        logp, pmh = la.metric_log_invsqrt(h_field[tails], pulled)
        psi[a, tails] = -logp / (2.0 * dom.spacings[a])
        vt[a, tails] = u @ pmh
    return SplitMetric(psi=psi, transport=vt)


def psi_centered(conn: FlatConnection, metric: Array, sm: SplitMetric | None = None) -> Array:
    """Site-centered components of the splitting one-form."""
    if sm is None:
        sm = split_metric(conn, metric)
    return centered_components(conn, sm.psi)


def energy(conn: FlatConnection, metric: Array, sm: SplitMetric | None = None) -> float:
    """Edge energy sum_e w_e |psi_H(e)|^2, the flow's Lyapunov functional."""
    if sm is None:
        sm = split_metric(conn, metric)
    dom = conn.domain
    total = 0.0
    for a in range(dom.dim):
        dens = np.einsum("nij,nji->n", sm.psi[a], sm.psi[a]).real
        total += float(np.sum(dom.edge_weight[a] * dom.metric_weight[a] * dens))
    return total


def codifferential(
    conn: FlatConnection,
    metric: Array,
    omega: Array,
    transports: Array | None = None,
) -> Array:
    """Exact adjoint of the metric covariant difference on one-forms.

    Defined so that ``<D_H sigma, omega> = <sigma, codifferential(omega)>``
    holds identically under the weighted pairings (on closed domains for all
    sigma; on bounded domains for sigma supported away from the boundary),
    with ``D_H`` the covariant difference along the metric transports.
    """
    dom = conn.domain
    if transports is None:
        transports = split_metric(conn, metric).transport
    out = np.zeros_like(np.asarray(metric, dtype=complex))
    for a in range(dom.dim):
        tails, heads = conn.edge_sites(a)
        w = (dom.edge_weight[a, tails] * dom.metric_weight[a, tails] / dom.spacings[a])
        v = transports[a, tails]
        pushed = v @ omega[a, tails] @ np.linalg.inv(v)
        np.add.at(out, heads, w[:, None, None] * pushed)
        np.add.at(out, tails, -w[:, None, None] * omega[a, tails])
    return out / dom.volume[:, None, None]


def tension(
    conn: FlatConnection,
    metric: Array,
    mode: str = "direct",
    reference: Array | None = None,
) -> Array:
    """Gradient of the edge energy under the metric pairing (the flow's drive).

    ``direct`` applies the codifferential to the splitting one-form; the
    result is exactly the energy gradient and exactly H-self-adjoint.
    ``via_reference`` rebuilds the same field from a reference metric K and
    the relative endomorphism h = K^{-1}H; the two agree to second order in
    the spacing on smooth data.
    """
    if mode == "direct":
        sm = split_metric(conn, metric)
        t = codifferential(conn, metric, sm.psi, transports=sm.transport)
        return la.selfadjoint_part(t, metric)
    if mode != "via_reference":
        raise ValueError(f"unknown tension mode {mode!r}")
    if reference is None:
        raise ValueError("via_reference mode needs a reference metric")
    k_field = np.asarray(reference, dtype=complex)
    la.check_metric(k_field)
    dom = conn.domain
    sm_k = split_metric(conn, k_field)
    t_k = la.selfadjoint_part(codifferential(conn, k_field, sm_k.psi, sm_k.transport), k_field)
    h_rel = np.linalg.solve(k_field, np.asarray(metric, dtype=complex))

    # delta_K h on edges: metric covariant difference minus the psi_K commutator.
    # Non-derivative factors are evaluated at the edge midpoint (mean of the
    # tail value and the pulled-back head value), keeping every edge value a
    # second-order midpoint sample.
    omega = np.zeros_like(sm_k.psi)
    for a in range(dom.dim):
        tails, heads = conn.edge_sites(a)
        v = sm_k.transport[a, tails]
        pulled = np.linalg.inv(v) @ h_rel[heads] @ v
        dkh = (pulled - h_rel[tails]) / dom.spacings[a]
        h_mid = 0.5 * (pulled + h_rel[tails])
        delta = dkh - la.commutator(sm_k.psi[a, tails], h_mid)
        omega[a, tails] = np.linalg.solve(h_mid, delta)
    correction = codifferential(conn, k_field, omega, transports=sm_k.transport)
    omega_c = centered_components(conn, omega, transports=sm_k.transport)
    psi_c = centered_components(conn, sm_k.psi)
    bracket = np.zeros_like(t_k)
    for a in range(dom.dim):
        bracket += la.commutator(omega_c[a], psi_c[a]) * dom.metric_weight[a][:, None, None]
    t = t_k - 0.5 * correction - 0.5 * bracket
    return la.selfadjoint_part(t, metric)


def delta_operator(
    conn: FlatConnection,
    metric: Array,
    values: Array,
    sm: SplitMetric | None = None,
) -> Array:
    """Difference operator (metric covariant derivative minus psi action).

    Edge values are second-order midpoint samples: the psi action is applied
    to the mean of the tail value and the pulled-back head value. Section
    fields (n, r) see the plain action, endomorphism fields (n, r, r) the
    commutator.
    """
    dom = conn.domain
    if sm is None:
        sm = split_metric(conn, metric)
    f = np.asarray(values, dtype=complex)
    endo = f.ndim == 3
    out = np.zeros((dom.dim,) + f.shape, dtype=complex)
    for a in range(dom.dim):
        tails, heads = conn.edge_sites(a)
        v = sm.transport[a, tails]
        vinv = np.linalg.inv(v)
        if endo:
            pulled = vinv @ f[heads] @ v
            mid = 0.5 * (pulled + f[tails])
            out[a, tails] = (pulled - f[tails]) / dom.spacings[a] - la.commutator(
                sm.psi[a, tails], mid
            )
        else:
            pulled = np.einsum("eij,ej->ei", vinv, f[heads])
            mid = 0.5 * (pulled + f[tails])
            out[a, tails] = (pulled - f[tails]) / dom.spacings[a] - np.einsum(
                "eij,ej->ei", sm.psi[a, tails], mid
            )
    return out


def section_derivative(
    conn: FlatConnection,
    metric: Array,
    values: Array,
    use_metric_connection: bool = True,
) -> Array:
    """Covariant difference of a section field along the metric transports."""
    if not use_metric_connection:
        return covariant_d(conn, values)
    sm = split_metric(conn, metric)
    dom = conn.domain
    f = np.asarray(values, dtype=complex)
    endo = f.ndim == 3
    out = np.zeros((dom.dim,) + f.shape, dtype=complex)
    for a in range(dom.dim):
        tails, heads = conn.edge_sites(a)
        v = sm.transport[a, tails]
        vinv = np.linalg.inv(v)
        if endo:
            out[a, tails] = (vinv @ f[heads] @ v - f[tails]) / dom.spacings[a]
        else:
            out[a, tails] = (np.einsum("eij,ej->ei", vinv, f[heads]) - f[tails]) / dom.spacings[a]
    return out


# ---------------------------------------------------------------------------
# invariant sub-bundles


@dataclass(frozen=True)
class SubBundleSpec:
    projection: Array            # (n, r, r), idempotent, self-adjoint for the stated metric
    rank: int
    invariance_residual: float
    base_basis: Array            # (r, k) basis of the subspace at the base site


def _orth(basis: Array) -> Array:
    q, _ = np.linalg.qr(basis)
    return q


def _joint_invariant_spaces(mats: list[Array], r: int, tol: float = 1e-8) -> list[Array]:
    """Joint eigen-type invariant subspaces of a commuting family (geometric parts)."""
    spaces = [np.eye(r, dtype=complex)]
    for m in mats:
        refined: list[Array] = []
        for b in spaces:
            restricted = la.dagger(b) @ m @ b
            # Valid restriction only when the space is m-invariant; the joint
            # family is assumed commuting so this holds for previous factors.
            lam = np.linalg.eigvals(restricted)
            clusters: list[list[complex]] = []
            for ev in lam:
                for c in clusters:
                    if abs(ev - c[0]) <= tol * (1.0 + abs(ev)):
                        c.append(ev)
                        break
                else:
                    clusters.append([ev])
            for c in clusters:
                mean = np.mean(c)
                ns = null_space(
                    restricted - mean * np.eye(b.shape[1]), rcond=max(tol, 1e-10)
                )
                if ns.shape[1] == 0:
                    # defective eigenvalue with geometric space resolved at looser scale
                    ns = null_space(restricted - mean * np.eye(b.shape[1]), rcond=1e-6)
                if ns.shape[1] > 0:
                    refined.append(_orth(b @ ns))
        spaces = refined if refined else spaces
    return spaces


def _dedupe(bases: list[Array], tol: float = 1e-8) -> list[Array]:
    kept: list[Array] = []
    for b in bases:
        p = b @ la.dagger(b)
        if not any(
            b.shape[1] == k.shape[1] and la.frobenius(p - k @ la.dagger(k)) < tol for k in kept
        ):
            kept.append(b)
    return kept


def invariant_subbundles(
    conn: FlatConnection,
    reference: Array,
    candidates: list[Array] | None = None,
    tol: float = 1e-8,
) -> list[SubBundleSpec]:
    """Enumerate invariant sub-bundles as reference-orthogonal projection fields.

    Without candidates the holonomy generators' common invariant subspaces are
    enumerated exhaustively for rank <= 3 (joint eigenspaces and their direct
    sums; inside a degenerate joint eigenspace only the space itself is
    returned as the canonical representative). Candidate subspaces, one
    ``(r, k)`` basis each at the base site, may be supplied for any rank.
    Each spec is extended over the lattice by parallel transport from the base
    site and reports its invariance residual.
    """
    r = conn.rank
    dom = conn.domain
    if candidates is None:
        if r > 3:
            raise ValueError("exhaustive search is limited to rank <= 3; supply candidates")
        gens = [loop_holonomy(conn, lp.axis, lp.base) for lp in conn.loops]
        if not gens:
            gens = [np.eye(r, dtype=complex)]
        atoms = _dedupe(_joint_invariant_spaces(gens, r, tol))
        bases: list[Array] = []
        for size in range(1, len(atoms) + 1):
            for combo in itertools.combinations(atoms, size):
                dim = sum(b.shape[1] for b in combo)
                if 1 <= dim <= r - 1:
                    bases.append(_orth(np.concatenate(combo, axis=1)))
        bases = _dedupe(bases)
    else:
        bases = [np.asarray(b, dtype=complex).reshape(r, -1) for b in candidates]

    k_field = np.asarray(reference, dtype=complex)
    specs: list[SubBundleSpec] = []
    order = _transport_order(conn)
    for b in bases:
        frames = _transport_frames(conn, b, order)
        proj = _metric_projection(frames, k_field)
        res = _invariance_residual(conn, proj)
        specs.append(
            SubBundleSpec(
                projection=proj, rank=b.shape[1], invariance_residual=res, base_basis=b
            )
        )
    specs.sort(key=lambda s: (s.rank, s.invariance_residual))
    return specs


def _transport_order(conn: FlatConnection) -> list[tuple[int, int, int]]:
    """Spanning-tree traversal (site, axis, source) from site 0 over forward/backward edges."""
    dom = conn.domain
    seen = np.zeros(dom.n_sites, dtype=bool)
    seen[0] = True
    frontier = [0]
    order: list[tuple[int, int, int]] = []
    while frontier:
        nxt: list[int] = []
        for x in frontier:
            for a in range(dom.dim):
                y = int(dom.neighbors[a, 0, x])
                if y >= 0 and not seen[y]:
                    seen[y] = True
                    order.append((y, a, x))
                    nxt.append(y)
                z = int(dom.neighbors[a, 1, x])
                if z >= 0 and not seen[z]:
                    seen[z] = True
                    order.append((z, ~a, x))
                    nxt.append(z)
        frontier = nxt
    return order


def _transport_frames(conn: FlatConnection, base_basis: Array, order) -> Array:
    n = conn.domain.n_sites
    k = base_basis.shape[1]
    frames = np.zeros((n, conn.rank, k), dtype=complex)
    frames[0] = base_basis
    for site, axis, src in order:
        if axis >= 0:
            frames[site] = conn.transport[axis, src] @ frames[src]
        else:
            frames[site] = conn.transport_inv[~axis, site] @ frames[src]
    return frames


def _metric_projection(frames: Array, k_field: Array) -> Array:
    gram = la.dagger(frames) @ k_field @ frames
    return frames @ np.linalg.solve(gram, la.dagger(frames) @ k_field)


def _invariance_residual(conn: FlatConnection, proj: Array) -> float:
    """Span-leakage defect max_e ||(1 - pi(x)) U^{-1} pi(y) U pi(x)||.

    Vanishes exactly for invariant sub-bundles even with non-unitary
    transports; the raw difference U^{-1} pi(y) U - pi(x) would be of order
    the spacing whenever the orthogonal complement is not also invariant.
    """
    worst = 0.0
    r = proj.shape[-1]
    eye = np.eye(r, dtype=complex)
    for a in range(conn.domain.dim):
        tails, heads = conn.edge_sites(a)
        moved = conn.transport_inv[a, tails] @ proj[heads] @ conn.transport[a, tails]
        leak = (eye - proj[tails]) @ moved @ proj[tails]
        worst = max(worst, float(np.max(la.specnorm(leak), initial=0.0)))
    return worst
