"""Structured lattice domains: circle, interval, torus, rectangle, annulus.

All base metrics are flat. Sites are indexed in C order over the axis grids
(``idx = i0 * n1 + i1`` in two dimensions). Each site carries a trapezoidal
volume weight and, per axis, a forward edge to its ``+1`` neighbour where one
exists; bounded axes drop the wrap-around edge and flag their end sites as
boundary. Annulus and rectangle domains carry an exhaustion level per site
(nested sublevel bands used by the exhaustion solver); it is zero elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import kahan_sum

Array = np.ndarray

_KINDS = {
    "circle": (1, (True,)),
    "interval": (1, (False,)),
    "torus": (2, (True, True)),
    "rectangle": (2, (False, False)),
    "annulus": (2, (True, False)),
}


@dataclass(frozen=True)
class LatticeDomain:
    kind: str
    dim: int
    sites_per_axis: tuple[int, ...]
    lengths: tuple[float, ...]
    spacings: tuple[float, ...]
    periodic: tuple[bool, ...]
    n_sites: int
    neighbors: Array          # (dim, 2, n) int; [axis, {0:+,1:-}, site] -> site or -1
    volume: Array             # (n,) trapezoidal cell volumes
    edge_weight: Array        # (dim, n) quadrature weight of the forward edge, 0 if absent
    metric_weight: Array      # (dim, n) inverse-metric factor per forward edge (flat: ones)
    boundary: Array           # (n,) bool
    exhaustion: Array         # (n,) float, >= 0
    complex_structure: bool

    def coords(self) -> Array:
        """Site positions, shape (n, dim)."""
        grids = [self.spacings[a] * np.arange(self.sites_per_axis[a]) for a in range(self.dim)]
        mesh = np.meshgrid(*grids, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def interior_mask(self) -> Array:
        return ~self.boundary

    def has_forward_edge(self, axis: int) -> Array:
        return self.neighbors[axis, 0] >= 0


def build_domain(
    kind: str,
    sites: int | tuple[int, ...],
    lengths: float | tuple[float, ...],
    complex_structure: bool | None = None,
) -> LatticeDomain:
    if kind not in _KINDS:
        raise ValueError(f"unknown domain kind {kind!r}")
    dim, periodic = _KINDS[kind]
    sites_t = (sites,) if isinstance(sites, int) else tuple(int(s) for s in sites)
    lengths_t = (float(lengths),) if isinstance(lengths, (int, float)) else tuple(
        float(x) for x in lengths
    )
    if len(sites_t) != dim or len(lengths_t) != dim:
        raise ValueError(f"kind {kind!r} needs {dim} axes, got {len(sites_t)} / {len(lengths_t)}")
    if any(s < 3 for s in sites_t):
        raise ValueError("need at least 3 sites per axis")
    if any(l <= 0 for l in lengths_t):
        raise ValueError("axis lengths must be positive")

    spacings = tuple(
        lengths_t[a] / sites_t[a] if periodic[a] else lengths_t[a] / (sites_t[a] - 1)
        for a in range(dim)
    )
    n = int(np.prod(sites_t))
    idx = np.arange(n).reshape(sites_t)

    neighbors = np.full((dim, 2, n), -1, dtype=np.int64)
    for a in range(dim):
        plus = np.roll(idx, -1, axis=a)
        minus = np.roll(idx, 1, axis=a)
        if not periodic[a]:
            sl_last = [slice(None)] * dim
            sl_last[a] = sites_t[a] - 1
            plus[tuple(sl_last)] = -1
            sl_first = [slice(None)] * dim
            sl_first[a] = 0
            minus[tuple(sl_first)] = -1
        neighbors[a, 0] = plus.ravel()
        neighbors[a, 1] = minus.ravel()

    # Trapezoidal volumes: half weight at each bounded-axis end.
    vol = np.ones(sites_t)
    for a in range(dim):
        w = np.full(sites_t[a], spacings[a])
        if not periodic[a]:
            w[0] *= 0.5
            w[-1] *= 0.5
        shape = [1] * dim
        shape[a] = sites_t[a]
        vol = vol * w.reshape(shape)
    volume = vol.ravel()

    cell = float(np.prod(spacings))
    edge_weight = np.zeros((dim, n))
    metric_weight = np.ones((dim, n))
    for a in range(dim):
        edge_weight[a, neighbors[a, 0] >= 0] = cell

    boundary = np.zeros(n, dtype=bool)
    for a in range(dim):
        if not periodic[a]:
            boundary |= neighbors[a, 0] < 0
            boundary |= neighbors[a, 1] < 0

    exhaustion = np.zeros(n)
    if kind == "annulus":
        radial = np.arange(sites_t[1], dtype=float)
        exhaustion = np.broadcast_to(radial, sites_t).ravel().copy()
    elif kind == "rectangle":
        bands = np.zeros(sites_t)
        for a in range(dim):
            c = 0.5 * (sites_t[a] - 1)
            d = np.abs(np.arange(sites_t[a]) - c)
            shape = [1] * dim
            shape[a] = sites_t[a]
            bands = np.maximum(bands, d.reshape(shape))
        bands -= bands.min()
        exhaustion = bands.ravel()

    if complex_structure is None:
        complex_structure = dim == 2
    if complex_structure and dim != 2:
        raise ValueError("complex structure requires a two-dimensional domain")

    return LatticeDomain(
        kind=kind,
        dim=dim,
        sites_per_axis=sites_t,
        lengths=lengths_t,
        spacings=spacings,
        periodic=periodic,
        n_sites=n,
        neighbors=neighbors,
        volume=volume,
        edge_weight=edge_weight,
        metric_weight=metric_weight,
        boundary=boundary,
        exhaustion=exhaustion,
        complex_structure=bool(complex_structure),
    )


def laplacian(domain: LatticeDomain, field: Array) -> Array:
    """Second-order flat Laplacian, sign convention Δ cos(kx) = -k² cos(kx).

    Boundary sites get a one-sided second-difference value along bounded axes;
    those entries are usable only as extrapolations (the ``boundary`` mask
    flags them) and Dirichlet solvers never read them.
    """
    f = np.asarray(field)
    if f.shape[0] != domain.n_sites:
        raise ValueError("field size does not match domain")
    out = np.zeros_like(f, dtype=np.result_type(f.dtype, float))
    shaped = f.reshape(domain.sites_per_axis + f.shape[1:])
    for a in range(domain.dim):
        h2 = domain.spacings[a] ** 2
        if domain.periodic[a]:
            term = (np.roll(shaped, -1, axis=a) + np.roll(shaped, 1, axis=a) - 2 * shaped) / h2
        else:
            term = np.zeros_like(shaped, dtype=out.dtype)
            n_a = domain.sites_per_axis[a]
            mid = [slice(None)] * domain.dim
            mid[a] = slice(1, n_a - 1)
            lo = [slice(None)] * domain.dim
            hi = [slice(None)] * domain.dim

            def ax(i):
                s = [slice(None)] * domain.dim
                s[a] = i
                return tuple(s)

            term[tuple(mid)] = (
                shaped[ax(slice(2, n_a))] + shaped[ax(slice(0, n_a - 2))] - 2 * shaped[tuple(mid)]
            ) / h2
            if n_a >= 4:
                term[ax(0)] = (
                    2 * shaped[ax(0)] - 5 * shaped[ax(1)] + 4 * shaped[ax(2)] - shaped[ax(3)]
                ) / h2
                term[ax(n_a - 1)] = (
                    2 * shaped[ax(n_a - 1)]
                    - 5 * shaped[ax(n_a - 2)]
                    + 4 * shaped[ax(n_a - 3)]
                    - shaped[ax(n_a - 4)]
                ) / h2
            else:
                term[ax(0)] = (shaped[ax(0)] - 2 * shaped[ax(1)] + shaped[ax(2)]) / h2
                term[ax(n_a - 1)] = term[ax(0)]
            del lo, hi
        out += term.reshape(out.shape)
    return out


def integrate(domain: LatticeDomain, field: Array, mask: Array | None = None) -> float:
    """Volume-weighted compensated sum, optionally over a sublevel mask."""
    f = np.asarray(field, dtype=float)
    if f.shape != (domain.n_sites,):
        raise ValueError("field size does not match domain")
    w = domain.volume
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (domain.n_sites,) or mask.dtype != bool:
            raise ValueError("mask does not match domain")
        w = np.where(mask, w, 0.0)
    return kahan_sum(w * f)


def sublevel_mask(domain: LatticeDomain, level: float) -> Array:
    return domain.exhaustion <= level + 1e-9


def sublevel_domain(domain: LatticeDomain, level: float) -> tuple[LatticeDomain, Array]:
    """The sublevel band as a domain of the same family, plus a parent-index map.

    Only annulus and rectangle domains carry nontrivial exhaustion levels. The
    returned index map sends sub-domain sites to parent sites; the sub-domain
    keeps the parent spacings.
    """
    if domain.kind == "annulus":
        s = int(round(level))
        if s < 2 or s > domain.sites_per_axis[1] - 1:
            if s < 2:
                raise ValueError("sublevel has empty interior")
            raise ValueError("sublevel exceeds the domain")
        n_theta = domain.sites_per_axis[0]
        h_r = domain.spacings[1]
        sub = build_domain(
            "annulus", (n_theta, s + 1), (domain.lengths[0], s * h_r),
            complex_structure=domain.complex_structure,
        )
        keep = sublevel_mask(domain, s)
        idx_map = np.flatnonzero(keep)
        return sub, idx_map
    if domain.kind == "rectangle":
        keep = sublevel_mask(domain, level)
        shaped = keep.reshape(domain.sites_per_axis)
        ax_keep = [np.flatnonzero(shaped.any(axis=1 - a)) for a in range(2)]
        counts = tuple(len(k) for k in ax_keep)
        if min(counts) < 3:
            raise ValueError("sublevel has empty interior")
        sub = build_domain(
            "rectangle",
            counts,
            tuple((counts[a] - 1) * domain.spacings[a] for a in range(2)),
            complex_structure=domain.complex_structure,
        )
        grid = np.arange(domain.n_sites).reshape(domain.sites_per_axis)
        idx_map = grid[np.ix_(ax_keep[0], ax_keep[1])].ravel()
        return sub, idx_map
    raise ValueError(f"domain kind {domain.kind!r} has no exhaustion structure")
