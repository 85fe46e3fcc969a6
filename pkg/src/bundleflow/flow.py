"""Metric heat flow drivers: free and Dirichlet harmonic/Poisson solves.

The update is multiplicative, ``H <- H exp(2 dt Q)`` with Q the tension field,
so Hermitian positivity survives any step size. Because Q is the exact
gradient of the edge energy, an accepted step decreases the energy to first
order by ``2 ||Q||^2 dt``; the adaptive controller rejects steps that raise
the energy beyond roundoff slack and halves the step size instead.

Verdicts: ``converged`` when the residual (full tension for harmonic runs,
its trace-free part for Poisson runs) drops below tolerance; ``diverged``
when sup ||log h|| stays beyond the divergence threshold with the residual
still above tolerance for a sustained run of steps, the numerical signature
of monodromy that admits no harmonic metric; ``max_steps`` otherwise.
"""
from __future__ import annotations

import time as _time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import linalg as la
from .bundle import (
    FlatConnection,
    codifferential,
    connection_from_transports,
    covariant_d,
    split_metric,
    tension,
)
from .mesh import LatticeDomain, sublevel_domain

Array = np.ndarray

HISTORY_COLUMNS = (
    "step",
    "time",
    "dt",
    "energy",
    "residual_sup",
    "residual_l2",
    "tracefree_residual_sup",
    "logdet_min",
    "logdet_max",
    "sigma_to_reference",
)


@dataclass
class SolveOptions:
    tolerance: float = 1e-8
    max_steps: int = 200_000
    dt: float | None = None                 # None: 0.2 * min(spacing)^2
    dt_policy: str = "adaptive"             # "adaptive" | "fixed"
    dt_growth: float = 1.2
    dt_growth_every: int = 20
    divergence_threshold: float = 50.0
    divergence_patience: int = 100
    boundary: str = "none"                  # "none" | "dirichlet"
    det_normalize: bool = True              # Poisson runs: enforce det(K^{-1}H) = 1

    def validate(self, domain: LatticeDomain) -> None:
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.divergence_threshold <= self.tolerance:
            raise ValueError("divergence threshold must exceed the tolerance scale")
        if self.dt_policy not in ("adaptive", "fixed"):
            raise ValueError(f"unknown dt policy {self.dt_policy!r}")
        if self.boundary not in ("none", "dirichlet"):
            raise ValueError(f"unknown boundary condition {self.boundary!r}")
        if self.boundary == "dirichlet" and not domain.boundary.any():
            raise ValueError("dirichlet boundary condition needs a domain with boundary")


@dataclass
class FlowState:
    time: float
    metric: Array
    dt: float
    step: int = 0
    accepted_since_growth: int = 0
    divergence_streak: int = 0
    history: list[tuple] = field(default_factory=list)


@dataclass
class RunReport:
    verdict: str                    # converged | diverged | max_steps
    steps: int
    time: float
    metric: Array
    residual_sup: float
    tracefree_residual_sup: float
    energy: float
    sigma_sup: float
    logh_sup: float
    history: Array                  # rows aligned with accepted steps, HISTORY_COLUMNS
    poisson_function: Array | None = None
    notes: list[str] = field(default_factory=list)
    wall_seconds: float = 0.0


def default_dt(domain: LatticeDomain) -> float:
    return 0.2 * min(domain.spacings) ** 2


def _diagnostics(conn: FlatConnection, h_field: Array, reference: Array):
    sm = split_metric(conn, h_field)
    t_field = la.selfadjoint_part(
        codifferential(conn, h_field, sm.psi, transports=sm.transport), h_field
    )
    dom = conn.domain
    site_norm = np.sqrt(np.maximum(np.einsum("nij,nji->n", t_field, t_field).real, 0.0))
    tf = la.tracefree(t_field)
    tf_norm = np.sqrt(np.maximum(np.einsum("nij,nji->n", tf, tf).real, 0.0))
    active = dom.interior_mask() if dom.boundary.any() else np.ones(dom.n_sites, dtype=bool)
    res_sup = float(site_norm[active].max())
    res_l2 = float(np.sqrt(np.sum(dom.volume[active] * site_norm[active] ** 2)))
    tf_sup = float(tf_norm[active].max())
    eigs = la.rel_eigvals(reference, h_field)
    logs = np.log(eigs)
    logdet = logs.sum(axis=1)
    logh_sup = float(np.sqrt((logs ** 2).sum(axis=1)).max())
    sigma = (
        np.einsum("nii->n", np.linalg.solve(reference, h_field)).real
        + np.einsum("nii->n", np.linalg.solve(h_field, reference)).real
        - 2.0 * conn.rank
    )
    en = 0.0
    for a in range(dom.dim):
        dens = np.einsum("nij,nji->n", sm.psi[a], sm.psi[a]).real
        en += float(np.sum(dom.edge_weight[a] * dom.metric_weight[a] * dens))
    return {
        "tension": t_field,
        "energy": en,
        "residual_sup": res_sup,
        "residual_l2": res_l2,
        "tracefree_sup": tf_sup,
        "logdet_min": float(logdet.min()),
        "logdet_max": float(logdet.max()),
        "logh_sup": logh_sup,
        "sigma_sup": float(sigma.max()),
    }


def flow_step(
    conn: FlatConnection,
    state: FlowState,
    dt: float,
    boundary_values: Array | None = None,
    reference: Array | None = None,
) -> FlowState:
    """One explicit multiplicative step; appends the accepted diagnostics row.

    Standalone utility around the same update the drivers use. ``reference``
    defaults to the current metric for the log/sigma diagnostics.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    ref = state.metric if reference is None else reference
    diag = _diagnostics(conn, state.metric, ref)
    new_metric = la.metric_exp_update(state.metric, diag["tension"], 2.0 * dt)
    if boundary_values is not None:
        mask = conn.domain.boundary
        new_metric[mask] = boundary_values[mask]
    out = replace(state, time=state.time + dt, metric=new_metric, dt=dt, step=state.step + 1)
    diag_new = _diagnostics(conn, new_metric, ref)
    out.history = state.history + [
        (
            out.step,
            out.time,
            dt,
            diag_new["energy"],
            diag_new["residual_sup"],
            diag_new["residual_l2"],
            diag_new["tracefree_sup"],
            diag_new["logdet_min"],
            diag_new["logdet_max"],
            diag_new["sigma_sup"],
        )
    ]
    return out


def _drive(
    conn: FlatConnection,
    reference: Array,
    opts: SolveOptions,
    poisson: bool,
    init: FlowState | None = None,
    callback: Callable[[FlowState, dict], None] | None = None,
) -> RunReport:
    t0 = _time.perf_counter()
    opts.validate(conn.domain)
    la.check_metric(reference)
    dom = conn.domain
    bc = reference if opts.boundary == "dirichlet" else None

    if init is None:
        state = FlowState(time=0.0, metric=np.asarray(reference, dtype=complex).copy(),
                          dt=opts.dt if opts.dt is not None else default_dt(dom))
    else:
        state = init
        if state.dt <= 0:
            state.dt = opts.dt if opts.dt is not None else default_dt(dom)

    diag = _diagnostics(conn, state.metric, reference)
    if not state.history:
        state.history.append(_row(state, state.dt, diag))
        if callback is not None:
            callback(state, diag)

    def residual(d: dict) -> float:
        return d["tracefree_sup"] if poisson else d["residual_sup"]

    verdict = "max_steps"
    notes: list[str] = []
    while state.step < opts.max_steps:
        if residual(diag) < opts.tolerance:
            verdict = "converged"
            break
        trial = la.metric_exp_update(state.metric, diag["tension"], 2.0 * state.dt)
        if bc is not None:
            trial[dom.boundary] = bc[dom.boundary]
        diag_trial = _diagnostics(conn, trial, reference)
        slack = 1e-12 * (1.0 + diag["energy"])
        if opts.dt_policy == "adaptive" and diag_trial["energy"] > diag["energy"] + slack:
            state.dt *= 0.5
            state.accepted_since_growth = 0
            if state.dt < 1e-300:
                notes.append("step size collapsed; aborting")
                break
            continue
        dt_used = state.dt
        state.metric = trial
        state.time += dt_used
        state.step += 1
        diag = diag_trial
        state.history.append(_row(state, dt_used, diag))
        if (
            diag["logh_sup"] > opts.divergence_threshold
            and residual(diag) > opts.tolerance
        ):
            state.divergence_streak += 1
        else:
            state.divergence_streak = 0
        if opts.dt_policy == "adaptive":
            state.accepted_since_growth += 1
            if state.accepted_since_growth >= opts.dt_growth_every:
                state.dt *= opts.dt_growth
                state.accepted_since_growth = 0
        if callback is not None:
            callback(state, diag)
        if state.divergence_streak >= opts.divergence_patience:
            verdict = "diverged"
            break
    else:
        verdict = "max_steps"
    if residual(diag) < opts.tolerance:
        verdict = "converged"

    h_final = state.metric
    c_field = None
    if poisson and verdict == "converged" and opts.det_normalize:
        h_final = _det_normalize(conn.rank, reference, h_final)
        if bc is not None:
            h_final[dom.boundary] = bc[dom.boundary]
        diag = _diagnostics(conn, h_final, reference)
        state.metric = h_final
    if poisson:
        t_field = diag["tension"]
        c_field = (np.einsum("nii->n", t_field) / conn.rank).real

    return RunReport(
        verdict=verdict,
        steps=state.step,
        time=state.time,
        metric=h_final,
        residual_sup=diag["residual_sup"],
        tracefree_residual_sup=diag["tracefree_sup"],
        energy=diag["energy"],
        sigma_sup=diag["sigma_sup"],
        logh_sup=diag["logh_sup"],
        history=np.array(state.history, dtype=float),
        poisson_function=c_field,
        notes=notes,
        wall_seconds=_time.perf_counter() - t0,
    )


def _row(state: FlowState, dt: float, diag: dict) -> tuple:
    return (
        state.step,
        state.time,
        dt,
        diag["energy"],
        diag["residual_sup"],
        diag["residual_l2"],
        diag["tracefree_sup"],
        diag["logdet_min"],
        diag["logdet_max"],
        diag["sigma_sup"],
    )


def _det_normalize(rank: int, reference: Array, h_field: Array) -> Array:
    """Conformal correction H -> H e^f with f = log det(H^{-1}K)/rank.

    Leaves the harmonic part untouched, pins det(K^{-1}H) = 1 at every site,
    and on Dirichlet runs preserves the boundary values (f vanishes there).
    """
    eigs = la.rel_eigvals(reference, h_field)
    f = -np.log(eigs).sum(axis=1) / rank
    return h_field * np.exp(f)[:, None, None]


def solve_harmonic(
    conn: FlatConnection,
    reference: Array,
    opts: SolveOptions | None = None,
    init: FlowState | None = None,
    callback=None,
) -> RunReport:
    """Flow from H(0) = K until the tension drops below tolerance."""
    return _drive(conn, reference, opts or SolveOptions(), poisson=False, init=init,
                  callback=callback)


def solve_poisson(
    conn: FlatConnection,
    reference: Array,
    opts: SolveOptions | None = None,
    init: FlowState | None = None,
    callback=None,
) -> RunReport:
    """Flow until the trace-free tension vanishes, then normalize det(K^{-1}H) = 1.

    The residual trace part becomes the scalar Poisson function, reported per
    site in ``poisson_function``.
    """
    return _drive(conn, reference, opts or SolveOptions(), poisson=True, init=init,
                  callback=callback)


@dataclass
class ExhaustionMonitor:
    level: float
    n_sites: int
    sup_log_h: float
    dh_l2: float
    core_metric: Array    # metric restricted to the first interior band


def exhaustion_solve(
    conn: FlatConnection,
    reference: Array,
    levels: list[float],
    opts: SolveOptions | None = None,
) -> tuple[list[RunReport], list[ExhaustionMonitor]]:
    """Dirichlet Poisson solves on the nested sublevel bands, with monitors.

    For each level the sublevel sub-domain inherits the transports and the
    reference metric, the boundary data is K on the sublevel boundary, and the
    solve enforces det h = 1. Reported per level: sup ||log h_s||, the L2 norm
    of the flat covariant derivative of h_s over the sublevel, and the metric
    on the first interior band for Cauchy-in-level inspection.
    """
    base = opts or SolveOptions()
    reports: list[RunReport] = []
    monitors: list[ExhaustionMonitor] = []
    for level in sorted(levels):
        sub, idx_map = sublevel_domain(conn.domain, level)
        sub_transport = conn.transport[:, idx_map].copy()
        eye = np.eye(conn.rank, dtype=complex)
        for a in range(sub.dim):
            sub_transport[a, sub.neighbors[a, 0] < 0] = eye
        loops = tuple(lp for lp in conn.loops if sub.periodic[lp.axis])
        sub_conn = connection_from_transports(sub, sub_transport, loops)
        sub_ref = np.asarray(reference, dtype=complex)[idx_map]
        sub_opts = replace(base, boundary="dirichlet")
        report = solve_poisson(sub_conn, sub_ref, sub_opts)
        reports.append(report)

        h_rel = np.linalg.solve(sub_ref, report.metric)
        logs = np.log(la.rel_eigvals(sub_ref, report.metric))
        sup_log = float(np.sqrt((logs ** 2).sum(axis=1)).max())
        dh = covariant_d(sub_conn, h_rel)
        dh_l2 = 0.0
        for a in range(sub.dim):
            dens = la.endo_norm2(dh[a], sub_ref)
            dh_l2 += float(np.sum(sub.edge_weight[a] * dens))
        core = _first_interior_band(sub)
        monitors.append(
            ExhaustionMonitor(
                level=level,
                n_sites=sub.n_sites,
                sup_log_h=sup_log,
                dh_l2=float(np.sqrt(dh_l2)),
                core_metric=report.metric[core],
            )
        )
    return reports, monitors


def _first_interior_band(domain: LatticeDomain) -> Array:
    interior = domain.interior_mask()
    levels = np.unique(domain.exhaustion[interior])
    band = levels.min() if levels.size else 0.0
    return np.flatnonzero(interior & (np.abs(domain.exhaustion - band) < 0.5))


def determinant_flow_check(
    conn: FlatConnection, reference: Array, dt: float, steps: int = 5
) -> float:
    """Max defect of d/dt log det h = 2 tr(tension) over a few flow steps."""
    h_field = np.asarray(reference, dtype=complex).copy()
    worst = 0.0
    for _ in range(steps):
        t_field = tension(conn, h_field)
        before = np.log(la.rel_eigvals(reference, h_field)).sum(axis=1)
        h_field = la.metric_exp_update(h_field, t_field, 2.0 * dt)
        after = np.log(la.rel_eigvals(reference, h_field)).sum(axis=1)
        rate = (after - before) / dt
        worst = max(worst, float(np.abs(rate - 2.0 * np.einsum("nii->n", t_field).real).max()))
    return worst
