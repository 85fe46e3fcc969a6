"""Scenario runner: one config in, CSV diagnostics, a report, and checkpoints out.

Exit status: 0 for converged/completed runs, 2 for a diverged verdict, 1 for
input errors. Given a fixed thread count, identical configs reproduce
identical CSV bytes; a run resumed from a checkpoint reproduces the unsplit
run's final metric.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np


def _set_threads(n: int) -> None:
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(var, str(n))


def _fmt(x: float) -> str:
    return repr(float(x))


class _CsvWriter:
    def __init__(self, path: Path, cadence: int):
        self.path = path
        self.cadence = max(1, cadence)
        self.rows: list[str] = []

    def header(self, columns) -> None:
        self.rows.append("# bundleflow run history v1")
        self.rows.append(",".join(columns))

    def add(self, row) -> None:
        step = int(row[0])
        if step % self.cadence == 0:
            self.rows.append(",".join([str(step)] + [_fmt(v) for v in row[1:]]))

    def flush(self) -> None:
        self.path.write_text("\n".join(self.rows) + "\n", encoding="ascii", newline="\n")


def run_scenario(
    config_path,
    out_dir=None,
    resume_path=None,
    seed: int | None = None,
    threads: int | None = None,
) -> int:
    from . import analysis, hodge
    from .bundle import invariant_subbundles
    from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
    from .config import (
        ConfigError,
        load_config,
        make_connection,
        make_domain,
        make_reference_metric,
    )
    from .flow import (
        HISTORY_COLUMNS,
        FlowState,
        exhaustion_solve,
        solve_harmonic,
        solve_poisson,
    )

    try:
        cfg = load_config(config_path)
        domain = make_domain(cfg)
        conn = make_connection(cfg, domain)
        reference = make_reference_metric(cfg, domain, seed=seed)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    out = Path(out_dir) if out_dir is not None else Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    csv = _CsvWriter(out / "run.csv", cfg.output.csv_cadence)
    csv.header(HISTORY_COLUMNS)
    report_lines = [f"scenario: {cfg.scenario}"]
    notes: list[str] = []

    init_state = None
    if resume_path is not None:
        try:
            ck = load_checkpoint(resume_path)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        if ck.rank != cfg.bundle.rank or ck.sites != domain.n_sites:
            print("error: checkpoint rank/sites do not match the config", file=sys.stderr)
            return 1
        init_state = FlowState(
            time=ck.time, metric=ck.metric, dt=ck.dt, step=ck.step,
            accepted_since_growth=ck.grown, divergence_streak=ck.streak,
        )
        notes.append(f"resumed from step {ck.step} (dt policy: {cfg.solver.dt_policy})")

    ckpt_every = cfg.output.checkpoint_cadence

    def on_step(state, diag) -> None:
        csv.add(state.history[-1])
        if ckpt_every and state.step and state.step % ckpt_every == 0:
            save_checkpoint(
                out / f"step{state.step:08d}.ckpt",
                Checkpoint(
                    rank=cfg.bundle.rank, sites=domain.n_sites, time=state.time,
                    step=state.step, dt=state.dt, streak=state.divergence_streak,
                    metric=state.metric, grown=state.accepted_since_growth,
                ),
            )

    status = 0
    try:
        if cfg.scenario in ("solve_harmonic", "solve_poisson", "dirichlet"):
            solver = solve_poisson if cfg.scenario != "solve_harmonic" else solve_harmonic
            report = solver(conn, reference, cfg.solver, init=init_state, callback=on_step)
            report_lines += [
                f"verdict: {report.verdict}",
                f"steps: {report.steps}",
                f"flow time: {_fmt(report.time)}",
                f"final residual_sup: {_fmt(report.residual_sup)}",
                f"final tracefree_residual_sup: {_fmt(report.tracefree_residual_sup)}",
                f"final energy: {_fmt(report.energy)}",
                f"final sigma to reference: {_fmt(report.sigma_sup)}",
                f"final sup |log h|: {_fmt(report.logh_sup)}",
            ]
            if report.poisson_function is not None:
                report_lines.append(
                    f"poisson function sup: {_fmt(float(np.abs(report.poisson_function).max()))}"
                )
            notes.extend(report.notes)
            save_checkpoint(
                out / "final.ckpt",
                Checkpoint(
                    rank=cfg.bundle.rank, sites=domain.n_sites, time=report.time,
                    step=report.steps, dt=float(report.history[-1, 2]),
                    streak=0, metric=report.metric,
                ),
            )
            status = 2 if report.verdict == "diverged" else 0
        elif cfg.scenario == "exhaustion":
            reports, monitors = exhaustion_solve(
                conn, reference, cfg.exhaustion.levels, cfg.solver
            )
            report_lines.append("level, sites, verdict, sup|log h|, ||Dh||_L2")
            for rep, mon in zip(reports, monitors):
                report_lines.append(
                    f"  {mon.level:g}, {mon.n_sites}, {rep.verdict}, "
                    f"{_fmt(mon.sup_log_h)}, {_fmt(mon.dh_l2)}"
                )
                for row in rep.history:
                    csv.add(row)
            if any(r.verdict == "diverged" for r in reports):
                status = 2
            final = reports[-1]
            save_checkpoint(
                out / "final.ckpt",
                Checkpoint(
                    rank=cfg.bundle.rank, sites=monitors[-1].n_sites, time=final.time,
                    step=final.steps, dt=float(final.history[-1, 2]), streak=0,
                    metric=final.metric,
                ),
            )
        elif cfg.scenario == "stability":
            subs = invariant_subbundles(conn, reference)
            rep = analysis.stability_report(conn, reference, subs)
            report_lines.append(rep.to_text())
            save_checkpoint(
                out / "final.ckpt",
                Checkpoint(
                    rank=cfg.bundle.rank, sites=domain.n_sites, time=0.0, step=0,
                    dt=0.0, streak=0, metric=reference,
                ),
            )
        elif cfg.scenario == "higgs_roundtrip":
            run = solve_poisson(conn, reference, cfg.solver, callback=on_step)
            report_lines.append(f"poisson verdict: {run.verdict}")
            if run.verdict != "converged":
                status = 2 if run.verdict == "diverged" else 0
                report_lines.append("round trip aborted: no Poisson metric")
            else:
                hd = hodge.higgs_from_harmonic(
                    conn, run.metric, tension_tol=10 * cfg.solver.tolerance
                )
                res = hodge.hitchin_residuals(hd, run.metric)
                report_lines += [
                    f"holomorphy residual: {_fmt(res['holomorphy'])}",
                    f"composite curvature sup: {_fmt(res['hs_curvature_sup'])}",
                    f"contracted curvature sup: {_fmt(res['lambda_F_sup'])}",
                ]
                back = hodge.flat_from_higgs(hd, run.metric,
                                             tol=max(res["hs_curvature_sup"], 1e-12))
                report_lines.append("loop, eigenvalue drift (matched multisets)")
                from .bundle import loop_holonomy
                from .linalg import spectrum_distance

                for lp, lp_back in zip(conn.loops, back.loops):
                    drift = spectrum_distance(
                        loop_holonomy(back, lp_back.axis, lp_back.base), lp.generator
                    )
                    report_lines.append(f"  axis {lp.axis}: {_fmt(drift)}")
                save_checkpoint(
                    out / "final.ckpt",
                    Checkpoint(
                        rank=cfg.bundle.rank, sites=domain.n_sites, time=run.time,
                        step=run.steps, dt=float(run.history[-1, 2]), streak=0,
                        metric=run.metric, theta=hd.theta,
                    ),
                )
        else:  # pragma: no cover - guarded by config validation
            raise AssertionError(cfg.scenario)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    for note in notes:
        report_lines.append(f"note: {note}")
    (out / "report.txt").write_text("\n".join(report_lines) + "\n", encoding="utf-8")
    csv.flush()
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bundleflow",
        description="Metric heat flow scenarios on flat bundles over lattice domains.",
    )
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--resume", default=None, help="checkpoint to continue from")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--threads", type=int, default=1, help="BLAS/OpenMP thread count")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed for random reference metrics")
    args = parser.parse_args(argv)
    _set_threads(args.threads)
    return run_scenario(
        args.config,
        out_dir=args.out,
        resume_path=args.resume,
        seed=args.seed,
        threads=args.threads,
    )


if __name__ == "__main__":
    raise SystemExit(main())
