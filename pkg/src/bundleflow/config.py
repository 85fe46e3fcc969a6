"""Run configuration: a YAML file with nested blocks, validated into dataclasses.

Monodromy matrices are written as nested arrays of ``[re, im]`` pairs in
row-major order. The reference-metric block selects identity, a smooth
diagonal profile, a seeded smooth random metric, or a checkpoint file.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from . import linalg as la
from .bundle import FlatConnection, from_monodromy
from .checkpoint import load_checkpoint
from .flow import SolveOptions
from .mesh import LatticeDomain, build_domain

SCENARIOS = (
    "solve_harmonic",
    "solve_poisson",
    "dirichlet",
    "exhaustion",
    "stability",
    "higgs_roundtrip",
)


class ConfigError(ValueError):
    """Malformed run configuration; the message names the offending field."""


@dataclass
class DomainConfig:
    kind: str
    sites: tuple[int, ...]
    lengths: tuple[float, ...]
    complex_structure: bool | None = None


@dataclass
class BundleConfig:
    rank: int
    monodromy: list[np.ndarray] = field(default_factory=list)


@dataclass
class MetricConfig:
    kind: str = "identity"            # identity | diagonal | random_smooth | checkpoint
    amplitudes: list[float] | None = None
    modes: list[int] | None = None
    amplitude: float = 0.3
    path: str | None = None


@dataclass
class OutputConfig:
    directory: str = "out"
    csv_cadence: int = 1
    checkpoint_cadence: int = 0


@dataclass
class ExhaustionConfig:
    levels: list[float] = field(default_factory=list)


@dataclass
class RunConfig:
    scenario: str
    domain: DomainConfig
    bundle: BundleConfig
    reference_metric: MetricConfig
    solver: SolveOptions
    output: OutputConfig
    exhaustion: ExhaustionConfig


def _need(block: dict, key: str, where: str):
    if key not in block:
        raise ConfigError(f"missing field {where}.{key}")
    return block[key]


def _parse_matrix(entry, rank: int, where: str) -> np.ndarray:
    arr = np.asarray(entry, dtype=float)
    if arr.shape != (rank, rank, 2):
        raise ConfigError(
            f"{where}: expected a {rank}x{rank} matrix of [re, im] pairs, got shape {arr.shape}"
        )
    return arr[..., 0] + 1j * arr[..., 1]


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config does not parse as YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> RunConfig:
    scenario = _need(raw, "scenario", "")
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario: unknown scenario {scenario!r}")

    dom_block = _need(raw, "domain", "")
    kind = _need(dom_block, "kind", "domain")
    sites = tuple(int(s) for s in np.atleast_1d(_need(dom_block, "sites", "domain")))
    lengths = tuple(float(x) for x in np.atleast_1d(_need(dom_block, "lengths", "domain")))
    domain = DomainConfig(
        kind=kind, sites=sites, lengths=lengths,
        complex_structure=dom_block.get("complex"),
    )

    bun_block = _need(raw, "bundle", "")
    rank = int(_need(bun_block, "rank", "bundle"))
    mono_raw = bun_block.get("monodromy", [])
    dim_loops = {"circle": 1, "annulus": 1, "torus": 2, "interval": 0, "rectangle": 0}.get(kind, 0)
    if len(mono_raw) != dim_loops:
        raise ConfigError(
            f"bundle.monodromy: kind {kind!r} needs {dim_loops} generator(s), got {len(mono_raw)}"
        )
    monodromy = [
        _parse_matrix(m, rank, f"bundle.monodromy[{i}]") for i, m in enumerate(mono_raw)
    ]
    bundle_cfg = BundleConfig(rank=rank, monodromy=monodromy)

    met_block = raw.get("reference_metric", {"kind": "identity"})
    met_kind = met_block.get("kind", "identity")
    if met_kind not in ("identity", "diagonal", "random_smooth", "checkpoint"):
        raise ConfigError(f"reference_metric.kind: unknown kind {met_kind!r}")
    metric_cfg = MetricConfig(
        kind=met_kind,
        amplitudes=met_block.get("amplitudes"),
        modes=met_block.get("modes"),
        amplitude=float(met_block.get("amplitude", 0.3)),
        path=met_block.get("path"),
    )
    if met_kind == "checkpoint" and not metric_cfg.path:
        raise ConfigError("reference_metric.path: required for checkpoint metrics")

    sol_block = raw.get("solver", {})
    solver = SolveOptions(
        tolerance=float(sol_block.get("tolerance", 1e-8)),
        max_steps=int(sol_block.get("max_steps", 200_000)),
        dt=(float(sol_block["dt"]) if "dt" in sol_block else None),
        dt_policy=sol_block.get("dt_policy", "adaptive"),
        divergence_threshold=float(sol_block.get("divergence_threshold", 50.0)),
        boundary=sol_block.get("boundary", "none"),
        det_normalize=bool(sol_block.get("det_normalize", True)),
    )
    if scenario == "dirichlet":
        solver.boundary = "dirichlet"

    out_block = raw.get("output", {})
    output = OutputConfig(
        directory=str(out_block.get("directory", "out")),
        csv_cadence=int(out_block.get("csv_cadence", 1)),
        checkpoint_cadence=int(out_block.get("checkpoint_cadence", 0)),
    )

    exh_block = raw.get("exhaustion", {})
    exhaustion = ExhaustionConfig(
        levels=[float(x) for x in exh_block.get("levels", [])]
    )
    if scenario == "exhaustion" and not exhaustion.levels:
        raise ConfigError("exhaustion.levels: required for the exhaustion scenario")

    return RunConfig(
        scenario=scenario,
        domain=domain,
        bundle=bundle_cfg,
        reference_metric=metric_cfg,
        solver=solver,
        output=output,
        exhaustion=exhaustion,
    )


def make_domain(cfg: RunConfig) -> LatticeDomain:
    try:
        return build_domain(
            cfg.domain.kind, cfg.domain.sites, cfg.domain.lengths,
            complex_structure=cfg.domain.complex_structure,
        )
    except ValueError as exc:
        raise ConfigError(f"domain: {exc}") from exc


def make_connection(cfg: RunConfig, domain: LatticeDomain) -> FlatConnection:
    try:
        return from_monodromy(domain, cfg.bundle.monodromy)
    except ValueError as exc:
        raise ConfigError(f"bundle.monodromy: {exc}") from exc


def make_reference_metric(
    cfg: RunConfig, domain: LatticeDomain, seed: int | None = None
) -> np.ndarray:
    r = cfg.bundle.rank
    mc = cfg.reference_metric
    n = domain.n_sites
    if mc.kind == "identity":
        return np.broadcast_to(np.eye(r, dtype=complex), (n, r, r)).copy()
    if mc.kind == "diagonal":
        amps = mc.amplitudes if mc.amplitudes is not None else [0.3] * r
        modes = mc.modes if mc.modes is not None else [1] * r
        if len(amps) != r or len(modes) != r:
            raise ConfigError("reference_metric: need one amplitude and mode per diagonal entry")
        x = domain.coords()
        out = np.zeros((n, r, r), dtype=complex)
        for j in range(r):
            out[:, j, j] = np.exp(amps[j] * np.cos(2.0 * np.pi * modes[j] * x[:, 0]
                                                   / domain.lengths[0]) * (
                np.cos(2.0 * np.pi * modes[j] * x[:, 1] / domain.lengths[1])
                if domain.dim == 2 else 1.0))
        return out
    if mc.kind == "random_smooth":
        return smooth_random_metric(domain, r, seed if seed is not None else 0, mc.amplitude)
    if mc.kind == "checkpoint":
        ck = load_checkpoint(mc.path)
        if ck.rank != r or ck.sites != n:
            raise ConfigError("reference_metric: checkpoint rank/sites do not match the domain")
        return ck.metric
    raise ConfigError(f"reference_metric.kind: unknown kind {mc.kind!r}")


def smooth_random_metric(
    domain: LatticeDomain, rank: int, seed: int, amplitude: float = 0.3, modes: int = 2
) -> np.ndarray:
    """exp of a seeded low-frequency Hermitian field; resolution-consistent.

    Coefficients are drawn once from the seed, independent of the grid size,
    so the same seed samples the same smooth field at every resolution. On
    bounded axes the profiles use half-period cosines, keeping them smooth up
    to the boundary.
    """
    rng = np.random.default_rng(seed)
    x = domain.coords()
    n = domain.n_sites
    a_field = np.zeros((n, rank, rank), dtype=complex)
    herm_basis = []
    for i in range(rank):
        e = np.zeros((rank, rank), dtype=complex)
        e[i, i] = 1.0
        herm_basis.append(e)
    for i in range(rank):
        for j in range(i + 1, rank):
            e = np.zeros((rank, rank), dtype=complex)
            e[i, j] = e[j, i] = 1.0
            herm_basis.append(e)
            f = np.zeros((rank, rank), dtype=complex)
            f[i, j] = 1.0j
            f[j, i] = -1.0j
            herm_basis.append(f)
    for b in herm_basis:
        for kx in range(modes + 1):
            wave = np.ones(n)
            for a in range(domain.dim):
                t = x[:, a] / domain.lengths[a]
                if domain.periodic[a]:
                    c, s = rng.normal(size=2)
                    wave = wave * (c * np.cos(2 * np.pi * kx * t) + s * np.sin(2 * np.pi * kx * t))
                else:
                    c = rng.normal()
                    wave = wave * (c * np.cos(np.pi * kx * t))
            a_field += wave[:, None, None] * b
    norm = max(float(np.max(np.abs(a_field))), 1e-12)
    a_field *= amplitude / norm
    w, v = np.linalg.eigh(la.hermitize(a_field))
    return la.hermitize((v * np.exp(w)[..., None, :]) @ la.dagger(v))
