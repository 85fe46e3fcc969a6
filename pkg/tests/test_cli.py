import numpy as np
import pytest
import yaml

from bundleflow.checkpoint import load_checkpoint
from bundleflow.cli import run_scenario
from bundleflow.config import ConfigError, load_config

GEN2 = [[[2.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.5, 0.0]]]


def write_config(path, **overrides):
    cfg = {
        "scenario": "solve_harmonic",
        "domain": {"kind": "circle", "sites": [24], "lengths": [1.0]},
        "bundle": {"rank": 2, "monodromy": [GEN2]},
        "reference_metric": {"kind": "identity"},
        "solver": {"tolerance": 1e-8},
        "output": {"directory": "out"},
    }
    for key, val in overrides.items():
        if isinstance(val, dict):
            cfg.setdefault(key, {}).update(val)
        else:
            cfg[key] = val
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_harmonic_scenario_converges(tmp_path):
    cfg = write_config(tmp_path / "run.yaml")
    out = tmp_path / "o"
    assert run_scenario(cfg, out_dir=out) == 0
    report = (out / "report.txt").read_text()
    assert "converged" in report
    assert (out / "run.csv").exists()
    assert (out / "final.ckpt").exists()


def test_jordan_scenario_diverges(tmp_path):
    cfg = write_config(
        tmp_path / "run.yaml",
        bundle={"rank": 2, "monodromy": [[[[1.0, 0.0], [1.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]]]},
        solver={"tolerance": 1e-30, "divergence_threshold": 18.0, "max_steps": 20000},
    )
    out = tmp_path / "o"
    assert run_scenario(cfg, out_dir=out) == 2
    assert "diverged" in (out / "report.txt").read_text()


def test_missing_monodromy_is_input_error(tmp_path):
    cfg = write_config(tmp_path / "run.yaml", bundle={"rank": 2, "monodromy": []})
    assert run_scenario(cfg, out_dir=tmp_path / "o") == 1


def test_config_validation_names_fields(tmp_path):
    path = write_config(tmp_path / "run.yaml", scenario="warp")
    with pytest.raises(ConfigError, match="scenario"):
        load_config(path)
    path = write_config(tmp_path / "r2.yaml", exhaustion={"levels": []}, scenario="exhaustion")
    with pytest.raises(ConfigError, match="levels"):
        load_config(path)


def test_identical_runs_identical_csv(tmp_path):
    cfg = write_config(
        tmp_path / "run.yaml",
        reference_metric={"kind": "random_smooth", "amplitude": 0.25},
        solver={"tolerance": 1e-6},
    )
    o1, o2 = tmp_path / "a", tmp_path / "b"
    assert run_scenario(cfg, out_dir=o1, seed=9) == 0
    assert run_scenario(cfg, out_dir=o2, seed=9) == 0
    assert (o1 / "run.csv").read_bytes() == (o2 / "run.csv").read_bytes()


def test_resume_reproduces_unsplit_run(tmp_path):
    cfg = write_config(
        tmp_path / "run.yaml",
        scenario="solve_poisson",
        domain={"kind": "circle", "sites": [24], "lengths": [1.0]},
        reference_metric={"kind": "random_smooth", "amplitude": 0.3},
        solver={"tolerance": 1e-6},
        output={"directory": "out", "checkpoint_cadence": 100},
    )
    full, part = tmp_path / "full", tmp_path / "part"
    assert run_scenario(cfg, out_dir=full, seed=4) == 0
    mid = full / "step00000100.ckpt"
    assert mid.exists()
    assert run_scenario(cfg, out_dir=part, seed=4, resume_path=mid) == 0
    a = load_checkpoint(full / "final.ckpt")
    b = load_checkpoint(part / "final.ckpt")
    assert a.step == b.step
    assert np.abs(a.metric - b.metric).max() <= 1e-12
    assert "resumed from step 100" in (part / "report.txt").read_text()


def test_resume_wrong_rank_rejected(tmp_path):
    cfg = write_config(
        tmp_path / "run.yaml",
        output={"directory": "out", "checkpoint_cadence": 50},
        reference_metric={"kind": "random_smooth", "amplitude": 0.3},
        solver={"tolerance": 1e-6},
    )
    full = tmp_path / "full"
    assert run_scenario(cfg, out_dir=full, seed=4) == 0
    rank1 = write_config(
        tmp_path / "r1.yaml",
        bundle={"rank": 1, "monodromy": [[[[2.0, 0.0]]]]},
    )
    assert run_scenario(rank1, out_dir=tmp_path / "x",
                        resume_path=full / "step00000050.ckpt") == 1


def test_stability_scenario_writes_table(tmp_path):
    cfg = write_config(
        tmp_path / "run.yaml",
        scenario="stability",
        bundle={"rank": 2, "monodromy": [[[[4.0, 0.0], [0.0, 0.0]],
                                          [[0.0, 0.0], [0.25, 0.0]]]]},
    )
    out = tmp_path / "o"
    assert run_scenario(cfg, out_dir=out) == 0
    report = (out / "report.txt").read_text()
    assert "verdict" in report and "sub-bundles" in report


def test_exhaustion_scenario(tmp_path):
    cfg = write_config(
        tmp_path / "run.yaml",
        scenario="exhaustion",
        domain={"kind": "annulus", "sites": [16, 9], "lengths": [6.283185307179586, 1.0]},
        reference_metric={"kind": "diagonal", "amplitudes": [0.2, -0.2], "modes": [1, 1]},
        exhaustion={"levels": [4, 6, 8]},
    )
    out = tmp_path / "o"
    assert run_scenario(cfg, out_dir=out) == 0
    assert "sup|log h|" in (out / "report.txt").read_text()


def test_higgs_roundtrip_scenario(tmp_path):
    gen_b = [[[3.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.0 / 3.0, 0.0]]]
    cfg = write_config(
        tmp_path / "run.yaml",
        scenario="higgs_roundtrip",
        domain={"kind": "torus", "sites": [12, 12],
                "lengths": [6.283185307179586, 6.283185307179586]},
        bundle={"rank": 2, "monodromy": [GEN2, gen_b]},
    )
    out = tmp_path / "o"
    assert run_scenario(cfg, out_dir=out) == 0
    report = (out / "report.txt").read_text()
    assert "eigenvalue drift" in report
    ck = load_checkpoint(out / "final.ckpt")
    assert ck.theta is not None
