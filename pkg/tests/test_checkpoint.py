import numpy as np
import pytest

from bundleflow.checkpoint import Checkpoint, load_checkpoint, save_checkpoint


def _random_field(seed, n=7, r=2):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, r, r)) + 1j * rng.normal(size=(n, r, r))


def test_round_trip_is_bit_exact(tmp_path):
    metric = _random_field(0)
    ck = Checkpoint(
        rank=2, sites=7, time=0.1 + 1e-17, step=123, dt=1.0 / 3.0, streak=4,
        metric=metric, grown=11,
    )
    path = tmp_path / "state.ckpt"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    assert np.array_equal(back.metric, metric)
    assert back.time == ck.time and back.dt == ck.dt
    assert (back.step, back.streak, back.grown) == (123, 4, 11)
    assert back.theta is None


def test_round_trip_with_theta_block(tmp_path):
    metric = _random_field(1)
    theta = _random_field(2)
    ck = Checkpoint(rank=2, sites=7, time=2.5, step=0, dt=0.1, streak=0,
                    metric=metric, theta=theta)
    path = tmp_path / "state.ckpt"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    assert np.array_equal(back.theta, theta)


def test_malformed_header_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_text("rank two, sites 7, time 0.0\n")
    with pytest.raises(ValueError, match="header"):
        load_checkpoint(path)


def test_truncated_body_rejected(tmp_path):
    metric = _random_field(3)
    ck = Checkpoint(rank=2, sites=7, time=0.0, step=0, dt=0.1, streak=0, metric=metric)
    path = tmp_path / "state.ckpt"
    save_checkpoint(path, ck)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:4]) + "\n")
    with pytest.raises((ValueError, IndexError)):
        load_checkpoint(path)
