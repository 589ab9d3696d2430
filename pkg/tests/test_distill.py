import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from segslab.diffusion import forward_noise, linear_schedule
from segslab.distill import (DistillConfig, ViewRig, default_rig, distill, make_run_state,
                             sds_gradient, sds_gradient_x0_form, sds_step, write_asset_json,
                             write_log_csv)
from segslab.errors import InvalidInputError
from segslab.metrics import jr_analog


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 1000), st.lists(st.floats(-5, 5), min_size=6, max_size=6),
       st.floats(0.1, 3.0))
def test_sds_two_forms_agree(t, vals, w):
    sch = linear_schedule(1000)
    x0, eps, eps_hat = (np.array(vals[i:i + 2]) for i in (0, 2, 4))
    J = default_rig().jacobian("side")
    x_t = forward_noise(sch, x0, t, eps)
    a = sds_gradient(eps_hat, eps, J, w)
    b = sds_gradient_x0_form(sch, x0, x_t, t, eps_hat, J, w)
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-6)


def test_sds_matches_surrogate_loss_gradient(schedule, rig):
    # d/dtheta of (w / (2 gamma)) ||render(theta) - stopgrad(x0hat)||^2
    from segslab.diffusion import x0hat
    theta, t, eps, eps_hat = np.array([0.7, -1.3]), 400, np.array([0.2, 0.5]), np.array([-1.0, 0.3])
    J = rig.jacobian("back")
    x_t = forward_noise(schedule, rig.render(theta, "back"), t, eps)
    target = x0hat(schedule, x_t, t, eps_hat)
    g = schedule.gamma(t)

    def loss(th):
        return 0.5 / g * np.sum((rig.render(th, "back") - target) ** 2)
    h = 1e-6
    fd = np.array([(loss(theta + h * e) - loss(theta - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(sds_gradient(eps_hat, eps, J), fd, rtol=1e-6)


def test_rig_renders(rig):
    th = np.array([3.0, -3.0])
    np.testing.assert_allclose(rig.render(th, "front"), [3, -3])
    np.testing.assert_allclose(rig.render(th, "back"), [-3, 3])
    np.testing.assert_allclose(rig.render(th, "side"), [0, -3 * np.sqrt(2)], atol=1e-12)
    with pytest.raises(InvalidInputError):
        rig.render(th, "top")


def test_rig_rejects_non_orthogonal():
    with pytest.raises(InvalidInputError):
        ViewRig({"front": np.array([[2.0, 0], [0, 1]])}, {"front": np.zeros(2)})
    with pytest.raises(InvalidInputError):
        ViewRig({"front": np.eye(2)}, {"back": np.zeros(2)})


def test_consistent_object_renders_every_view_correctly(prior, rig):
    assert jr_analog([[3.0, -3.0]], rig, prior) == 0.0
    assert jr_analog([[3.0, 3.0]], rig, prior) == 1.0


@pytest.mark.parametrize("kwargs", [{"iterations": -1}, {"lr": 0.0}, {"t_min_frac": 0.0},
                                    {"t_min_frac": 0.9, "t_max_frac": 0.5},
                                    {"lambda_source": "cosine"}, {"lambda_v": -1.0}])
def test_config_rejects(kwargs, prior, schedule):
    with pytest.raises(InvalidInputError):
        distill(DistillConfig(**kwargs), prior, schedule)


def test_t_range():
    assert DistillConfig().t_range(1000) == (20, 980)
    assert DistillConfig(t_min_frac=0.001, t_max_frac=1.0).t_range(10) == (1, 10)


def test_zero_iterations(prior, schedule):
    r = distill(DistillConfig(iterations=0, seed=5), prior, schedule)
    np.testing.assert_array_equal(r.theta, r.initial_theta)
    assert r.log == [] and r.metrics["n_logged"] == 0


def test_explicit_start(prior, schedule):
    r = distill(DistillConfig(iterations=0), prior, schedule, theta0=[1.0, 2.0])
    np.testing.assert_array_equal(r.theta, [1.0, 2.0])


def test_distill_deterministic(prior, schedule):
    a = distill(DistillConfig(iterations=200, seed=3), prior, schedule)
    b = distill(DistillConfig(iterations=200, seed=3), prior, schedule)
    c = distill(DistillConfig(iterations=200, seed=4), prior, schedule)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, c.theta)


def test_guided_distill_degenerates(prior, schedule, fx, bank):
    plain = distill(DistillConfig(iterations=300, seed=2), prior, schedule)
    zero = distill(DistillConfig(iterations=300, seed=2, guidance=True, lambda_v=0.0),
                   prior, schedule, fx=fx, bank=bank)
    np.testing.assert_array_equal(plain.theta, zero.theta)
    assert [r.x0hat.tolist() for r in plain.log] == [r.x0hat.tolist() for r in zero.log]


def test_guidance_requires_bank(prior, schedule):
    with pytest.raises(InvalidInputError):
        distill(DistillConfig(iterations=50, guidance=True), prior, schedule)


def test_views_sampled_uniformly(prior, schedule):
    r = distill(DistillConfig(iterations=3000, seed=0), prior, schedule)
    counts = np.array([sum(x.view == v for x in r.log) for v in ("front", "side", "back")])
    assert np.all(np.abs(counts / 3000 - 1 / 3) < 4 * np.sqrt(2 / 9 / 3000))


def test_baseline_pseudo_targets_front_dominated(prior, schedule):
    r = distill(DistillConfig(iterations=1500, seed=0), prior, schedule)
    front = np.mean([x.classified == "front" for x in r.log])
    assert front - 1 / 3 > 3 * np.sqrt(front * (1 - front) / len(r.log))


def test_guard_discards_zero_gradient(prior, schedule, rig):
    cfg = DistillConfig(guard=True, guard_warmup=1)
    state = make_run_state(cfg)
    state.guard.threshold = 2.0   # every similarity is below this
    state.guard.log.append(0.0)
    theta = np.array([1.0, 1.0])
    grad, rec = sds_step(theta, rig, prior, schedule, None, None, cfg, state)
    assert rec.decision == "discard"
    np.testing.assert_array_equal(grad, 0.0)


def test_scheduled_lambda_logged(prior, schedule, fx, bank):
    cfg = DistillConfig(iterations=100, guidance=True, lambda_source="scheduled", seed=1)
    r = distill(cfg, prior, schedule, fx=fx, bank=bank)
    lams = [x.lambda_v for x in r.log]
    assert all(cfg.lambda_min <= v <= cfg.lambda_max for v in lams)
    assert all(np.isfinite(x.b) for x in r.log)


def test_log_and_asset_files(tmp_path, prior, schedule):
    r = distill(DistillConfig(iterations=20), prior, schedule)
    write_log_csv(tmp_path / "log.csv", r.log)
    with open(tmp_path / "log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 20
    assert list(rows[0])[:5] == ["iteration", "view", "t", "x0hat_0", "x0hat_1"]
    write_asset_json(tmp_path / "a.json", r.theta)
    got = json.loads((tmp_path / "a.json").read_text())
    assert got["schema_version"] == 1
    np.testing.assert_array_equal(got["theta"], r.theta)
