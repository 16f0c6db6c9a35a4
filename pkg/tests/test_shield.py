import csv

import numpy as np
import pytest

from shieldsynth.dynamics import IntervalBox
from shieldsynth.lqr import ControllerFamily
from shieldsynth.reach import evaluate_selector
from shieldsynth.shield import (
    Case,
    HorizonExceeded,
    NotVerified,
    ShieldConfig,
    region_subset,
    run_shielded,
    shield_action,
)
from shieldsynth.sim import make_controller

from conftest import TWO_PHASE_GAINS, two_phase_spec


@pytest.fixture(scope="module")
def cfg(verified_pendulum):
    spec, family, res = verified_pendulum
    return ShieldConfig(family, res.phi_opt, spec)


def test_region_subset():
    w = IntervalBox.symmetric(0.1, 2)
    W = IntervalBox.symmetric(0.2, 2)
    assert region_subset([0, 0], w, [0, 0], W)
    assert region_subset([0.1, -0.1], w, [0, 0], W)
    assert not region_subset([0.11, 0], w, [0, 0], W)
    assert not region_subset([0, 0], W, [0, 0], w)
    assert region_subset([0, 0], w, [0, 0], w)


def test_config_validation(verified_pendulum):
    spec, family, res = verified_pendulum
    with pytest.raises(ValueError):
        ShieldConfig(family, res.phi_opt, spec.replace(noise_runtime=spec.noise_verified))
    with pytest.raises(ValueError):
        ShieldConfig(ControllerFamily((np.zeros((2, 2)),), 100), res.phi_opt, spec)
    tight = spec.replace(safe_box=IntervalBox(spec.init_box.lo - 1e-3, spec.init_box.hi + 1e-3))
    with pytest.raises(NotVerified):
        ShieldConfig(family, res.phi_opt, tight)


def test_non_interference(cfg):
    K = cfg.gain(0)
    rng = np.random.default_rng(0)
    for t in (0, 99, 100, 499):
        s = rng.uniform(-0.3, 0.3, 2)
        a, d = shield_action(cfg, t, s, cfg.gain(t) @ s)
        assert d.case is Case.SAFE_REGION and not d.intervened
        assert np.array_equal(a, cfg.gain(t) @ s)
    ctrl = make_controller("family", cfg.spec, cfg.family.gains, cfg.selector)
    run = run_shielded(cfg, ctrl, 200, seed=0)
    assert run.interventions == 0 and run.violating_episodes == 0
    assert run.case_counts[Case.SAFE_REGION.value] == 200 * cfg.spec.horizon_M
    assert K.shape == (1, 2)


def test_horizon(cfg):
    with pytest.raises(HorizonExceeded):
        shield_action(cfg, cfg.spec.horizon_M, [0.0, 0.0], [0.0])
    with pytest.raises(HorizonExceeded):
        shield_action(cfg, -1, [0.0, 0.0], [0.0])
    with pytest.raises(ValueError):
        shield_action(cfg, 0, [np.nan, 0.0], [0.0])


def test_intervention(cfg):
    s = np.array([0.2, -0.1])
    a, d = shield_action(cfg, 3, s, [1e3])
    assert d.case is Case.INTERVENED and d.intervened
    assert np.allclose(a, cfg.gain(3) @ s)
    assert d.proposed[0] == 1e3


def test_contained_in_init(cfg):
    spec = cfg.spec
    A, B = spec.dynamics.matrices(0)
    gap = (spec.noise_verified.hi - spec.noise_runtime.hi)[1]
    room = spec.init_box.hi[1] - spec.noise_runtime.hi[1]
    assert room > gap
    # at the origin the verified next state is 0; push the velocity between the two limits
    shift = 0.5 * (gap + room)
    a_nn = np.array([shift / (spec.dt * B[1, 0])])
    a, d = shield_action(cfg, 250, np.zeros(2), a_nn)
    assert d.case is Case.INIT and not d.intervened
    assert np.array_equal(a, a_nn)


def test_init_case_disabled_for_time_varying():
    spec = two_phase_spec()
    cfg = ShieldConfig(ControllerFamily(tuple(TWO_PHASE_GAINS), spec.interval_k), (0, 1), spec)
    assert not cfg.init_case_enabled
    # region inside the initial box but far from the verified one
    a, d = shield_action(cfg, 50, [0.0], [40.0])
    assert d.case is Case.INTERVENED and a[0] == 0.0


@pytest.mark.parametrize("kind", ["random", "constant", "adversarial"])
def test_shielded_runs_are_safe(cfg, kind):
    ctrl = make_controller(kind, cfg.spec, cfg.family.gains, cfg.selector, seed=1)
    run = run_shielded(cfg, ctrl, 1000, seed=2)
    assert run.violating_episodes == 0 and run.violating_states == 0
    assert sum(run.case_counts.values()) == 1000 * cfg.spec.horizon_M


def test_unshielded_baseline_violates(cfg):
    ctrl = make_controller("random", cfg.spec, cfg.family.gains, cfg.selector, seed=1)
    run = run_shielded(cfg, ctrl, 1000, seed=2, shielded=False)
    assert run.violating_episodes > 0 and run.interventions == 0


def test_run_deterministic_and_logged(cfg, tmp_path):
    ctrl = lambda: make_controller("adversarial", cfg.spec, cfg.family.gains, cfg.selector, seed=4)
    a = run_shielded(cfg, ctrl(), 50, seed=9, log_episodes=2, batch=20)
    b = run_shielded(cfg, ctrl(), 50, seed=9, log_episodes=2, batch=20)
    assert a.summary() == b.summary()
    assert len(a.log) == 2 * cfg.spec.horizon_M
    path = tmp_path / "log.csv"
    a.write_log_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == len(a.log)
    assert {r["case"] for r in rows} <= {c.value for c in Case}
    assert sum(int(r["intervened"]) for r in rows) == sum(r["case"] == Case.INTERVENED.value for r in a.log)
    assert '"episodes": 50' in a.to_json()
    with pytest.raises(ValueError):
        run_shielded(cfg, ctrl(), 0)
    with pytest.raises(ValueError):
        run_shielded(cfg, ctrl(), 5).write_log_csv(path)


def test_zero_noise_own_law_stays_in_boxes(verified_pendulum):
    spec, family, res = verified_pendulum
    quiet = spec.replace(noise_runtime=IntervalBox.point(np.zeros(2)))
    cfg = ShieldConfig(family, res.phi_opt, quiet)
    ctrl = make_controller("family", quiet, family.gains, res.phi_opt)
    run = run_shielded(cfg, ctrl, 20, seed=0, log_episodes=20)
    bounds = evaluate_selector(quiet, family.gains, list(res.phi_opt))
    assert run.interventions == 0
    for row in run.log:
        if row["t"] >= 1:
            assert bounds[row["t"] - 1].box.contains(np.array(row["state"]))


def test_decisions_deterministic(cfg):
    s, a = np.array([0.1, -0.2]), np.array([3.0])
    first = shield_action(cfg, 42, s, a)[1]
    for _ in range(3):
        d = shield_action(cfg, 42, s, a)[1]
        assert d.case is first.case and np.array_equal(d.chosen, first.chosen)
