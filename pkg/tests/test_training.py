import numpy as np
import pytest

from nsplan.conditioning import ACTIONS, SPEEDS, TRAINABLE, ConditioningConfig, PlannerWeights
from nsplan.harness import Pipeline, evaluate
from nsplan.kbm import KbmParams
from nsplan.predicates import Action, Speed
from nsplan.rules import ArbitrationConfig
from nsplan.scenarios import ScenarioSpec, build_scenario, build_suite, case_study_scenario
from nsplan.training import DivergenceError, TrainConfig, build_batch, curve_csv, train


@pytest.fixture(scope="module")
def road():
    return [build_scenario("empty_road", seed=s) for s in range(6)]


def test_stage1_loss_strictly_decreases(road):
    _, curve = train(road, ConditioningConfig(), KbmParams(), TrainConfig(stage1_steps=11, stage2_steps=0))
    im = [r.imitation_l2 for _, _, r in curve]
    assert all(b < a for a, b in zip(im, im[1:]))
    assert curve[10][2].total < curve[0][2].total


def test_zero_lr_keeps_init(road):
    cfg, p = ConditioningConfig(), KbmParams()
    init = PlannerWeights.init(cfg, p, seed=4)
    w, curve = train(road, cfg, p, TrainConfig(stage1_steps=3, stage2_steps=3, lr=0.0), init=init)
    assert len(curve) == 6
    for name in TRAINABLE:
        np.testing.assert_array_equal(getattr(w, name), getattr(init, name))


def test_training_is_deterministic(road):
    tc = TrainConfig(stage1_steps=5, stage2_steps=5)
    a, ca = train(road, ConditioningConfig(), KbmParams(), tc)
    b, cb = train(road, ConditioningConfig(), KbmParams(), tc)
    assert a.digest() == b.digest()
    assert curve_csv(ca) == curve_csv(cb)


def test_init_not_mutated(road):
    init = PlannerWeights.init(ConditioningConfig(), KbmParams())
    before = init.digest()
    train(road, ConditioningConfig(), KbmParams(), TrainConfig(stage1_steps=2, stage2_steps=2), init=init)
    assert init.digest() == before


def test_divergence_detected(road):
    with pytest.raises(DivergenceError), np.errstate(all="ignore"):
        train(road, ConditioningConfig(), KbmParams(), TrainConfig(stage1_steps=50, stage2_steps=0, lr=1e6,
                                                                      clip_norm=None))


def test_stage1_bypasses_decisions():
    suite = [case_study_scenario()]
    b1 = build_batch(suite, ArbitrationConfig(), bypass=True)
    b2 = build_batch(suite, ArbitrationConfig(), bypass=False)
    assert set(b1.action_idx) == {ACTIONS.index(Action.KEEP_LANE)}
    assert set(b1.speed_idx) == {SPEEDS.index(Speed.CURRENT)}
    assert b2.action_idx[0] == ACTIONS.index(Action.YIELD) and b2.speed_idx[0] == SPEEDS.index(Speed.ZERO)
    np.testing.assert_array_equal(b1.expert, b2.expert)


def test_no_smoothing_zeroes_that_term(road):
    _, curve = train(road, ConditioningConfig(), KbmParams(),
                     TrainConfig(stage1_steps=2, stage2_steps=0, use_smoothing=False))
    r, cfg = curve[0][2], ConditioningConfig()
    assert r.control_smoothing > 0
    parts = (cfg.w_imitation * r.imitation_l2 + r.anisotropic_residual
             + cfg.w_classification * r.action_classification + cfg.w_mode * r.mode_classification)
    assert r.total == pytest.approx(parts, rel=1e-9)


@pytest.mark.parametrize("kw", [dict(lr=-1.0), dict(stage1_steps=-1), dict(clip_norm=0.0)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


@pytest.mark.slow
def test_straight_road_imitation():
    train_set = build_suite([ScenarioSpec("empty_road", {}, 300 + k) for k in range(10)])
    held_out = build_suite([ScenarioSpec("empty_road", {}, 400 + k) for k in range(10)])
    w, _ = train(train_set, ConditioningConfig(), KbmParams(), TrainConfig())
    report, _ = evaluate(held_out, Pipeline(w))
    assert report.l2_at["3s"] <= 0.3
    assert report.collision_rate == 0.0
