"""Two-stage desk-scale training by plain fixed-step gradient descent.

Stage 1 feeds every frame the bypass decision ``(keep_lane, current)`` so
only the control and residual heads learn to imitate the expert.  Stage 2
switches on the real arbitrated decisions and fine-tunes everything,
including the decision tables and the velocity-bias gain.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np

from .conditioning import (
    ACTIONS, EGO_HEADING, NAVS, SPEEDS, TRAINABLE, Batch, ConditioningConfig, PlannerWeights,
    loss_and_grad, scene_features,
)
from .kbm import KbmParams
from .predicates import Action, Speed
from .rules import ArbitrationConfig, TemplateGenerator, decide
from .scenarios import Scenario, expert_local

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    stage1_steps: int = 600
    stage2_steps: int = 1000
    lr: float = 0.004
    g_lr_scale: float = 0.002  # the bias gain sees a much smaller step than the network
    clip_norm: float | None = 10.0  # rescale the network gradient when its global norm exceeds this
    use_smoothing: bool = True

    def __post_init__(self):
        if self.stage1_steps < 0 or self.stage2_steps < 0 or self.lr < 0:
            raise ValueError("step counts and learning rate must be non-negative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")


def build_batch(suite: list[Scenario], arb: ArbitrationConfig, bypass: bool) -> Batch:
    """One training row per frame; ``bypass`` replaces every decision by (keep_lane, current)."""
    feats, v0s, navs, acts, spds, experts = [], [], [], [], [], []
    gen = TemplateGenerator(arb)
    for scn in suite:
        for i in range(scn.n_frames):
            facts = scn.facts(i)
            if bypass:
                action, speed = Action.KEEP_LANE, Speed.CURRENT
            else:
                dec, _ = decide(facts, gen, arb)
                action, speed = dec.action, dec.speed
            feats.append(scene_features(facts))
            v0s.append(facts.ego.speed)
            navs.append(NAVS.index(facts.ego.nav))
            acts.append(ACTIONS.index(action))
            spds.append(SPEEDS.index(speed))
            experts.append(expert_local(scn, i, EGO_HEADING))
    return Batch(np.array(feats), np.array(v0s), np.array(navs), np.array(acts), np.array(spds), np.array(experts))


def gd_steps(weights: PlannerWeights, batch: Batch, cfg: ConditioningConfig, p: KbmParams,
             steps: int, tc: TrainConfig, stage: int, curve: list, train_g: bool):
    for k in range(steps):
        report, grads = loss_and_grad(weights, batch, cfg, p)
        if not math.isfinite(report.total):
            raise DivergenceError(f"stage {stage} step {k}: total loss is {report.total}")
        curve.append((stage, k, report))
        scale = 1.0
        if tc.clip_norm is not None:
            norm = math.sqrt(sum(float(np.sum(grads[n] ** 2)) for n in TRAINABLE if n != "g_scale"))
            if norm > tc.clip_norm:
                scale = tc.clip_norm / norm
        for name in TRAINABLE:
            if name == "g_scale":
                if train_g:
                    weights.g_scale = weights.g_scale - tc.lr * tc.g_lr_scale * grads[name]
                continue
            setattr(weights, name, getattr(weights, name) - tc.lr * scale * grads[name])
    return weights


def train(suite: list[Scenario], cfg: ConditioningConfig, p: KbmParams, tc: TrainConfig,
          arb: ArbitrationConfig | None = None, init: PlannerWeights | None = None):
    """Returns ``(weights, curve)``; ``curve`` holds ``(stage, step, LossReport)`` per update."""
    arb = arb or ArbitrationConfig()
    if not tc.use_smoothing:
        cfg = ConditioningConfig(**{**cfg.__dict__, "w_smoothing": 0.0})
    weights = init.copy() if init is not None else PlannerWeights.init(cfg, p)
    curve: list = []
    if tc.stage1_steps:
        b1 = build_batch(suite, arb, bypass=True)
        log.info("stage 1: %d frames, %d steps", len(b1), tc.stage1_steps)
        gd_steps(weights, b1, cfg, p, tc.stage1_steps, tc, 1, curve, train_g=False)
    if tc.stage2_steps:
        b2 = build_batch(suite, arb, bypass=False)
        log.info("stage 2: %d frames, %d steps", len(b2), tc.stage2_steps)
        gd_steps(weights, b2, cfg, p, tc.stage2_steps, tc, 2, curve, train_g=True)
    return weights, curve


def curve_csv(curve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "step", "total", "imitation_l2", "anisotropic_residual", "control_smoothing",
                "action_classification", "mode_classification"])
    for stage, step, r in curve:
        w.writerow([stage, step] + [f"{v:.9g}" for v in (r.total, r.imitation_l2, r.anisotropic_residual,
                                                         r.control_smoothing, r.action_classification,
                                                         r.mode_classification)])
    return buf.getvalue()
