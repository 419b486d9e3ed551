"""Collision, L2 and TPC on the yield suite for the full pipeline and its ablations."""

import argparse

from nsplan.conditioning import ConditioningConfig, load_checkpoint
from nsplan.harness import Ablation, Pipeline, evaluate, scenario_collision_rate
from nsplan.kbm import KbmParams
from nsplan.scenarios import build_suite, named_suite
from nsplan.training import TrainConfig, train

VARIANTS = {
    "full": Ablation(),
    "no-asp": Ablation(no_asp=True),
    "no-axioms": Ablation(no_axioms=True),
    "no-kbm-residual": Ablation(no_kbm_residual=True),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--weights", help="checkpoint from train_default.py; trains one when omitted")
    ap.add_argument("--suite", default="yield")
    args = ap.parse_args()

    cfg, p = ConditioningConfig(), KbmParams()
    if args.weights:
        w, _ = load_checkpoint(args.weights, cfg, p)
    else:
        w, _ = train(build_suite(named_suite("train"), p), cfg, p, TrainConfig())
    suite = build_suite(named_suite(args.suite), p)
    print(f"{'variant':<16} {'col/frame':>9} {'col/scn':>8} {'L2 avg':>7} {'TPC avg':>8}")
    for name, ab in VARIANTS.items():
        report, results = evaluate(suite, Pipeline(w, p, cfg, ablation=ab))
        print(f"{name:<16} {report.collision_rate:9.4f} {scenario_collision_rate(results):8.3f} "
              f"{report.l2_at['avg']:7.3f} {report.tpc_at['avg']:8.3f}")


if __name__ == "__main__":
    main()
