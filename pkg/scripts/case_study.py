"""Plan the pedestrian case study (6.9 m/s, pedestrian 4.5 m ahead, TTC 0.89 s) and print its reasoning chain."""

import argparse

from nsplan.conditioning import ConditioningConfig, load_checkpoint
from nsplan.harness import Pipeline, render_frame, run_frame
from nsplan.kbm import KbmParams
from nsplan.scenarios import build_suite, case_study_scenario, named_suite
from nsplan.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--weights", help="checkpoint from train_default.py; trains one when omitted")
    args = ap.parse_args()

    cfg, p = ConditioningConfig(), KbmParams()
    if args.weights:
        w, _ = load_checkpoint(args.weights, cfg, p)
    else:
        print("training the default planner (about two minutes)...")
        w, _ = train(build_suite(named_suite("train"), p), cfg, p, TrainConfig())
    _, rec = run_frame(case_study_scenario(p), 0, Pipeline(w, p, cfg))
    print(render_frame(rec))


if __name__ == "__main__":
    main()
