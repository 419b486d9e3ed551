"""Train the default planner on the built-in ``train`` suite and save a checkpoint."""

import argparse
import logging
import time

from nsplan.conditioning import ConditioningConfig, PlannerWeights, save_checkpoint
from nsplan.kbm import KbmParams
from nsplan.scenarios import build_suite, named_suite
from nsplan.training import TrainConfig, curve_csv, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="weights.npz")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--no-smoothing", action="store_true")
    ap.add_argument("--curve", help="optional loss-curve CSV")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg, p = ConditioningConfig(seed=args.seed), KbmParams()
    tc = TrainConfig(use_smoothing=not args.no_smoothing)
    suite = build_suite(named_suite("train", args.seed), p)
    t = time.time()
    w, curve = train(suite, cfg, p, tc, init=PlannerWeights.init(cfg, p, seed=args.seed))
    save_checkpoint(args.out, w, {"conditioning": cfg.__dict__, "training": tc.__dict__})
    if args.curve:
        with open(args.curve, "w") as fh:
            fh.write(curve_csv(curve))
    last = curve[-1][2]
    print(f"{len(curve)} steps in {time.time() - t:.0f}s, final loss {last.total:.4f} "
          f"(imitation {last.imitation_l2:.4f}) -> {args.out}")


if __name__ == "__main__":
    main()
