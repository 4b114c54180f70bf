"""Synthesize a desk dataset, train, infer on the validation split and score it.

    python scripts/desk_experiment.py --out runs/desk --pairs 200 --seed 0
"""

import argparse
import sys
from pathlib import Path

from semgraph_reg import cli

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.yaml"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--pairs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=None)
    args = ap.parse_args(argv)

    base = ["--config", str(CONFIG), "--set", f"train.seed={args.seed}", "-v"]
    if args.epochs is not None:
        base += ["--set", f"train.epochs={args.epochs}", "--set", f"train.patience={min(args.epochs, 10)}"]
    data, run = args.out / "data", args.out / "run"
    steps = [
        ["synth", "--out", data, "--pairs", args.pairs, "--seed", 1000 * args.seed],
        ["train", "--data", data, "--out", run],
        ["infer", "--data", data, "--out", run, "--checkpoint", run / "checkpoints" / "best.ckpt", "--split", "val"],
        ["eval", "--data", data, "--poses", run / "poses" / "pred_poses.txt", "--out", run],
    ]
    for step in steps:
        code = cli.run([*base, *map(str, step)])
        if code:
            print(f"{step[0]} failed with exit code {code}", file=sys.stderr)
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
