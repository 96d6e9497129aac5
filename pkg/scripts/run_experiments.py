"""Train a classifier and sweep gamma on every bundled scenario.

    python3 scripts/run_experiments.py --out-dir runs

Writes runs/model.bin, runs/<scenario>/gamma_<g>/... and prints one table
per scenario. Add --oracle to skip training and use the perfect classifier.
"""
import argparse
from pathlib import Path

from tapmap.classifier import CnnModel, evaluate, save_checkpoint, train
from tapmap.cli import BUNDLED, main
from tapmap.synthdata import generate_dataset


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="runs")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gammas", default="0.5,1,2")
    ap.add_argument("--oracle", action="store_true")
    return ap.parse_args()


def run():
    args = parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    who = ["--oracle"]
    if not args.oracle:
        data = generate_dataset(per_class=100, seed=args.seed)
        model, _ = train(CnnModel.create(args.seed), data, seed=args.seed)
        print(f"classifier mean class accuracy {evaluate(model, data)[1]:.4f}")
        save_checkpoint(model, out / "model.bin")
        who = ["--model", str(out / "model.bin")]
    for name in BUNDLED:
        print(f"\n{name}")
        main(["sweep", "--scenario", name, "--gammas", args.gammas, "--seed", str(args.seed),
              "--out-dir", str(out / name)] + who)


if __name__ == "__main__":
    run()
