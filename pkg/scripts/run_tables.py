"""State-channel and node-feature ablation grids, printed as mean top-1/top-5."""
import argparse
from dataclasses import replace

from contactcast.config import load_config
from contactcast.eval_harness import run_table4, run_table5
from contactcast.forecaster import build_corpus


def summarize(rep):
    for arm in dict.fromkeys(r["ablation"] for r in rep.rows):
        print(f"  {arm:<22} top1={rep.mean('top1', ablation=arm):.3f} top5={rep.mean('top5', ablation=arm):.3f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--csv-prefix", help="also write <prefix>_table4.csv and <prefix>_table5.csv")
    args = ap.parse_args()
    cfg = load_config(args.config)
    seeds = range(cfg.seed, cfg.seed + args.seeds)
    t4 = run_table4(build_corpus(cfg.corpus), cfg.forecaster, seeds, jobs=args.jobs)
    print("state channels")
    summarize(t4)
    corpus = build_corpus(replace(cfg.corpus, noun_variants=cfg.feature_ablation_variants))
    t5 = run_table5(corpus, cfg.forecaster, seeds, jobs=args.jobs)
    print("node features")
    summarize(t5)
    if args.csv_prefix:
        for name, rep in (("table4", t4), ("table5", t5)):
            with open(f"{args.csv_prefix}_{name}.csv", "w") as f:
                f.write(rep.to_csv())


if __name__ == "__main__":
    main()
