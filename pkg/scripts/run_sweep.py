"""Anticipation-time (or observation-ratio) sweep for every stream, with an SVG trend plot."""
import argparse

from contactcast.config import load_config
from contactcast.eval_harness import plot_sweep, run_sweep, sweep_trend
from contactcast.forecaster import build_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--mode", choices=("anticipation", "prediction"), default="anticipation")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="sweep")
    args = ap.parse_args()
    cfg = load_config(args.config)
    rep = run_sweep(build_corpus(cfg.corpus), cfg.forecaster, range(cfg.seed, cfg.seed + args.seeds),
                    mode=args.mode, jobs=args.jobs)
    with open(f"{args.out}.csv", "w") as f:
        f.write(rep.to_csv())
    plot_sweep(rep, f"{args.out}.svg")
    values = sorted({r["tau_a_or_p"] for r in rep.rows})
    print("value  " + "  ".join(f"{s:>10}" for s in ("graph", "appearance", "fused")))
    for v in values:
        cells = [rep.mean("top1", ablation=s, tau_a_or_p=v) for s in ("graph", "appearance", "fused")]
        print(f"{v:<6} " + "  ".join(f"{c:>10.3f}" for c in cells))
    for s in ("graph", "appearance", "fused"):
        print(f"spearman({s}) = {sweep_trend(rep, s):+.3f}")


if __name__ == "__main__":
    main()
