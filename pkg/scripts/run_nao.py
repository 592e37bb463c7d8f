"""Next-active-object localization: full model vs no contact-map history vs centre prior."""
import argparse

from contactcast.config import load_config
from contactcast.eval_harness import run_nao_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--csv")
    args = ap.parse_args()
    cfg = load_config(args.config)
    rep = run_nao_suite(cfg.nao, range(cfg.seed, cfg.seed + args.seeds), jobs=args.jobs)
    for cond in ("ours", "without_cam", "center_bias"):
        print(f"{cond:<12} jaccard={rep.mean('value', condition=cond, task='nao_localization'):.3f}")
    print(f"classification accuracy={rep.mean('value', task='nao_classification'):.3f}")
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(rep.to_csv())


if __name__ == "__main__":
    main()
