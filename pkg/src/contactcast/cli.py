"""Command-line entry point.

Subcommands: simgen, groundtruth, graph, train, eval, ablate, gradcheck.
Every failure prints one line ``error: code=N kind=K message=...`` to stderr.

Exit codes
----------
0   success
1   check failed (gradient error above tolerance)
2   usage error (unknown subcommand or flag, bad flag value)
3   malformed config (bad JSON, unknown key, wrong type, bad seed)
4   missing input (dataset or file not found)
5   invalid data (tensor format, shape or graph errors in inputs)
70  internal error
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .annotation_flow import ContactOrderError, FlowMissingError, build_ground_truth, densify_annotations, mask_iou
from .config import ConfigError, RunConfig, dump_config, load_config
from .eval_harness import EvalReport, plot_sweep, run_nao_suite, run_sweep, run_table4, run_table5
from .forecaster import ForecastError, build_corpus, corpus_graph, run_forecast
from .neural.checkpoint import save_layers
from .numerics import SeededRng, ShapeError, TensorFormatError, write_tensor
from .scene_sim import KernelError, LayoutError, dump_json, read_clip, read_manifest, simulate_clip, write_dataset
from .state_graph import GraphError

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_CONFIG, EXIT_MISSING, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3, 4, 5, 70


class UsageError(Exception):
    pass


class MissingInputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _provenance(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.hash(), "seed": cfg.seed, "tool_version": __version__}


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# --------------------------------------------------------------------------
# subcommands


def cmd_simgen(args, cfg: RunConfig) -> int:
    scene = cfg.corpus.scene
    root = SeededRng(cfg.seed)
    clips = [simulate_clip(scene, root.split("clip", i)) for i in range(args.clips)]
    write_dataset(_out_dir(args.out), clips, dict(_provenance(cfg), n_clips=args.clips))
    (Path(args.out) / "config.json").write_text(dump_config(cfg))
    print(f"wrote {args.clips} clips to {args.out}")
    return EXIT_OK


def cmd_groundtruth(args, cfg: RunConfig) -> int:
    data = Path(args.data)
    if not (data / "manifest.json").exists():
        raise MissingInputError(f"no dataset manifest in {data}")
    out = _out_dir(args.out)
    stride = args.stride or cfg.corpus.scene.annotation_stride
    summary = []
    for name in read_manifest(data)["clips"]:
        clip = read_clip(data / name)
        dense = densify_annotations(clip.annotations.sparse(stride), clip.flow_u, clip.flow_v)
        gt = build_ground_truth(dense)
        d = _out_dir(out / name)
        write_tensor(d / "c.cft", np.stack([gt.c_l, gt.c_r], axis=1).astype(np.float32))
        write_tensor(d / "gamma.cft", np.stack([dense.gamma_l, dense.gamma_r], axis=1).astype(np.uint8))
        write_tensor(d / "psi.cft", np.stack([dense.psi_l, dense.psi_r], axis=1).astype(np.uint8))
        truth = clip.annotations
        kept = set(truth.sparse(stride).annotated_frames)
        ious = [mask_iou(getattr(dense, m)[t], getattr(truth, m)[t])
                for t in range(truth.n_frames) if t not in kept
                for m in ("gamma_l", "gamma_r", "psi_l", "psi_r")]
        summary.append({"clip": name, "mean_iou": float(np.mean(ious)) if ious else 1.0})
    dump_json(out / "groundtruth.json", dict(_provenance(cfg), stride=stride, clips=summary))
    print(f"wrote ground truth for {len(summary)} clips to {out}")
    return EXIT_OK


def cmd_graph(args, cfg: RunConfig) -> int:
    out = _out_dir(args.out)
    corpus = build_corpus(cfg.corpus)
    graph = corpus_graph(corpus, cfg.forecaster)
    graph.save(out / "graph.json")
    doc = json.loads((out / "graph.json").read_text())
    doc["provenance"] = _provenance(cfg)
    (out / "graph.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(f"graph: {graph.n_states} states, {len(graph.action_nodes)} actions -> {out / 'graph.json'}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    out = _out_dir(args.out)
    corpus = build_corpus(cfg.corpus)
    res = run_forecast(corpus, cfg.forecaster, cfg.seed, streams="all")
    prov = _provenance(cfg)
    save_layers(out / "graph_stream", res.stream.layers, prov)
    save_layers(out / "appearance_stream", res.appearance.layers, prov)
    save_layers(out / "fusion", res.fusion.layers, prov)
    dump_json(out / "metrics.json", dict(prov, metrics=res.metrics, graph_loss=res.graph_loss,
                                         appearance_loss=res.appearance_loss, fusion_loss=res.fusion_loss))
    (out / "config.json").write_text(dump_config(cfg))
    fc = cfg.forecaster
    rep = EvalReport(fc.mode, config_hash=prov["config_hash"])
    for stream in ("graph", "appearance", "fused"):
        rep.add(mode=fc.mode, tau_a_or_p=fc.tau_a if fc.mode == "anticipation" else fc.p, ablation=stream,
                top1=res.metrics[f"{stream}_top1"], top5=res.metrics[f"{stream}_top5"], epoch=fc.epochs,
                seed=cfg.seed, config_hash=prov["config_hash"], tool_version=__version__)
    (out / "metrics.csv").write_text(rep.to_csv())
    for k in sorted(res.metrics):
        print(f"{k} {res.metrics[k]:.4f}")
    return EXIT_OK


def _stamp(rep: EvalReport, cfg: RunConfig) -> EvalReport:
    rep.config_hash = cfg.hash()
    for r in rep.rows:
        r["config_hash"] = rep.config_hash
    return rep


def _seeds(cfg: RunConfig, n: int | None):
    return [cfg.seed + i for i in range(cfg.n_seeds if n is None else n)]


def cmd_eval(args, cfg: RunConfig) -> int:
    out = _out_dir(args.out)
    seeds = _seeds(cfg, args.seeds)
    if args.task == "nao":
        rep = run_nao_suite(cfg.nao, seeds, jobs=args.jobs)
    else:
        rep = run_sweep(build_corpus(cfg.corpus), cfg.forecaster, seeds, mode=args.task, jobs=args.jobs)
    rep.check_ranges()
    _stamp(rep, cfg)
    (out / "report.csv").write_text(rep.to_csv())
    if args.plot and args.task != "nao":
        plot_sweep(rep, out / "trend.svg")
    print(f"wrote {len(rep.rows)} rows to {out / 'report.csv'}")
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    seeds = _seeds(cfg, args.seeds)
    if args.grid == "table4":
        rep = run_table4(build_corpus(cfg.corpus), cfg.forecaster, seeds, jobs=args.jobs)
    else:
        corpus = build_corpus(replace(cfg.corpus, noun_variants=cfg.feature_ablation_variants))
        rep = run_table5(corpus, cfg.forecaster, seeds, jobs=args.jobs)
    out.write_text(_stamp(rep, cfg).to_csv())
    for r in rep.rows:
        print(f"{r['ablation']} seed={r['seed']} top1={r['top1']:.4f} top5={r['top5']:.4f}")
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .neural.gradcheck import TOLERANCE, graph_stream_check, predictor_checks, run_layer_checks

    seeds = range(cfg.seed, cfg.seed + args.seeds)
    worst = run_layer_checks(seeds)
    for s in seeds:
        for part in (graph_stream_check(s), predictor_checks(s) if args.models else {}):
            for k, v in part.items():
                worst[k] = max(worst.get(k, 0.0), v)
    failed = False
    for name in sorted(worst):
        ok = worst[name] <= TOLERANCE
        failed |= not ok
        print(f"{name} {worst[name]:.3e} {'ok' if ok else 'FAIL'}")
    return EXIT_CHECK if failed else EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="run config JSON (defaults if omitted)")
    common.add_argument("--seed", type=int, help="overrides the config seed; $CF_SEED overrides both")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for per-seed work")

    p = _Parser(prog="contactcast", description="Contact-anticipation and action-forecasting pipeline.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("simgen", parents=[common], help="simulate reaching clips")
    s.add_argument("--clips", type=int, default=20)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_simgen)

    s = sub.add_parser("groundtruth", parents=[common], help="densify sparse masks and build contact maps")
    s.add_argument("--data", required=True, help="directory written by simgen")
    s.add_argument("--stride", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_groundtruth)

    s = sub.add_parser("graph", parents=[common], help="build the activity graph of the training split")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_graph)

    s = sub.add_parser("train", parents=[common], help="train both streams and the fusion head")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="anticipation/prediction sweeps or NAO localization")
    s.add_argument("--task", choices=("anticipation", "prediction", "nao"), default="anticipation")
    s.add_argument("--seeds", type=int, default=None, help="seeds per condition (config n_seeds)")
    s.add_argument("--plot", action="store_true", help="also write trend.svg")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("ablate", parents=[common], help="state-channel or node-feature ablation grid")
    s.add_argument("--grid", choices=("table4", "table5"), required=True)
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--out", required=True, help="CSV file")
    s.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--no-models", dest="models", action="store_false",
                   help="skip the composite contact-map/NAO predictor checks")
    s.set_defaults(fn=cmd_gradcheck)
    return p


def _fail(code: int, kind: str, message) -> int:
    msg = " ".join(str(message).split())
    print(f"error: code={code} kind={kind} message={msg}", file=sys.stderr)
    return code


def main(argv=None, env=None) -> int:
    env = os.environ if env is None else env
    try:
        args = build_parser().parse_args(argv)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        if getattr(args, "seeds", 1) is not None and getattr(args, "seeds", 1) < 1:
            raise UsageError("--seeds must be >= 1")
        if args.config is not None and not Path(args.config).exists():
            raise MissingInputError(f"config file {args.config} not found")
        cfg = load_config(args.config, args.seed, env)
        return args.fn(args, cfg)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (MissingInputError, FileNotFoundError) as exc:
        return _fail(EXIT_MISSING, "missing_input", exc)
    except (TensorFormatError, ShapeError, GraphError, ContactOrderError, FlowMissingError, LayoutError,
            KernelError, ForecastError) as exc:
        return _fail(EXIT_DATA, "invalid_data", exc)
    except Exception as exc:  # noqa: BLE001
        return _fail(EXIT_INTERNAL, "internal", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
